#pragma once

#include <cstddef>
#include <deque>
#include <memory>
#include <mutex>
#include <random>
#include <vector>

#include "emts/driving_env.hpp"
#include "emts/tree_search.hpp"

namespace emts {

/// One skill-level decision of a self-play episode.
struct ReplayEntry {
  Observation observation;
  SearchResult search;
  int chosen{0};        // index of the executed atom in search.atoms
  double reward{0.0};   // summed environment reward over the executed steps
  bool done{false};
  std::vector<Action> actions;  // low-level actions actually executed
};

/// Entries of one episode in order; the last one has done set unless the episode was cut short.
using Episode = std::vector<ReplayEntry>;

struct ReplaySample {
  std::shared_ptr<const Episode> episode;
  std::size_t index{0};
};

/// Bootstrapped n-step target: sum_{i<n} discount^i u_{t+i} + discount^n v_{t+n},
/// where v is the stored root value and everything past the episode end counts as 0.
double value_target(const Episode& episode, std::size_t t, int n, double discount);

/// Episode-granular FIFO store. Appends and samples may come from different threads.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  /// Adds a whole episode, evicting the oldest episodes while more than `capacity` entries are held.
  void add(Episode episode);
  /// Uniform draw of `count` entries (with replacement). Throws std::logic_error when empty.
  std::vector<ReplaySample> sample(std::size_t count, std::mt19937_64& rng) const;

  std::size_t size() const;
  std::size_t episodes() const;
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::deque<std::shared_ptr<const Episode>> episodes_;
  std::size_t entries_{0};
};

}  // namespace emts
