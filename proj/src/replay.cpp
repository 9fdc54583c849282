#include "emts/replay.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace emts {

double value_target(const Episode& episode, std::size_t t, int n, double discount) {
  if (t >= episode.size()) throw std::out_of_range("value_target: index past the episode");
  double target = 0.0;
  double scale = 1.0;
  for (int i = 0; i < n; ++i) {
    const std::size_t idx = t + static_cast<std::size_t>(i);
    if (idx >= episode.size()) return target;
    target += scale * episode[idx].reward;
    if (episode[idx].done) return target;
    scale *= discount;
  }
  const std::size_t boot = t + static_cast<std::size_t>(std::max(n, 0));
  if (boot < episode.size()) target += scale * episode[boot].search.root_value;
  return target;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::add(Episode episode) {
  if (episode.empty()) return;
  auto ptr = std::make_shared<const Episode>(std::move(episode));
  std::lock_guard lock(mutex_);
  entries_ += ptr->size();
  episodes_.push_back(std::move(ptr));
  while (entries_ > capacity_ && episodes_.size() > 1) {
    entries_ -= episodes_.front()->size();
    episodes_.pop_front();
  }
}

std::vector<ReplaySample> ReplayBuffer::sample(std::size_t count, std::mt19937_64& rng) const {
  std::lock_guard lock(mutex_);
  if (entries_ == 0) throw std::logic_error("ReplayBuffer::sample: buffer is empty");
  std::vector<std::size_t> ends;
  ends.reserve(episodes_.size());
  std::size_t acc = 0;
  for (const auto& ep : episodes_) {
    acc += ep->size();
    ends.push_back(acc);
  }
  std::uniform_int_distribution<std::size_t> pick(0, entries_ - 1);
  std::vector<ReplaySample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t flat = pick(rng);
    const auto it = std::upper_bound(ends.begin(), ends.end(), flat);
    const auto e = static_cast<std::size_t>(it - ends.begin());
    const std::size_t start = e == 0 ? 0 : ends[e - 1];
    out.push_back({episodes_[e], flat - start});
  }
  return out;
}

std::size_t ReplayBuffer::size() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::size_t ReplayBuffer::episodes() const {
  std::lock_guard lock(mutex_);
  return episodes_.size();
}

}  // namespace emts
