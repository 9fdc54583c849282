#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "emts/kinematics.hpp"

namespace emts {

/// A T-step action sequence together with the states it produces from `initial`.
struct Trajectory {
  VehicleState initial;
  std::vector<Action> actions;
  std::vector<VehicleState> states;

  std::size_t horizon() const { return actions.size(); }
  bool operator==(const Trajectory&) const = default;
};

/// Builds a trajectory whose states are the rollout of `actions`.
Trajectory make_trajectory(const VehicleState& initial, std::vector<Action> actions,
                           const KinematicsConfig& kin);

/// True when `states` equals the rollout of `actions` bit for bit.
bool is_kinematically_consistent(const Trajectory& traj, const KinematicsConfig& kin);

enum class PrimitiveFamily { ConstantControl, Polynomial, SplineThrough };

std::string to_string(PrimitiveFamily family);
PrimitiveFamily primitive_family_from_string(const std::string& name);

struct LibraryEntry {
  Trajectory trajectory;
  PrimitiveFamily family{PrimitiveFamily::ConstantControl};
  nlohmann::json params;  // generator parameters for this trajectory
};

struct LibraryConfig {
  int horizon{10};
  std::vector<double> initial_speeds{0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0};

  bool constant_control{true};
  std::vector<double> throttle_grid{-1.0, -0.6, -0.3, 0.0, 0.3, 0.6, 1.0};
  std::vector<double> steer_grid{-1.0, -0.6, -0.3, 0.0, 0.3, 0.6, 1.0};

  bool polynomial{true};
  std::vector<double> lateral_offsets{-3.5, -2.0, -1.0, 0.0, 1.0, 2.0, 3.5};
  std::vector<double> target_speeds{0.0, 4.0, 8.0, 12.0, 16.0, 20.0};

  bool spline{true};
  int spline_count{1200};
  int spline_knots{4};

  std::uint64_t seed{7};

  void validate() const;
};

void to_json(nlohmann::json& j, const LibraryConfig& cfg);
void from_json(const nlohmann::json& j, LibraryConfig& cfg);

/// Constant (throttle, steer) arcs; one trajectory per grid pair and initial speed.
std::vector<LibraryEntry> gen_constant_control(const std::vector<Action>& grid,
                                               const std::vector<double>& initial_speeds, int horizon,
                                               const KinematicsConfig& kin);

struct PolynomialResult {
  std::vector<LibraryEntry> entries;
  int skipped{0};  // longitudinally infeasible combinations
};

/// Quintic lateral-offset manoeuvres, converted to actions by inverting the bicycle model.
PolynomialResult gen_polynomial(const std::vector<double>& offsets,
                                const std::vector<double>& target_speeds,
                                const std::vector<double>& initial_speeds, int horizon,
                                const KinematicsConfig& kin);

/// Cubic interpolation of random throttle/steer knots spread over the horizon.
std::vector<LibraryEntry> gen_spline_through(int count, int knots,
                                             const std::vector<double>& initial_speeds, int horizon,
                                             std::uint64_t seed, const KinematicsConfig& kin);

class TrajectoryLibrary {
 public:
  TrajectoryLibrary() = default;
  explicit TrajectoryLibrary(std::vector<LibraryEntry> entries);

  const std::vector<LibraryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const Trajectory& operator[](std::size_t i) const { return entries_[i].trajectory; }
  int horizon() const;

  /// JSON-lines: an optional header line {"emts_header": {...}} followed by one trajectory per line.
  void write_jsonl(std::ostream& out, const nlohmann::json& header = nullptr) const;
  static TrajectoryLibrary read_jsonl(std::istream& in, const KinematicsConfig& kin);

 private:
  std::vector<LibraryEntry> entries_;
};

/// Union of all enabled families. Throws ConfigError when the result is empty.
TrajectoryLibrary build_library(const LibraryConfig& cfg, const KinematicsConfig& kin);

nlohmann::json trajectory_to_json(const LibraryEntry& entry);
LibraryEntry trajectory_from_json(const nlohmann::json& j);

}  // namespace emts
