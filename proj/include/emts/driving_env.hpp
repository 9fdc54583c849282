#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "emts/kinematics.hpp"
#include "emts/road.hpp"

namespace emts {

enum class Scenario { Corridor, Highway, Intersection, Roundabout };
enum class Navigation { Straight, Left, Right };
/// Route requested from intersection and roundabout scenarios. Random draws one at reset.
enum class RouteTask { Random, Straight, Left, Right, UTurn };
enum class TerminationCause { None, Success, Collision, OffRoad, Timeout };

std::string to_string(Scenario s);
std::string to_string(RouteTask t);
std::string to_string(TerminationCause c);
/// Throw std::invalid_argument on unknown names.
Scenario scenario_from_string(const std::string& s);
RouteTask route_task_from_string(const std::string& s);
TerminationCause termination_cause_from_string(const std::string& s);

/// Fixed observation layout.
namespace obs {
inline constexpr int kEgoSpeed = 0;    // v / v_max
inline constexpr int kLateral = 1;     // lateral route offset / 7 m
inline constexpr int kHeading = 2;     // heading error relative to the route / pi
inline constexpr int kProgress = 3;    // route progress fraction
inline constexpr int kVehicles = 4;    // 6 slots of [rel x / 50, rel y / 50, rel speed / v_max, lane flag]
inline constexpr int kMaxVehicles = 6;
inline constexpr int kVehicleFeatures = 4;
inline constexpr int kNavigation = kVehicles + kMaxVehicles * kVehicleFeatures;  // one-hot straight/left/right
inline constexpr int kDim = kNavigation + 3;
inline constexpr double kLateralScale = 7.0;
inline constexpr double kRange = 50.0;
}  // namespace obs

using Observation = std::vector<double>;

/// Ego speed [m/s] recovered from an observation.
inline double observed_speed(const Observation& o, double v_max = KinematicsConfig{}.v_max) {
  return o.at(obs::kEgoSpeed) * v_max;
}

struct RewardWeights {
  double driving{1.0};
  double speed{0.1};
  double jerk{0.05};
  double termination{10.0};
};

struct RewardComponents {
  double driving{0.0};      // route progress delta [m]
  double speed{0.0};        // v / v_max
  double jerk{0.0};         // -(d_throttle^2 + d_steer^2)
  double termination{0.0};  // +1 success, -1 collision/off-road, -0.5 timeout
};

struct ScenarioConfig {
  Scenario scenario{Scenario::Corridor};
  double density{0.2};
  int step_cap{0};  // 0 picks the scenario default
  std::uint64_t seed{1};
  RouteTask task{RouteTask::Random};
  RewardWeights weights{};

  void validate() const;
};

void to_json(nlohmann::json& j, const ScenarioConfig& c);
void from_json(const nlohmann::json& j, ScenarioConfig& c);

struct StepOutcome {
  Observation observation;
  double reward{0.0};
  RewardComponents components;
  bool done{false};
  TerminationCause cause{TerminationCause::None};
};

struct TrafficVehicle {
  int path{0};     // index into the layout's traffic paths
  double s{0.0};   // arc length along the path
  double v{0.0};
  double desired_speed{0.0};
  VehicleState pose;  // derived from (path, s, v)
};

/// A spawn location: path index and arc length.
struct SpawnSlot {
  int path{0};
  double s{0.0};
};

/// Static geometry of one episode.
struct ScenarioLayout {
  Polyline route;
  Navigation navigation{Navigation::Straight};
  std::vector<Polyline> lanes;          // drivable centerlines, the route included
  std::vector<Polyline> traffic_paths;  // traffic follows these and never changes lane
  std::vector<SpawnSlot> slots;
  double traffic_speed_min{6.0};
  double traffic_speed_max{10.0};
  double start_speed{8.0};
  int default_step_cap{400};
  /// Lateral offsets (relative to the route) of lanes a lane-changing driver may use.
  std::vector<double> lane_offsets{0.0};
};

/// Builds the layout for a scenario; `task` must not be Random.
ScenarioLayout make_layout(Scenario scenario, RouteTask task);

struct EnvParams {
  KinematicsConfig kinematics{};
  double lane_half_width{2.0};   // off-road beyond this distance from every centerline
  double disc_offset{1.125};     // two footprint discs at +-offset along the heading
  double disc_radius{1.1};
  double vehicle_length{4.5};
  // Gap-keeping law for traffic.
  double idm_accel{2.0};
  double idm_brake{3.0};
  double idm_min_gap{2.0};
  double idm_headway{1.2};
};

/// Per-step record for trace export.
struct StepTrace {
  VehicleState state;  // ego state after the step
  Action action;
  RewardComponents components;
  double reward{0.0};
  TerminationCause cause{TerminationCause::None};
};

nlohmann::json trace_to_json(const StepTrace& t);

class DrivingEnv {
 public:
  explicit DrivingEnv(ScenarioConfig cfg, EnvParams params = {});

  /// Reset with the configured seed.
  Observation reset();
  /// Reset drawing route task and traffic from `rng`; deterministic in the rng state.
  Observation reset(std::mt19937_64& rng);

  /// Throws std::logic_error when the episode has already terminated.
  StepOutcome step(const Action& action);

  Observation observe() const;
  double completion_ratio() const;
  double progress() const { return progress_; }
  bool done() const { return done_; }
  TerminationCause cause() const { return cause_; }
  int steps() const { return steps_; }
  int step_cap() const;

  const ScenarioConfig& config() const { return cfg_; }
  const EnvParams& params() const { return params_; }
  const ScenarioLayout& layout() const { return layout_; }
  RouteTask task() const { return task_; }
  const VehicleState& ego() const { return ego_; }
  const std::vector<TrafficVehicle>& traffic() const { return traffic_; }

  // Test hooks.
  void set_ego(const VehicleState& s);
  void add_traffic(int path, double s, double v, double desired_speed);
  void clear_traffic() { traffic_.clear(); }

  bool collides(const VehicleState& a, const VehicleState& b) const;
  bool on_road(const VehicleState& s) const;

 private:
  void build(RouteTask task);
  void update_traffic();
  VehicleState traffic_pose(const TrafficVehicle& t) const;
  double project_progress(const VehicleState& s) const;

  ScenarioConfig cfg_;
  EnvParams params_;
  RouteTask task_{RouteTask::Straight};
  ScenarioLayout layout_;
  VehicleState ego_;
  std::vector<TrafficVehicle> traffic_;
  Action prev_action_{};
  double progress_{0.0};
  int steps_{0};
  bool done_{false};
  TerminationCause cause_{TerminationCause::None};
};

}  // namespace emts
