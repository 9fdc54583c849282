#pragma once

#include <span>
#include <vector>

namespace emts {

/// Pose and speed of a vehicle on the plane.
struct VehicleState {
  double x{0.0};      // [m]
  double y{0.0};      // [m]
  double theta{0.0};  // heading [rad], kept in (-pi, pi]
  double v{0.0};      // forward speed [m/s], never negative

  bool operator==(const VehicleState&) const = default;
};

/// Normalized throttle/steer command, both in [-1, 1].
struct Action {
  double throttle{0.0};
  double steer{0.0};

  bool operator==(const Action&) const = default;
};

struct KinematicsConfig {
  double dt{0.1};               // [s]
  double wheelbase{2.5};        // [m]
  double max_accel{4.0};        // [m/s^2]
  double max_steer_angle{0.5};  // [rad]
  double v_max{20.0};           // [m/s]

  /// Throws std::invalid_argument when a field breaks its invariant.
  void validate() const;
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double angle);

Action clamp_action(Action a);

/// One forward-Euler step of the kinematic bicycle model.
///
/// Position and heading are advanced with the speed and heading from the start
/// of the step; speed is clamped to [0, v_max]. Throws std::domain_error on
/// non-finite input.
VehicleState step(const VehicleState& state, const Action& action, const KinematicsConfig& cfg);

/// Folds `step` over `actions`; element i is the state after actions[0..=i].
std::vector<VehicleState> rollout(const VehicleState& initial, std::span<const Action> actions,
                                  const KinematicsConfig& cfg);

}  // namespace emts
