#include "emts/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace emts {

void KinematicsConfig::validate() const {
  if (!(dt > 0.0) || !(wheelbase > 0.0) || !(max_accel > 0.0) || !(max_steer_angle > 0.0) ||
      !(v_max > 0.0)) {
    throw std::invalid_argument("kinematics: dt, wheelbase, max_accel, max_steer_angle and v_max must be > 0");
  }
  if (!(max_steer_angle < std::numbers::pi / 2.0)) {
    throw std::invalid_argument("kinematics: max_steer_angle must be < pi/2");
  }
}

double wrap_angle(double angle) {
  double wrapped = std::remainder(angle, 2.0 * std::numbers::pi);
  if (wrapped <= -std::numbers::pi) wrapped += 2.0 * std::numbers::pi;
  return wrapped;
}

Action clamp_action(Action a) {
  return {std::clamp(a.throttle, -1.0, 1.0), std::clamp(a.steer, -1.0, 1.0)};
}

VehicleState step(const VehicleState& state, const Action& action, const KinematicsConfig& cfg) {
  if (!std::isfinite(state.x) || !std::isfinite(state.y) || !std::isfinite(state.theta) ||
      !std::isfinite(state.v) || !std::isfinite(action.throttle) || !std::isfinite(action.steer)) {
    throw std::domain_error("kinematics::step: non-finite state or action");
  }
  const Action a = clamp_action(action);
  const double accel = a.throttle * cfg.max_accel;
  const double delta = a.steer * cfg.max_steer_angle;

  VehicleState next;
  next.v = std::clamp(state.v + accel * cfg.dt, 0.0, cfg.v_max);
  next.theta = wrap_angle(state.theta + (state.v / cfg.wheelbase) * std::tan(delta) * cfg.dt);
  next.x = state.x + state.v * std::cos(state.theta) * cfg.dt;
  next.y = state.y + state.v * std::sin(state.theta) * cfg.dt;
  return next;
}

std::vector<VehicleState> rollout(const VehicleState& initial, std::span<const Action> actions,
                                  const KinematicsConfig& cfg) {
  std::vector<VehicleState> states;
  states.reserve(actions.size());
  VehicleState current = initial;
  for (const Action& a : actions) {
    current = step(current, a, cfg);
    states.push_back(current);
  }
  return states;
}

}  // namespace emts
