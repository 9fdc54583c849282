#include "emts/scripted_expert.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace emts {

namespace {

constexpr double kVehicleLength = 4.5;
constexpr double kLaneHalf = 1.75;

struct LaneGaps {
  double front{std::numeric_limits<double>::infinity()};  // bumper gap to the nearest vehicle ahead
  double front_speed{0.0};                                 // its absolute speed
  double rear{std::numeric_limits<double>::infinity()};
};

LaneGaps gaps_in_lane(const Observation& o, double lane_offset, double ego_lateral, double ego_speed,
                      double v_max) {
  LaneGaps g;
  for (int k = 0; k < obs::kMaxVehicles; ++k) {
    const double* slot = &o[static_cast<std::size_t>(obs::kVehicles + obs::kVehicleFeatures * k)];
    if (slot[3] == 0.0) continue;  // padding
    const double rel_x = slot[0] * obs::kRange;
    const double lateral = ego_lateral + slot[1] * obs::kRange;
    if (std::abs(lateral - lane_offset) >= kLaneHalf) continue;
    const double gap = std::abs(rel_x) - kVehicleLength;
    if (rel_x >= 0.0) {
      if (gap < g.front) {
        g.front = gap;
        g.front_speed = ego_speed + slot[2] * v_max;
      }
    } else {
      g.rear = std::min(g.rear, gap);
    }
  }
  return g;
}

}  // namespace

std::string to_string(ExpertStyle s) {
  switch (s) {
    case ExpertStyle::Cautious: return "cautious";
    case ExpertStyle::Assertive: return "assertive";
    case ExpertStyle::LaneKeeper: return "lane_keeper";
  }
  return "?";
}

ExpertStyle expert_style_from_string(const std::string& s) {
  for (auto st : kAllExpertStyles)
    if (to_string(st) == s) return st;
  throw std::invalid_argument("unknown expert style: " + s);
}

ExpertContext ExpertContext::from_env(const DrivingEnv& env) {
  return {env.layout().lane_offsets, env.params().kinematics};
}

ExpertStyleParams style_params(ExpertStyle s) {
  switch (s) {
    case ExpertStyle::Cautious: return {10.0, 1.8, 4.0, 25.0, 35.0, 20.0, true};
    case ExpertStyle::Assertive: return {14.0, 0.9, 2.0, 40.0, 12.0, 6.0, true};
    case ExpertStyle::LaneKeeper: return {11.0, 1.5, 3.0, 0.0, 0.0, 0.0, false};
  }
  throw std::invalid_argument("style_params: unknown style");
}

Action scripted_expert_act(ExpertStyle style, const Observation& o, const ExpertContext& ctx) {
  if (o.size() != static_cast<std::size_t>(obs::kDim))
    throw std::invalid_argument("scripted_expert_act: observation has the wrong size");
  const ExpertStyleParams p = style_params(style);
  const KinematicsConfig& kin = ctx.kinematics;
  const double v = o[obs::kEgoSpeed] * kin.v_max;
  const double lateral = o[obs::kLateral] * obs::kLateralScale;
  const double heading = o[obs::kHeading] * std::numbers::pi;

  const auto& lanes = ctx.lane_offsets;
  std::size_t current = 0;
  for (std::size_t i = 1; i < lanes.size(); ++i)
    if (std::abs(lanes[i] - lateral) < std::abs(lanes[current] - lateral)) current = i;

  std::size_t target = current;
  const LaneGaps here = gaps_in_lane(o, lanes[current], lateral, v, kin.v_max);
  if (p.changes_lanes && here.front < p.change_trigger && here.front_speed < p.desired_speed - 0.5) {
    double best_front = here.front;
    for (std::size_t cand : {current + 1, current - 1}) {
      if (cand >= lanes.size()) continue;  // also rejects the wrapped current - 1
      const LaneGaps g = gaps_in_lane(o, lanes[cand], lateral, v, kin.v_max);
      if (g.front >= p.front_gap && g.rear >= p.rear_gap && g.front > best_front) {
        best_front = g.front;
        target = cand;
      }
    }
  }

  // Longitudinal: intelligent-driver style acceleration against the leader in the target lane.
  const LaneGaps lead = target == current ? here : gaps_in_lane(o, lanes[target], lateral, v, kin.v_max);
  const double comfort_brake = 3.0;
  double accel = kin.max_accel * 0.5 * (1.0 - std::pow(v / p.desired_speed, 4));
  if (std::isfinite(lead.front)) {
    const double dv = v - lead.front_speed;
    const double s_star = p.min_gap + v * p.headway + v * dv / (2.0 * std::sqrt(kin.max_accel * comfort_brake));
    const double gap = std::max(lead.front, 0.1);
    accel -= kin.max_accel * std::pow(std::max(s_star, 0.0) / gap, 2);
  }
  const double throttle = std::clamp(accel / kin.max_accel, -1.0, 1.0);

  // Lateral: aim at a point on the target lane centerline one lookahead ahead.
  const double lookahead = std::max(8.0, 1.2 * v);
  const double heading_goal = std::atan2(lanes[target] - lateral, lookahead);
  const double yaw_rate = 1.5 * wrap_angle(heading_goal - heading);
  const double delta = std::atan(yaw_rate * kin.wheelbase / std::max(v, 1.0));
  const double steer = std::clamp(delta / kin.max_steer_angle, -1.0, 1.0);
  return {throttle, steer};
}

}  // namespace emts
