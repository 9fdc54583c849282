#pragma once

#include <string>
#include <vector>

#include "emts/driving_env.hpp"
#include "emts/kinematics.hpp"

namespace emts {

enum class ExpertStyle { Cautious, Assertive, LaneKeeper };

std::string to_string(ExpertStyle s);
/// Throws std::invalid_argument on unknown names.
ExpertStyle expert_style_from_string(const std::string& s);
inline constexpr ExpertStyle kAllExpertStyles[] = {ExpertStyle::Cautious, ExpertStyle::Assertive,
                                                   ExpertStyle::LaneKeeper};

/// Road knowledge a driver has beyond the observation vector.
struct ExpertContext {
  std::vector<double> lane_offsets{0.0};  // usable lanes, lateral offset from the route [m]
  KinematicsConfig kinematics{};

  static ExpertContext from_env(const DrivingEnv& env);
};

struct ExpertStyleParams {
  double desired_speed;   // [m/s]
  double headway;         // time gap [s]
  double min_gap;         // standstill gap [m]
  double change_trigger;  // leader closer than this makes a lane change worth considering [m]
  double front_gap;       // required free space ahead in the target lane [m]
  double rear_gap;        // required free space behind in the target lane [m]
  bool changes_lanes;
};

ExpertStyleParams style_params(ExpertStyle s);

/// Deterministic feedback driver: gap-keeping speed control plus lane centering,
/// with style-dependent lane changes.
Action scripted_expert_act(ExpertStyle style, const Observation& o, const ExpertContext& ctx);

}  // namespace emts
