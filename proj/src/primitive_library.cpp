#include "emts/primitive_library.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>

#include "emts/errors.hpp"

namespace emts {

using nlohmann::json;

Trajectory make_trajectory(const VehicleState& initial, std::vector<Action> actions,
                           const KinematicsConfig& kin) {
  for (Action& a : actions) a = clamp_action(a);
  Trajectory traj{initial, std::move(actions), {}};
  traj.states = rollout(initial, traj.actions, kin);
  return traj;
}

bool is_kinematically_consistent(const Trajectory& traj, const KinematicsConfig& kin) {
  if (traj.states.size() != traj.actions.size()) return false;
  return rollout(traj.initial, traj.actions, kin) == traj.states;
}

std::string to_string(PrimitiveFamily family) {
  switch (family) {
    case PrimitiveFamily::ConstantControl: return "constant_control";
    case PrimitiveFamily::Polynomial: return "polynomial";
    case PrimitiveFamily::SplineThrough: return "spline_through";
  }
  return "unknown";
}

PrimitiveFamily primitive_family_from_string(const std::string& name) {
  if (name == "constant_control") return PrimitiveFamily::ConstantControl;
  if (name == "polynomial") return PrimitiveFamily::Polynomial;
  if (name == "spline_through") return PrimitiveFamily::SplineThrough;
  throw std::invalid_argument("unknown primitive family: " + name);
}

void LibraryConfig::validate() const {
  if (horizon < 1) throw ConfigError("library.horizon must be >= 1");
  if (initial_speeds.empty()) throw ConfigError("library.initial_speeds must not be empty");
  if (constant_control && (throttle_grid.empty() || steer_grid.empty())) {
    throw ConfigError("library: constant-control grids must not be empty");
  }
  if (polynomial && (lateral_offsets.empty() || target_speeds.empty())) {
    throw ConfigError("library: polynomial offsets and target speeds must not be empty");
  }
  if (spline && (spline_count < 1 || spline_knots < 2)) {
    throw ConfigError("library: spline_count must be >= 1 and spline_knots >= 2");
  }
}

void to_json(json& j, const LibraryConfig& c) {
  j = json{{"horizon", c.horizon},
           {"initial_speeds", c.initial_speeds},
           {"constant_control", c.constant_control},
           {"throttle_grid", c.throttle_grid},
           {"steer_grid", c.steer_grid},
           {"polynomial", c.polynomial},
           {"lateral_offsets", c.lateral_offsets},
           {"target_speeds", c.target_speeds},
           {"spline", c.spline},
           {"spline_count", c.spline_count},
           {"spline_knots", c.spline_knots},
           {"seed", c.seed}};
}

void from_json(const json& j, LibraryConfig& c) {
  LibraryConfig d;
  c.horizon = j.value("horizon", d.horizon);
  c.initial_speeds = j.value("initial_speeds", d.initial_speeds);
  c.constant_control = j.value("constant_control", d.constant_control);
  c.throttle_grid = j.value("throttle_grid", d.throttle_grid);
  c.steer_grid = j.value("steer_grid", d.steer_grid);
  c.polynomial = j.value("polynomial", d.polynomial);
  c.lateral_offsets = j.value("lateral_offsets", d.lateral_offsets);
  c.target_speeds = j.value("target_speeds", d.target_speeds);
  c.spline = j.value("spline", d.spline);
  c.spline_count = j.value("spline_count", d.spline_count);
  c.spline_knots = j.value("spline_knots", d.spline_knots);
  c.seed = j.value("seed", d.seed);
}

std::vector<LibraryEntry> gen_constant_control(const std::vector<Action>& grid,
                                               const std::vector<double>& initial_speeds, int horizon,
                                               const KinematicsConfig& kin) {
  if (grid.empty()) throw std::invalid_argument("gen_constant_control: empty grid");
  std::vector<LibraryEntry> out;
  out.reserve(grid.size() * initial_speeds.size());
  for (const Action& a : grid) {
    for (double v0 : initial_speeds) {
      std::vector<Action> actions(static_cast<std::size_t>(horizon), clamp_action(a));
      out.push_back({make_trajectory({0.0, 0.0, 0.0, v0}, std::move(actions), kin),
                     PrimitiveFamily::ConstantControl,
                     json{{"throttle", a.throttle}, {"steer", a.steer}, {"v0", v0}}});
    }
  }
  return out;
}

namespace {

// Quintic with y(0)=0, y(D)=offset and zero first/second derivatives at both ends.
double quintic_lateral(double offset, double t, double duration) {
  const double s = std::clamp(t / duration, 0.0, 1.0);
  const double s3 = s * s * s;
  return offset * (10.0 * s3 - 15.0 * s3 * s + 6.0 * s3 * s * s);
}

// Per-step actions that make the discrete bicycle rollout track the quintic.
// Heading at step k decides y at step k+1, so steer at k targets the heading
// needed one step later.
std::vector<Action> invert_quintic(double offset, double v0, double v_target, int horizon,
                                   const KinematicsConfig& kin) {
  const double duration = horizon * kin.dt;
  const double throttle =
      std::clamp((v_target - v0) / duration / kin.max_accel, -1.0, 1.0);
  std::vector<Action> actions;
  actions.reserve(static_cast<std::size_t>(horizon));
  VehicleState state{0.0, 0.0, 0.0, v0};
  for (int k = 0; k < horizon; ++k) {
    Action a{throttle, 0.0};
    const double v_next = std::clamp(state.v + throttle * kin.max_accel * kin.dt, 0.0, kin.v_max);
    const double y_next = state.y + state.v * std::sin(state.theta) * kin.dt;
    const double y_goal = quintic_lateral(offset, (k + 2) * kin.dt, duration);
    if (state.v > 1e-9 && v_next > 1e-9) {
      const double ratio = std::clamp((y_goal - y_next) / (v_next * kin.dt), -1.0, 1.0);
      const double theta_goal = std::asin(ratio);
      const double tan_delta = (theta_goal - state.theta) * kin.wheelbase / (state.v * kin.dt);
      a.steer = std::clamp(std::atan(tan_delta) / kin.max_steer_angle, -1.0, 1.0);
    }
    actions.push_back(a);
    state = step(state, a, kin);
  }
  return actions;
}

}  // namespace

PolynomialResult gen_polynomial(const std::vector<double>& offsets,
                                const std::vector<double>& target_speeds,
                                const std::vector<double>& initial_speeds, int horizon,
                                const KinematicsConfig& kin) {
  PolynomialResult result;
  const double duration = horizon * kin.dt;
  for (double offset : offsets) {
    if (!std::isfinite(offset)) throw std::invalid_argument("gen_polynomial: non-finite offset");
    for (double v_target : target_speeds) {
      for (double v0 : initial_speeds) {
        const double required_accel = std::abs(v_target - v0) / duration;
        if (required_accel > 2.0 * kin.max_accel) {
          ++result.skipped;
          continue;
        }
        auto actions = invert_quintic(offset, v0, v_target, horizon, kin);
        result.entries.push_back(
            {make_trajectory({0.0, 0.0, 0.0, v0}, std::move(actions), kin), PrimitiveFamily::Polynomial,
             json{{"offset", offset}, {"target_speed", v_target}, {"v0", v0}}});
      }
    }
  }
  return result;
}

namespace {

double catmull_rom(double p0, double p1, double p2, double p3, double t) {
  const double t2 = t * t;
  const double t3 = t2 * t;
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t3);
}

std::vector<double> interpolate_knots(const std::vector<double>& knots, int horizon) {
  const int n = static_cast<int>(knots.size());
  std::vector<double> out(static_cast<std::size_t>(horizon));
  for (int k = 0; k < horizon; ++k) {
    const double u = horizon == 1 ? 0.0 : static_cast<double>(k) * (n - 1) / (horizon - 1);
    const int i = std::min(static_cast<int>(u), n - 2);
    const double t = u - i;
    const double p0 = knots[static_cast<std::size_t>(std::max(i - 1, 0))];
    const double p1 = knots[static_cast<std::size_t>(i)];
    const double p2 = knots[static_cast<std::size_t>(i + 1)];
    const double p3 = knots[static_cast<std::size_t>(std::min(i + 2, n - 1))];
    out[static_cast<std::size_t>(k)] = std::clamp(catmull_rom(p0, p1, p2, p3, t), -1.0, 1.0);
  }
  return out;
}

}  // namespace

std::vector<LibraryEntry> gen_spline_through(int count, int knots,
                                             const std::vector<double>& initial_speeds, int horizon,
                                             std::uint64_t seed, const KinematicsConfig& kin) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> amplitude(0.2, 1.0);
  std::vector<LibraryEntry> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double v0 = initial_speeds[static_cast<std::size_t>(i) % initial_speeds.size()];
    const double amp_throttle = amplitude(rng);
    const double amp_steer = amplitude(rng);
    std::vector<double> throttle_knots(static_cast<std::size_t>(knots));
    std::vector<double> steer_knots(static_cast<std::size_t>(knots));
    for (int k = 0; k < knots; ++k) {
      throttle_knots[static_cast<std::size_t>(k)] = amp_throttle * unit(rng);
      steer_knots[static_cast<std::size_t>(k)] = amp_steer * unit(rng);
    }
    const auto throttle = interpolate_knots(throttle_knots, horizon);
    const auto steer = interpolate_knots(steer_knots, horizon);
    std::vector<Action> actions(static_cast<std::size_t>(horizon));
    for (std::size_t k = 0; k < actions.size(); ++k) actions[k] = {throttle[k], steer[k]};
    out.push_back({make_trajectory({0.0, 0.0, 0.0, v0}, std::move(actions), kin),
                   PrimitiveFamily::SplineThrough,
                   json{{"throttle_knots", throttle_knots}, {"steer_knots", steer_knots}, {"v0", v0}}});
  }
  return out;
}

TrajectoryLibrary::TrajectoryLibrary(std::vector<LibraryEntry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw ConfigError("trajectory library is empty");
  const std::size_t t = entries_.front().trajectory.horizon();
  for (const auto& e : entries_) {
    if (e.trajectory.horizon() != t || e.trajectory.states.size() != t) {
      throw std::invalid_argument("trajectory library: inconsistent horizons");
    }
  }
}

int TrajectoryLibrary::horizon() const {
  return entries_.empty() ? 0 : static_cast<int>(entries_.front().trajectory.horizon());
}

json trajectory_to_json(const LibraryEntry& entry) {
  const Trajectory& t = entry.trajectory;
  json actions = json::array();
  for (const Action& a : t.actions) actions.push_back({a.throttle, a.steer});
  json states = json::array();
  for (const VehicleState& s : t.states) states.push_back({s.x, s.y, s.theta, s.v});
  return json{{"family", to_string(entry.family)},
              {"params", entry.params},
              {"initial", {t.initial.x, t.initial.y, t.initial.theta, t.initial.v}},
              {"actions", std::move(actions)},
              {"states", std::move(states)}};
}

LibraryEntry trajectory_from_json(const json& j) {
  LibraryEntry e;
  e.family = primitive_family_from_string(j.at("family").get<std::string>());
  e.params = j.value("params", json::object());
  const auto& init = j.at("initial");
  e.trajectory.initial = {init.at(0).get<double>(), init.at(1).get<double>(), init.at(2).get<double>(),
                          init.at(3).get<double>()};
  for (const auto& a : j.at("actions")) {
    e.trajectory.actions.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
  }
  for (const auto& s : j.at("states")) {
    e.trajectory.states.push_back(
        {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>(), s.at(3).get<double>()});
  }
  return e;
}

void TrajectoryLibrary::write_jsonl(std::ostream& out, const json& header) const {
  if (!header.is_null()) out << json{{"emts_header", header}}.dump() << '\n';
  for (const auto& e : entries_) out << trajectory_to_json(e).dump() << '\n';
}

TrajectoryLibrary TrajectoryLibrary::read_jsonl(std::istream& in, const KinematicsConfig& kin) {
  std::vector<LibraryEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (j.contains("emts_header")) continue;
    LibraryEntry e = trajectory_from_json(j);
    if (!is_kinematically_consistent(e.trajectory, kin)) {
      throw ConfigError("library line " + std::to_string(line_no) +
                        ": states are not the rollout of the actions under the configured kinematics");
    }
    entries.push_back(std::move(e));
  }
  return TrajectoryLibrary(std::move(entries));
}

TrajectoryLibrary build_library(const LibraryConfig& cfg, const KinematicsConfig& kin) {
  cfg.validate();
  std::vector<LibraryEntry> all;
  if (cfg.constant_control) {
    std::vector<Action> grid;
    for (double t : cfg.throttle_grid) {
      for (double s : cfg.steer_grid) grid.push_back({t, s});
    }
    auto cc = gen_constant_control(grid, cfg.initial_speeds, cfg.horizon, kin);
    all.insert(all.end(), std::make_move_iterator(cc.begin()), std::make_move_iterator(cc.end()));
  }
  if (cfg.polynomial) {
    auto poly = gen_polynomial(cfg.lateral_offsets, cfg.target_speeds, cfg.initial_speeds, cfg.horizon, kin);
    all.insert(all.end(), std::make_move_iterator(poly.entries.begin()),
               std::make_move_iterator(poly.entries.end()));
  }
  if (cfg.spline) {
    auto sp = gen_spline_through(cfg.spline_count, cfg.spline_knots, cfg.initial_speeds, cfg.horizon, cfg.seed,
                                 kin);
    all.insert(all.end(), std::make_move_iterator(sp.begin()), std::make_move_iterator(sp.end()));
  }
  if (all.empty()) throw ConfigError("library configuration produced no trajectories");
  return TrajectoryLibrary(std::move(all));
}

}  // namespace emts
