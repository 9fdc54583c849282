#include "emts/driving_env.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace emts {

namespace {

constexpr double kPi = std::numbers::pi;

double deg(double d) { return d * kPi / 180.0; }

Polyline segment(Vec2 a, Vec2 b) { return Polyline({a, b}); }

void add_slots(ScenarioLayout& layout, int path, double s_from, double s_to, double spacing, Vec2 ego_start,
               double exclusion) {
  const Polyline& p = layout.traffic_paths[static_cast<std::size_t>(path)];
  for (double s = s_from; s <= s_to + 1e-9; s += spacing) {
    const Vec2 q = p.point_at(s);
    if (std::hypot(q.x - ego_start.x, q.y - ego_start.y) < exclusion) continue;
    layout.slots.push_back({path, s});
  }
}

ScenarioLayout straight_road(double route_length, double lane_end, double slot_end) {
  ScenarioLayout l;
  l.route = segment({0.0, 0.0}, {route_length, 0.0});
  l.navigation = Navigation::Straight;
  l.lane_offsets = {-3.5, 0.0, 3.5};
  for (double y : l.lane_offsets) {
    l.lanes.push_back(segment({-50.0, y}, {lane_end, y}));
    l.traffic_paths.push_back(l.lanes.back());
  }
  for (int p = 0; p < 3; ++p) add_slots(l, p, 75.0, slot_end + 50.0, 20.0, {0.0, 0.0}, 15.0);
  return l;
}

ScenarioLayout intersection(RouteTask task) {
  ScenarioLayout l;
  const Vec2 start{1.75, -50.0};
  std::vector<Vec2> wp;
  double radius = 6.0;
  switch (task) {
    case RouteTask::Straight:
      wp = {start, {1.75, 50.0}};
      l.navigation = Navigation::Straight;
      break;
    case RouteTask::Right:
      wp = {start, {1.75, -1.75}, {50.0, -1.75}};
      l.navigation = Navigation::Right;
      break;
    case RouteTask::Left:
      wp = {start, {1.75, 1.75}, {-50.0, 1.75}};
      radius = 8.0;
      l.navigation = Navigation::Left;
      break;
    case RouteTask::UTurn:
      wp = {start, {1.75, 5.0}, {-8.0, 5.0}, {-8.0, -6.0}, {-1.75, -14.0}, {-1.75, -50.0}};
      radius = 4.6;
      l.navigation = Navigation::Left;
      break;
    case RouteTask::Random:
      throw std::invalid_argument("make_layout: task must be resolved before building");
  }
  l.route = make_filleted_path(wp, radius);
  l.lanes.push_back(l.route);
  l.traffic_paths = {segment({1.75, -100.0}, {1.75, 100.0}), segment({-1.75, 100.0}, {-1.75, -100.0}),
                     segment({-100.0, -1.75}, {100.0, -1.75}), segment({100.0, 1.75}, {-100.0, 1.75})};
  for (const auto& p : l.traffic_paths) l.lanes.push_back(p);
  add_slots(l, 0, 75.0, 195.0, 15.0, start, 20.0);  // ahead of the ego in its own lane
  for (int p = 1; p < 4; ++p) add_slots(l, p, 5.0, 195.0, 15.0, start, 20.0);
  l.traffic_speed_min = 6.0;
  l.traffic_speed_max = 9.0;
  l.default_step_cap = 300;
  return l;
}

ScenarioLayout roundabout(RouteTask task) {
  ScenarioLayout l;
  constexpr double r = 20.0;
  const Vec2 start{3.0, -70.0};
  auto ring_point = [&](double a_deg) { return Vec2{r * std::cos(deg(a_deg)), r * std::sin(deg(a_deg))}; };
  double exit_deg = 70.0;
  std::vector<Vec2> tail;
  switch (task) {
    case RouteTask::Right:
      exit_deg = -20.0;
      tail = {{26.0, -3.0}, {70.0, -3.0}};
      l.navigation = Navigation::Right;
      break;
    case RouteTask::Straight:
      exit_deg = 70.0;
      tail = {{3.0, 26.0}, {3.0, 70.0}};
      l.navigation = Navigation::Straight;
      break;
    case RouteTask::Left:
      exit_deg = 160.0;
      tail = {{-26.0, 3.0}, {-70.0, 3.0}};
      l.navigation = Navigation::Left;
      break;
    case RouteTask::UTurn:
      exit_deg = 250.0;
      tail = {{-3.0, -26.0}, {-3.0, -70.0}};
      l.navigation = Navigation::Left;
      break;
    case RouteTask::Random:
      throw std::invalid_argument("make_layout: task must be resolved before building");
  }
  std::vector<Vec2> wp{start, {3.0, -26.0}};
  for (double a = -70.0; a <= exit_deg + 1e-9; a += 10.0) wp.push_back(ring_point(a));
  wp.insert(wp.end(), tail.begin(), tail.end());
  l.route = make_filleted_path(wp, 6.0);
  l.lanes.push_back(l.route);

  const Polyline ring = make_circle({0.0, 0.0}, r, 72);
  l.lanes.push_back(ring);
  l.traffic_paths.push_back(ring);
  const std::vector<std::pair<Vec2, Vec2>> arms{
      {{3.0, -70.0}, {3.0, -20.0}},  {{-3.0, -20.0}, {-3.0, -70.0}}, {{70.0, 3.0}, {20.0, 3.0}},
      {{20.0, -3.0}, {70.0, -3.0}},  {{-3.0, 70.0}, {-3.0, 20.0}},   {{3.0, 20.0}, {3.0, 70.0}},
      {{-70.0, -3.0}, {-20.0, -3.0}}, {{-20.0, 3.0}, {-70.0, 3.0}}};
  for (const auto& [a, b] : arms) l.lanes.push_back(segment(a, b));
  const double circumference = ring.length();
  add_slots(l, 0, 0.0, circumference * 11.0 / 12.0, circumference / 12.0, start, 20.0);
  l.traffic_speed_min = 5.0;
  l.traffic_speed_max = 7.0;
  l.default_step_cap = 400;
  return l;
}

}  // namespace

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Corridor: return "corridor";
    case Scenario::Highway: return "highway";
    case Scenario::Intersection: return "intersection";
    case Scenario::Roundabout: return "roundabout";
  }
  return "?";
}

std::string to_string(RouteTask t) {
  switch (t) {
    case RouteTask::Random: return "random";
    case RouteTask::Straight: return "straight";
    case RouteTask::Left: return "left";
    case RouteTask::Right: return "right";
    case RouteTask::UTurn: return "uturn";
  }
  return "?";
}

std::string to_string(TerminationCause c) {
  switch (c) {
    case TerminationCause::None: return "none";
    case TerminationCause::Success: return "success";
    case TerminationCause::Collision: return "collision";
    case TerminationCause::OffRoad: return "off_road";
    case TerminationCause::Timeout: return "timeout";
  }
  return "?";
}

Scenario scenario_from_string(const std::string& s) {
  for (auto sc : {Scenario::Corridor, Scenario::Highway, Scenario::Intersection, Scenario::Roundabout})
    if (to_string(sc) == s) return sc;
  throw std::invalid_argument("unknown scenario: " + s);
}

RouteTask route_task_from_string(const std::string& s) {
  for (auto t : {RouteTask::Random, RouteTask::Straight, RouteTask::Left, RouteTask::Right, RouteTask::UTurn})
    if (to_string(t) == s) return t;
  throw std::invalid_argument("unknown route task: " + s);
}

void ScenarioConfig::validate() const {
  if (!(density >= 0.0 && density <= 1.0)) throw std::invalid_argument("scenario.density must be in [0,1]");
  if (step_cap < 0) throw std::invalid_argument("scenario.step_cap must be >= 0");
  for (double w : {weights.driving, weights.speed, weights.jerk, weights.termination})
    if (!std::isfinite(w)) throw std::invalid_argument("scenario.weights must be finite");
}

void to_json(nlohmann::json& j, const ScenarioConfig& c) {
  j = {{"scenario", to_string(c.scenario)},
       {"density", c.density},
       {"step_cap", c.step_cap},
       {"seed", c.seed},
       {"task", to_string(c.task)},
       {"weights",
        {{"driving", c.weights.driving},
         {"speed", c.weights.speed},
         {"jerk", c.weights.jerk},
         {"termination", c.weights.termination}}}};
}

void from_json(const nlohmann::json& j, ScenarioConfig& c) {
  c = ScenarioConfig{};
  if (j.contains("scenario")) c.scenario = scenario_from_string(j.at("scenario").get<std::string>());
  if (j.contains("task")) c.task = route_task_from_string(j.at("task").get<std::string>());
  c.density = j.value("density", c.density);
  c.step_cap = j.value("step_cap", c.step_cap);
  c.seed = j.value("seed", c.seed);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    c.weights.driving = w.value("driving", c.weights.driving);
    c.weights.speed = w.value("speed", c.weights.speed);
    c.weights.jerk = w.value("jerk", c.weights.jerk);
    c.weights.termination = w.value("termination", c.weights.termination);
  }
}

TerminationCause termination_cause_from_string(const std::string& s) {
  for (auto c : {TerminationCause::None, TerminationCause::Success, TerminationCause::Collision,
                 TerminationCause::OffRoad, TerminationCause::Timeout})
    if (to_string(c) == s) return c;
  throw std::invalid_argument("unknown termination cause: " + s);
}

nlohmann::json trace_to_json(const StepTrace& t) {
  return {{"state", {{"x", t.state.x}, {"y", t.state.y}, {"theta", t.state.theta}, {"v", t.state.v}}},
          {"action", {{"throttle", t.action.throttle}, {"steer", t.action.steer}}},
          {"reward", t.reward},
          {"components",
           {{"driving", t.components.driving},
            {"speed", t.components.speed},
            {"jerk", t.components.jerk},
            {"termination", t.components.termination}}},
          {"cause", to_string(t.cause)}};
}

ScenarioLayout make_layout(Scenario scenario, RouteTask task) {
  switch (scenario) {
    case Scenario::Corridor: {
      auto l = straight_road(200.0, 450.0, 245.0);
      l.traffic_speed_min = 6.0;
      l.traffic_speed_max = 10.0;
      l.default_step_cap = 400;
      return l;
    }
    case Scenario::Highway: {
      // Traffic is slow enough that following it to the end overruns the step cap.
      auto l = straight_road(400.0, 650.0, 565.0);
      l.traffic_speed_min = 4.0;
      l.traffic_speed_max = 7.0;
      l.default_step_cap = 500;
      return l;
    }
    case Scenario::Intersection: return intersection(task);
    case Scenario::Roundabout: return roundabout(task);
  }
  throw std::invalid_argument("make_layout: unknown scenario");
}

DrivingEnv::DrivingEnv(ScenarioConfig cfg, EnvParams params) : cfg_(cfg), params_(params) {
  cfg_.validate();
  params_.kinematics.validate();
  build(cfg_.task == RouteTask::Random ? RouteTask::Straight : cfg_.task);
}

void DrivingEnv::build(RouteTask task) {
  task_ = task;
  layout_ = make_layout(cfg_.scenario, task);
  const Vec2 p0 = layout_.route.point_at(0.0);
  ego_ = {p0.x, p0.y, wrap_angle(layout_.route.heading_at(0.0)), layout_.start_speed};
  traffic_.clear();
  prev_action_ = {};
  progress_ = 0.0;
  steps_ = 0;
  done_ = false;
  cause_ = TerminationCause::None;
}

int DrivingEnv::step_cap() const { return cfg_.step_cap > 0 ? cfg_.step_cap : layout_.default_step_cap; }

Observation DrivingEnv::reset() {
  std::mt19937_64 rng(cfg_.seed);
  return reset(rng);
}

Observation DrivingEnv::reset(std::mt19937_64& rng) {
  RouteTask task = cfg_.task;
  const bool has_tasks = cfg_.scenario == Scenario::Intersection || cfg_.scenario == Scenario::Roundabout;
  if (!has_tasks) {
    task = RouteTask::Straight;
  } else if (task == RouteTask::Random) {
    static constexpr RouteTask kTasks[] = {RouteTask::Straight, RouteTask::Left, RouteTask::Right,
                                           RouteTask::UTurn};
    task = kTasks[std::uniform_int_distribution<int>(0, 3)(rng)];
  }
  build(task);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const SpawnSlot& slot : layout_.slots) {
    const double u = unit(rng);
    const double speed =
        layout_.traffic_speed_min + (layout_.traffic_speed_max - layout_.traffic_speed_min) * unit(rng);
    if (u < cfg_.density) add_traffic(slot.path, slot.s, speed, speed);
  }
  return observe();
}

void DrivingEnv::set_ego(const VehicleState& s) {
  ego_ = s;
  progress_ = layout_.route.project(Vec2{s.x, s.y}).s;
}

void DrivingEnv::add_traffic(int path, double s, double v, double desired_speed) {
  if (path < 0 || path >= static_cast<int>(layout_.traffic_paths.size()))
    throw std::out_of_range("add_traffic: bad path index");
  TrafficVehicle t;
  t.path = path;
  t.s = layout_.traffic_paths[static_cast<std::size_t>(path)].normalize_s(s);
  t.v = v;
  t.desired_speed = desired_speed;
  t.pose = traffic_pose(t);
  traffic_.push_back(t);
}

VehicleState DrivingEnv::traffic_pose(const TrafficVehicle& t) const {
  const Polyline& p = layout_.traffic_paths[static_cast<std::size_t>(t.path)];
  const Vec2 q = p.point_at(t.s);
  return {q.x, q.y, wrap_angle(p.heading_at(t.s)), t.v};
}

bool DrivingEnv::collides(const VehicleState& a, const VehicleState& b) const {
  const double off = params_.disc_offset;
  const double limit = 2.0 * params_.disc_radius;
  for (double sa : {-off, off}) {
    const double ax = a.x + sa * std::cos(a.theta);
    const double ay = a.y + sa * std::sin(a.theta);
    for (double sb : {-off, off}) {
      const double bx = b.x + sb * std::cos(b.theta);
      const double by = b.y + sb * std::sin(b.theta);
      if (std::hypot(ax - bx, ay - by) < limit) return true;
    }
  }
  return false;
}

bool DrivingEnv::on_road(const VehicleState& s) const {
  const Vec2 p{s.x, s.y};
  for (const Polyline& lane : layout_.lanes)
    if (lane.project(p).distance <= params_.lane_half_width) return true;
  return false;
}

double DrivingEnv::project_progress(const VehicleState& s) const {
  return layout_.route.project_near(Vec2{s.x, s.y}, progress_, 10.0).s;
}

void DrivingEnv::update_traffic() {
  const double dt = params_.kinematics.dt;
  const double lookahead = 60.0;
  std::vector<double> accel(traffic_.size(), 0.0);
  for (std::size_t i = 0; i < traffic_.size(); ++i) {
    const TrafficVehicle& me = traffic_[i];
    const Polyline& path = layout_.traffic_paths[static_cast<std::size_t>(me.path)];
    double gap = std::numeric_limits<double>::infinity();
    double lead_v = 0.0;
    auto consider = [&](double ds, double v_along) {
      if (ds > 0.0 && ds <= lookahead) {
        const double g = ds - params_.vehicle_length;
        if (g < gap) {
          gap = g;
          lead_v = v_along;
        }
      }
    };
    auto along = [&](double s) {
      double ds = s - me.s;
      if (path.closed()) {
        const double len = path.length();
        ds = std::fmod(ds, len);
        if (ds < 0.0) ds += len;
        if (ds > 0.5 * len) ds -= len;
      }
      return ds;
    };
    for (std::size_t j = 0; j < traffic_.size(); ++j) {
      if (j == i) continue;
      const TrafficVehicle& other = traffic_[j];
      if (other.path == me.path) {
        consider(along(other.s), other.v);
        continue;
      }
      const auto proj = path.project_near({other.pose.x, other.pose.y}, me.s, lookahead);
      if (std::abs(proj.lateral) < 1.8 && proj.distance < 1.8)
        consider(along(proj.s), std::max(0.0, other.v * std::cos(other.pose.theta - proj.heading)));
    }
    const auto ego_proj = path.project_near({ego_.x, ego_.y}, me.s, lookahead);
    if (ego_proj.distance < 1.8)
      consider(along(ego_proj.s), std::max(0.0, ego_.v * std::cos(ego_.theta - ego_proj.heading)));

    const double v0 = std::max(me.desired_speed, 0.1);
    double a = params_.idm_accel * (1.0 - std::pow(me.v / v0, 4));
    if (std::isfinite(gap)) {
      const double dv = me.v - lead_v;
      const double s_star = params_.idm_min_gap + me.v * params_.idm_headway +
                            me.v * dv / (2.0 * std::sqrt(params_.idm_accel * params_.idm_brake));
      const double g = std::max(gap, 0.1);
      a -= params_.idm_accel * std::pow(std::max(s_star, 0.0) / g, 2);
    }
    accel[i] = std::clamp(a, -8.0, params_.idm_accel);
  }
  std::vector<TrafficVehicle> kept;
  kept.reserve(traffic_.size());
  for (std::size_t i = 0; i < traffic_.size(); ++i) {
    TrafficVehicle t = traffic_[i];
    const Polyline& path = layout_.traffic_paths[static_cast<std::size_t>(t.path)];
    t.v = std::max(0.0, t.v + accel[i] * dt);
    t.s += t.v * dt;
    if (!path.closed() && t.s >= path.length() - 1.0) continue;  // left the map
    t.s = path.normalize_s(t.s);
    t.pose = traffic_pose(t);
    kept.push_back(t);
  }
  traffic_ = std::move(kept);
}

StepOutcome DrivingEnv::step(const Action& raw_action) {
  if (done_) throw std::logic_error("DrivingEnv::step called on a terminated episode");
  const Action action = clamp_action(raw_action);
  const double before = progress_;

  ego_ = emts::step(ego_, action, params_.kinematics);
  update_traffic();
  progress_ = project_progress(ego_);
  ++steps_;

  StepOutcome out;
  RewardComponents& c = out.components;
  c.driving = progress_ - before;
  c.speed = ego_.v / params_.kinematics.v_max;
  const double dth = action.throttle - prev_action_.throttle;
  const double dst = action.steer - prev_action_.steer;
  c.jerk = -(dth * dth + dst * dst);
  prev_action_ = action;

  TerminationCause cause = TerminationCause::None;
  for (const TrafficVehicle& t : traffic_) {
    if (collides(ego_, t.pose)) {
      cause = TerminationCause::Collision;
      break;
    }
  }
  if (cause == TerminationCause::None && !on_road(ego_)) cause = TerminationCause::OffRoad;
  if (cause == TerminationCause::None && progress_ >= layout_.route.length()) cause = TerminationCause::Success;
  if (cause == TerminationCause::None && steps_ >= step_cap()) cause = TerminationCause::Timeout;

  switch (cause) {
    case TerminationCause::Success: c.termination = 1.0; break;
    case TerminationCause::Collision:
    case TerminationCause::OffRoad: c.termination = -1.0; break;
    case TerminationCause::Timeout: c.termination = -0.5; break;
    case TerminationCause::None: c.termination = 0.0; break;
  }
  const RewardWeights& w = cfg_.weights;
  out.reward = w.driving * c.driving + w.speed * c.speed + w.jerk * c.jerk + w.termination * c.termination;
  cause_ = cause;
  done_ = cause != TerminationCause::None;
  out.done = done_;
  out.cause = cause;
  out.observation = observe();
  return out;
}

double DrivingEnv::completion_ratio() const {
  if (cause_ == TerminationCause::Success) return 1.0;
  const double ratio = std::clamp(progress_ / layout_.route.length(), 0.0, 1.0);
  return std::min(ratio, std::nextafter(1.0, 0.0));
}

Observation DrivingEnv::observe() const {
  Observation o(obs::kDim, 0.0);
  const double v_max = params_.kinematics.v_max;
  const auto proj = layout_.route.project_near({ego_.x, ego_.y}, progress_, 10.0);
  o[obs::kEgoSpeed] = ego_.v / v_max;
  o[obs::kLateral] = proj.lateral / obs::kLateralScale;
  o[obs::kHeading] = wrap_angle(ego_.theta - proj.heading) / kPi;
  o[obs::kProgress] = std::clamp(progress_ / layout_.route.length(), 0.0, 1.0);

  struct Seen {
    double dist;
    std::size_t index;
  };
  std::vector<Seen> seen;
  for (std::size_t i = 0; i < traffic_.size(); ++i) {
    const double d = std::hypot(traffic_[i].pose.x - ego_.x, traffic_[i].pose.y - ego_.y);
    if (d <= obs::kRange) seen.push_back({d, i});
  }
  std::stable_sort(seen.begin(), seen.end(), [](const Seen& a, const Seen& b) { return a.dist < b.dist; });
  const double c = std::cos(ego_.theta);
  const double s = std::sin(ego_.theta);
  for (std::size_t k = 0; k < seen.size() && k < static_cast<std::size_t>(obs::kMaxVehicles); ++k) {
    const VehicleState& t = traffic_[seen[k].index].pose;
    const double dx = t.x - ego_.x;
    const double dy = t.y - ego_.y;
    const double rel_x = c * dx + s * dy;
    const double rel_y = -s * dx + c * dy;
    const auto tp = layout_.route.project_near({t.x, t.y}, progress_, obs::kRange + 10.0);
    const bool same_lane = tp.distance < 6.0 && std::abs(tp.lateral - proj.lateral) < 1.75;
    double* slot = &o[static_cast<std::size_t>(obs::kVehicles + obs::kVehicleFeatures * static_cast<int>(k))];
    slot[0] = rel_x / obs::kRange;
    slot[1] = rel_y / obs::kRange;
    slot[2] = (t.v - ego_.v) / v_max;
    slot[3] = same_lane ? 1.0 : -1.0;
  }
  o[static_cast<std::size_t>(obs::kNavigation + static_cast<int>(layout_.navigation))] = 1.0;
  return o;
}

}  // namespace emts
