#include "emts/road.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace emts {

namespace {

double norm(Vec2 a) { return std::hypot(a.x, a.y); }
Vec2 sub(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 add(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 scale(Vec2 a, double k) { return {a.x * k, a.y * k}; }

}  // namespace

Polyline::Polyline(std::vector<Vec2> points, bool closed) : points_(std::move(points)), closed_(closed) {
  if (points_.size() < 2) throw std::invalid_argument("Polyline: need at least two points");
  if (closed_ && points_.front() != points_.back()) points_.push_back(points_.front());
  cumulative_.reserve(points_.size());
  cumulative_.push_back(0.0);
  for (std::size_t i = 1; i < points_.size(); ++i) {
    const double len = norm(sub(points_[i], points_[i - 1]));
    if (!(len > 0.0)) throw std::invalid_argument("Polyline: zero-length segment");
    cumulative_.push_back(cumulative_.back() + len);
  }
}

double Polyline::normalize_s(double s) const {
  const double len = length();
  if (closed_) {
    double w = std::fmod(s, len);
    if (w < 0.0) w += len;
    return w;
  }
  return std::clamp(s, 0.0, len);
}

std::size_t Polyline::segment_index(double s) const {
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  std::size_t idx = it == cumulative_.begin() ? 0 : static_cast<std::size_t>(it - cumulative_.begin()) - 1;
  return std::min(idx, points_.size() - 2);
}

Vec2 Polyline::point_at(double s) const {
  s = normalize_s(s);
  const std::size_t i = segment_index(s);
  const double seg_len = cumulative_[i + 1] - cumulative_[i];
  const double t = (s - cumulative_[i]) / seg_len;
  return add(points_[i], scale(sub(points_[i + 1], points_[i]), t));
}

double Polyline::heading_at(double s) const {
  const std::size_t i = segment_index(normalize_s(s));
  const Vec2 d = sub(points_[i + 1], points_[i]);
  return std::atan2(d.y, d.x);
}

PathProjection Polyline::project_segment(Vec2 p, std::size_t seg) const {
  const Vec2 a = points_[seg];
  const Vec2 d = sub(points_[seg + 1], a);
  const double len = cumulative_[seg + 1] - cumulative_[seg];
  const Vec2 ap = sub(p, a);
  const double t = std::clamp((ap.x * d.x + ap.y * d.y) / (len * len), 0.0, 1.0);
  const Vec2 closest = add(a, scale(d, t));
  const Vec2 off = sub(p, closest);
  PathProjection proj;
  proj.s = cumulative_[seg] + t * len;
  proj.heading = std::atan2(d.y, d.x);
  // Signed offset measured against the segment direction.
  const double cross = (d.x * ap.y - d.y * ap.x) / len;
  proj.distance = norm(off);
  proj.lateral = cross >= 0.0 ? proj.distance : -proj.distance;
  if (t > 0.0 && t < 1.0) proj.lateral = cross;
  return proj;
}

PathProjection Polyline::project(Vec2 p) const {
  PathProjection best;
  best.distance = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < points_.size(); ++i) {
    const PathProjection cand = project_segment(p, i);
    if (cand.distance < best.distance) best = cand;
  }
  return best;
}

PathProjection Polyline::project_near(Vec2 p, double s_hint, double window) const {
  const double len = length();
  if (!closed_ || 2.0 * window >= len) {
    const double lo = closed_ ? 0.0 : std::max(0.0, s_hint - window);
    const double hi = closed_ ? len : std::min(len, s_hint + window);
    PathProjection best;
    best.distance = std::numeric_limits<double>::infinity();
    for (std::size_t i = segment_index(lo); i + 1 < points_.size(); ++i) {
      if (cumulative_[i] > hi) break;
      const PathProjection cand = project_segment(p, i);
      if (cand.distance < best.distance) best = cand;
    }
    return best;
  }
  // Closed path: walk the window, wrapping around the seam.
  PathProjection best;
  best.distance = std::numeric_limits<double>::infinity();
  const std::size_t n = points_.size() - 1;
  std::size_t i = segment_index(normalize_s(s_hint - window));
  double walked = 0.0;
  for (std::size_t k = 0; k < n && walked <= 2.0 * window + (cumulative_[i + 1] - cumulative_[i]); ++k) {
    const PathProjection cand = project_segment(p, i);
    if (cand.distance < best.distance) best = cand;
    walked += cumulative_[i + 1] - cumulative_[i];
    i = (i + 1) % n;
  }
  return best;
}

Polyline make_filleted_path(const std::vector<Vec2>& waypoints, double radius, double spacing) {
  if (waypoints.size() < 2) throw std::invalid_argument("make_filleted_path: need two waypoints");
  std::vector<Vec2> out;
  out.push_back(waypoints.front());
  for (std::size_t i = 1; i + 1 < waypoints.size(); ++i) {
    const Vec2 prev = waypoints[i - 1];
    const Vec2 corner = waypoints[i];
    const Vec2 next = waypoints[i + 1];
    const Vec2 u_in = scale(sub(corner, prev), 1.0 / norm(sub(corner, prev)));
    const Vec2 u_out = scale(sub(next, corner), 1.0 / norm(sub(next, corner)));
    const double cos_turn = std::clamp(u_in.x * u_out.x + u_in.y * u_out.y, -1.0, 1.0);
    const double turn = std::acos(cos_turn);
    if (turn < 1e-6) {
      out.push_back(corner);
      continue;
    }
    const double max_tangent =
        0.5 * std::min(norm(sub(corner, prev)), norm(sub(next, corner)));
    double tangent = radius * std::tan(turn / 2.0);
    double r = radius;
    if (tangent > max_tangent) {
      tangent = max_tangent;
      r = tangent / std::tan(turn / 2.0);
    }
    const Vec2 start = sub(corner, scale(u_in, tangent));
    const double sign = (u_in.x * u_out.y - u_in.y * u_out.x) >= 0.0 ? 1.0 : -1.0;  // +1 left turn
    const Vec2 normal{-u_in.y * sign, u_in.x * sign};
    const Vec2 center = add(start, scale(normal, r));
    const double a0 = std::atan2(start.y - center.y, start.x - center.x);
    const int steps = std::max(2, static_cast<int>(std::ceil(r * turn / spacing)));
    if (norm(sub(start, out.back())) > 1e-9) out.push_back(start);
    for (int k = 1; k <= steps; ++k) {
      const double a = a0 + sign * turn * k / steps;
      out.push_back({center.x + r * std::cos(a), center.y + r * std::sin(a)});
    }
  }
  if (norm(sub(waypoints.back(), out.back())) > 1e-9) out.push_back(waypoints.back());
  return Polyline(std::move(out));
}

Polyline make_circle(Vec2 center, double radius, int segments, double start_angle) {
  if (segments < 3) throw std::invalid_argument("make_circle: need at least three segments");
  std::vector<Vec2> pts;
  for (int k = 0; k < segments; ++k) {
    const double a = start_angle + 2.0 * std::numbers::pi * k / segments;
    pts.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
  return Polyline(std::move(pts), true);
}

}  // namespace emts
