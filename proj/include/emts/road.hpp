#pragma once

#include <vector>

namespace emts {

struct Vec2 {
  double x{0.0};
  double y{0.0};

  bool operator==(const Vec2&) const = default;
};

struct PathProjection {
  double s{0.0};        // arc length of the closest point
  double lateral{0.0};  // signed offset, positive to the left of the path direction
  double heading{0.0};  // path tangent heading at the closest point
  double distance{0.0};
};

/// Piecewise-linear path parameterized by arc length.
class Polyline {
 public:
  Polyline() = default;
  /// Throws std::invalid_argument for fewer than two points or a zero-length segment.
  explicit Polyline(std::vector<Vec2> points, bool closed = false);

  double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
  bool closed() const { return closed_; }
  const std::vector<Vec2>& points() const { return points_; }

  /// Arc length wrapped (closed) or clamped (open) into the path.
  double normalize_s(double s) const;
  Vec2 point_at(double s) const;
  double heading_at(double s) const;

  PathProjection project(Vec2 p) const;
  /// Projection restricted to segments overlapping [hint - window, hint + window].
  PathProjection project_near(Vec2 p, double s_hint, double window) const;

 private:
  std::size_t segment_index(double s) const;
  PathProjection project_segment(Vec2 p, std::size_t seg) const;

  std::vector<Vec2> points_;  // for closed paths the first point is repeated at the end
  std::vector<double> cumulative_;
  bool closed_{false};
};

/// Straight legs joined by circular fillets of at most `radius` (smaller when a leg is too short),
/// sampled every `spacing` meters along the arcs.
Polyline make_filleted_path(const std::vector<Vec2>& waypoints, double radius, double spacing = 0.5);

/// Circle traversed counter-clockwise starting at `start_angle`.
Polyline make_circle(Vec2 center, double radius, int segments, double start_angle = 0.0);

}  // namespace emts
