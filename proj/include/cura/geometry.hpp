#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cura::geom {

using Vec2 = Eigen::Vector2d;

inline constexpr double kPi = 3.14159265358979323846;

// Wraps an angle into (-pi, pi].
double normalize_angle(double a);

Vec2 rotate(const Vec2& v, double angle);

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  Vec2 position() const { return {x, y}; }
  // World -> local frame of this pose.
  Vec2 to_local(const Vec2& world_point) const;
  Vec2 to_world(const Vec2& local_point) const;
};

// Rectangle with half extents along its local x (width) and y (depth) axes.
struct OrientedRect {
  Pose2D pose;
  double half_width = 0.5;
  double half_depth = 0.5;

  // Counter-clockwise, starting at local (+w, +d).
  std::array<Vec2, 4> corners() const;
  bool contains(const Vec2& p, double eps = 0.0) const;
  double half_diagonal() const;
};

// Touching at zero gap counts as overlap.
bool rect_overlap(const OrientedRect& a, const OrientedRect& b);

bool disc_rect_overlap(const Vec2& center, double radius, const OrientedRect& r);

struct RayHit {
  double distance = 0.0;
  std::optional<std::size_t> index;
};

// Distance along the ray to the boundary of `r`, or nullopt if missed.
// An origin inside the rectangle yields 0.
std::optional<double> ray_rect(const Vec2& origin, const Vec2& dir, const OrientedRect& r);

RayHit ray_cast(const Vec2& origin, double angle, std::span<const OrientedRect> bodies,
                double max_range);

struct WorldState {
  Pose2D base;
  Vec2 pusher = Vec2::Zero();
  OrientedRect object;
  std::vector<OrientedRect> obstacles;
  Pose2D goal;
  double sim_time = 0.0;
};

// Velocities are expressed in the base frame.
struct Action {
  Vec2 base_velocity = Vec2::Zero();
  Vec2 pusher_velocity = Vec2::Zero();

  Eigen::Vector4d as_vector() const;
  static Action from_vector(const Eigen::Ref<const Eigen::VectorXd>& v);
};

struct KinematicLimits {
  double v_max = 0.8;
  double pusher_v_max = 0.8;
  double reach_radius = 1.2;
  double base_radius = 0.4;
  // When set, the pusher is rigidly attached at this forward offset from the base.
  std::optional<double> pinned_pusher_offset;
};

Action clamp_action(const Action& a, const KinematicLimits& limits);

// Explicit Euler step with the quasi-static point-push rule. The action is
// clamped to `limits` first. Collision flags are not evaluated here.
WorldState step_kinematics(const WorldState& state, const Action& action, double dt,
                           const KinematicLimits& limits);

// Line-oriented text trace, 6 decimals, fixed field order:
// t bx by byaw px py ox oy oyaw ow od gx gy gyaw n [x y yaw w d]*n
std::string format_state(const WorldState& s);
// Same field order, hexfloat, for exact replay.
std::string format_state_exact(const WorldState& s);
WorldState parse_state(const std::string& line);

}  // namespace cura::geom
