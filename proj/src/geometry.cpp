#include "cura/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cura::geom {

double normalize_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

Vec2 rotate(const Vec2& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

Vec2 Pose2D::to_local(const Vec2& world_point) const {
  return rotate(world_point - position(), -yaw);
}

Vec2 Pose2D::to_world(const Vec2& local_point) const {
  return position() + rotate(local_point, yaw);
}

std::array<Vec2, 4> OrientedRect::corners() const {
  return {pose.to_world({half_width, half_depth}), pose.to_world({-half_width, half_depth}),
          pose.to_world({-half_width, -half_depth}), pose.to_world({half_width, -half_depth})};
}

bool OrientedRect::contains(const Vec2& p, double eps) const {
  const Vec2 l = pose.to_local(p);
  return std::abs(l.x()) <= half_width + eps && std::abs(l.y()) <= half_depth + eps;
}

double OrientedRect::half_diagonal() const { return std::hypot(half_width, half_depth); }

namespace {

// Projection interval of a rect onto a unit axis.
std::pair<double, double> project(const OrientedRect& r, const Vec2& axis) {
  const double c = r.pose.position().dot(axis);
  const Vec2 ux = rotate({1.0, 0.0}, r.pose.yaw);
  const Vec2 uy = rotate({0.0, 1.0}, r.pose.yaw);
  const double ext = r.half_width * std::abs(ux.dot(axis)) + r.half_depth * std::abs(uy.dot(axis));
  return {c - ext, c + ext};
}

}  // namespace

bool rect_overlap(const OrientedRect& a, const OrientedRect& b) {
  const std::array<Vec2, 4> axes = {rotate({1.0, 0.0}, a.pose.yaw), rotate({0.0, 1.0}, a.pose.yaw),
                                    rotate({1.0, 0.0}, b.pose.yaw), rotate({0.0, 1.0}, b.pose.yaw)};
  for (const auto& axis : axes) {
    const auto [amin, amax] = project(a, axis);
    const auto [bmin, bmax] = project(b, axis);
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

bool disc_rect_overlap(const Vec2& center, double radius, const OrientedRect& r) {
  const Vec2 l = r.pose.to_local(center);
  const Vec2 nearest(std::clamp(l.x(), -r.half_width, r.half_width),
                     std::clamp(l.y(), -r.half_depth, r.half_depth));
  return (l - nearest).squaredNorm() <= radius * radius;
}

std::optional<double> ray_rect(const Vec2& origin, const Vec2& dir, const OrientedRect& r) {
  const Vec2 o = r.pose.to_local(origin);
  const Vec2 d = rotate(dir, -r.pose.yaw);
  const double half[2] = {r.half_width, r.half_depth};
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 2; ++k) {
    if (d[k] == 0.0) {
      if (o[k] < -half[k] || o[k] > half[k]) return std::nullopt;
      continue;
    }
    double t0 = (-half[k] - o[k]) / d[k];
    double t1 = (half[k] - o[k]) / d[k];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
    if (t_enter > t_exit) return std::nullopt;
  }
  if (t_exit < 0.0) return std::nullopt;
  return std::max(t_enter, 0.0);
}

RayHit ray_cast(const Vec2& origin, double angle, std::span<const OrientedRect> bodies,
                double max_range) {
  const Vec2 dir(std::cos(angle), std::sin(angle));
  RayHit hit{max_range, std::nullopt};
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    const auto t = ray_rect(origin, dir, bodies[i]);
    if (t && *t < hit.distance) {
      hit.distance = *t;
      hit.index = i;
    }
  }
  return hit;
}

Eigen::Vector4d Action::as_vector() const {
  return {base_velocity.x(), base_velocity.y(), pusher_velocity.x(), pusher_velocity.y()};
}

Action Action::from_vector(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() != 4) throw std::invalid_argument("action vector must have 4 entries");
  return Action{Vec2(v[0], v[1]), Vec2(v[2], v[3])};
}

namespace {

Vec2 clamp_norm(const Vec2& v, double limit) {
  const double n = v.norm();
  if (n > limit && n > 0.0) return v * (limit / n);
  return v;
}

Vec2 clamp_to_reach(const Vec2& pusher, const Vec2& base, double reach) {
  const Vec2 rel = pusher - base;
  const double n = rel.norm();
  if (n > reach) return base + rel * (reach / n);
  return pusher;
}

struct Contact {
  Vec2 point;
  Vec2 outward_normal;  // world frame
};

// Boundary point and outward normal of the face nearest to a local point.
Contact nearest_face(const OrientedRect& r, const Vec2& local) {
  const double dx = r.half_width - std::abs(local.x());
  const double dy = r.half_depth - std::abs(local.y());
  Vec2 p = local;
  Vec2 n;
  if (dx <= dy) {
    const double s = local.x() >= 0.0 ? 1.0 : -1.0;
    p.x() = s * r.half_width;
    n = {s, 0.0};
  } else {
    const double s = local.y() >= 0.0 ? 1.0 : -1.0;
    p.y() = s * r.half_depth;
    n = {0.0, s};
  }
  return {r.pose.to_world(p), rotate(n, r.pose.yaw)};
}

std::optional<Contact> find_contact(const OrientedRect& obj, const Vec2& p0, const Vec2& p1) {
  const Vec2 local0 = obj.pose.to_local(p0);
  const bool inside0 =
      std::abs(local0.x()) <= obj.half_width + 1e-12 && std::abs(local0.y()) <= obj.half_depth + 1e-12;
  if (inside0) return nearest_face(obj, local0);
  const Vec2 d = p1 - p0;
  const double len = d.norm();
  if (len <= 0.0) return std::nullopt;
  const auto t = ray_rect(p0, d / len, obj);
  if (!t || *t > len) return std::nullopt;
  const Vec2 entry = p0 + d * (*t / len);
  Contact c = nearest_face(obj, obj.pose.to_local(entry));
  c.point = entry;
  return c;
}

}  // namespace

Action clamp_action(const Action& a, const KinematicLimits& limits) {
  return Action{clamp_norm(a.base_velocity, limits.v_max),
                clamp_norm(a.pusher_velocity, limits.pusher_v_max)};
}

WorldState step_kinematics(const WorldState& state, const Action& action, double dt,
                           const KinematicLimits& limits) {
  const Action a = clamp_action(action, limits);
  WorldState next = state;
  next.sim_time = state.sim_time + dt;

  const double yaw = state.base.yaw;
  const Vec2 base0 = state.base.position();
  Vec2 base1 = base0 + rotate(a.base_velocity, yaw) * dt;
  // The base disc cannot drive into the object.
  if (disc_rect_overlap(base1, limits.base_radius, state.object) &&
      !disc_rect_overlap(base0, limits.base_radius, state.object)) {
    base1 = base0;
  }
  next.base.x = base1.x();
  next.base.y = base1.y();

  const Vec2 p0 = state.pusher;
  Vec2 p1;
  if (limits.pinned_pusher_offset) {
    p1 = base1 + rotate({*limits.pinned_pusher_offset, 0.0}, yaw);
  } else {
    p1 = p0 + (base1 - base0) + rotate(a.pusher_velocity, yaw) * dt;
    p1 = clamp_to_reach(p1, base1, limits.reach_radius);
  }

  if (const auto contact = find_contact(state.object, p0, p1)) {
    const Vec2 inward = -contact->outward_normal;
    const double depth = (p1 - contact->point).dot(inward);
    if (depth > 0.0) {
      double scale = 1.0;
      const double max_shift = limits.v_max * dt;
      if (depth > max_shift) scale = max_shift / depth;
      const Vec2 shift = inward * (depth * scale);
      // Normal push applied at the contact point; the tangential lever arm sets the spin.
      const Vec2 lever = contact->point - state.object.pose.position();
      const double torque = lever.x() * shift.y() - lever.y() * shift.x();
      const double h = state.object.half_diagonal();
      next.object.pose.x += shift.x();
      next.object.pose.y += shift.y();
      next.object.pose.yaw = normalize_angle(next.object.pose.yaw + torque / (h * h));
    }
  }

  // Keep the pusher on the object boundary when the speed cap left it inside.
  const Vec2 local1 = next.object.pose.to_local(p1);
  if (std::abs(local1.x()) < next.object.half_width && std::abs(local1.y()) < next.object.half_depth &&
      !limits.pinned_pusher_offset) {
    p1 = nearest_face(next.object, local1).point;
  }
  if (!limits.pinned_pusher_offset) p1 = clamp_to_reach(p1, base1, limits.reach_radius);
  next.pusher = p1;
  return next;
}

namespace {

template <typename Fmt>
std::string format_with(const WorldState& s, Fmt&& put) {
  std::string out;
  auto add = [&](double v) {
    if (!out.empty()) out.push_back(' ');
    out += put(v);
  };
  add(s.sim_time);
  add(s.base.x), add(s.base.y), add(s.base.yaw);
  add(s.pusher.x()), add(s.pusher.y());
  add(s.object.pose.x), add(s.object.pose.y), add(s.object.pose.yaw);
  add(s.object.half_width), add(s.object.half_depth);
  add(s.goal.x), add(s.goal.y), add(s.goal.yaw);
  out += ' ' + std::to_string(s.obstacles.size());
  for (const auto& o : s.obstacles) {
    add(o.pose.x), add(o.pose.y), add(o.pose.yaw), add(o.half_width), add(o.half_depth);
  }
  return out;
}

}  // namespace

std::string format_state(const WorldState& s) {
  return format_with(s, [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  });
}

std::string format_state_exact(const WorldState& s) {
  return format_with(s, [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return std::string(buf);
  });
}

WorldState parse_state(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> tok;
  for (std::string t; in >> t;) tok.push_back(t);
  if (tok.size() < 15) throw std::runtime_error("state line too short");
  std::size_t i = 0;
  auto num = [&]() {
    if (i >= tok.size()) throw std::runtime_error("state line truncated");
    char* end = nullptr;
    const double v = std::strtod(tok[i].c_str(), &end);
    if (end == tok[i].c_str() || *end != '\0') throw std::runtime_error("bad number: " + tok[i]);
    ++i;
    return v;
  };
  WorldState s;
  s.sim_time = num();
  s.base = {num(), num(), num()};
  s.pusher.x() = num();
  s.pusher.y() = num();
  s.object.pose = {num(), num(), num()};
  s.object.half_width = num();
  s.object.half_depth = num();
  s.goal = {num(), num(), num()};
  const auto n = static_cast<std::size_t>(num());
  for (std::size_t k = 0; k < n; ++k) {
    OrientedRect o;
    o.pose = {num(), num(), num()};
    o.half_width = num();
    o.half_depth = num();
    s.obstacles.push_back(o);
  }
  if (i != tok.size()) throw std::runtime_error("trailing fields in state line");
  return s;
}

}  // namespace cura::geom
