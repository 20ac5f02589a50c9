#include "cura/task_env.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace cura::env {

using geom::kPi;
using geom::normalize_angle;
using geom::rotate;

std::string to_string(Scenario s) { return s == Scenario::Uniform ? "uniform" : "adversarial"; }

Scenario scenario_from_string(const std::string& s) {
  if (s == "uniform" || s == "Uniform") return Scenario::Uniform;
  if (s == "adversarial" || s == "Adversarial") return Scenario::Adversarial;
  throw std::invalid_argument("unknown scenario: " + s);
}

void EpisodeConfig::validate() const {
  if (object_size <= 0.0) throw std::invalid_argument("object_size must be positive");
  if (obstacle_sizes.empty()) throw std::invalid_argument("obstacle_sizes must not be empty");
  for (double s : obstacle_sizes)
    if (s <= 0.0) throw std::invalid_argument("obstacle sizes must be positive");
  if (obstacle_count < 0 || obstacle_count > 6) throw std::invalid_argument("obstacle_count must lie in [0, 6]");
  if (!(spawn_band_near >= 0.0 && spawn_band_far > spawn_band_near))
    throw std::invalid_argument("spawn band must be a non-empty interval");
  if (timeout <= 0.0 || dt <= 0.0) throw std::invalid_argument("timeout and dt must be positive");
  if (reach_radius <= 0.0 || success_tolerance <= 0.0 || world_scale <= 0.0)
    throw std::invalid_argument("reach, tolerance, and world scale must be positive");
  const auto ws = workspace(*this);
  if (scaled(spawn_band_far) + ws.start_x_hi > ws.goal_x_lo)
    throw std::invalid_argument("spawn band extends past the goal region");
}

geom::KinematicLimits EnvOptions::limits() const {
  geom::KinematicLimits l;
  l.v_max = episode.v_max;
  l.pusher_v_max = episode.pusher_v_max;
  l.reach_radius = episode.scaled(episode.reach_radius);
  l.base_radius = episode.scaled(episode.base_radius);
  if (base_only) l.pinned_pusher_offset = l.base_radius + episode.scaled(0.1);
  return l;
}

Workspace workspace(const EpisodeConfig& cfg) {
  const double s = cfg.world_scale;
  return {-0.5 * s, 0.5 * s, -0.5 * s, 0.5 * s,  // start
          12.0 * s, 13.0 * s, -1.0 * s, 1.0 * s,  // goal
          -3.0 * s, 14.5 * s, -4.0 * s, 4.0 * s};
}

std::uint64_t ObstacleSchedule::hash() const {
  // FNV-1a over the raw bytes of every scheduled quantity.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](double v) {
    unsigned char b[sizeof(double)];
    std::memcpy(b, &v, sizeof v);
    for (unsigned char c : b) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  mix(static_cast<double>(scenario == Scenario::Uniform ? 0 : 1));
  mix(static_cast<double>(entries.size()));
  for (const auto& e : entries) {
    mix(e.time), mix(e.size), mix(e.pose.x), mix(e.pose.y), mix(e.pose.yaw);
    mix(static_cast<double>(e.redraw_seed));
  }
  return h;
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

OrientedRect square(const Pose2D& pose, double size) { return {pose, 0.5 * size, 0.5 * size}; }

}  // namespace

Pose2D draw_obstacle_pose(const EpisodeConfig& cfg, const ObstacleSchedule& schedule, double size,
                          std::mt19937_64& rng) {
  (void)size;
  const double yaw = uniform(rng, -kPi, kPi);
  const double along = uniform(rng, cfg.scaled(cfg.spawn_band_near), cfg.scaled(cfg.spawn_band_far));
  if (schedule.scenario == Scenario::Uniform) {
    const double lateral = uniform(rng, -cfg.scaled(cfg.spawn_lateral), cfg.scaled(cfg.spawn_lateral));
    return {schedule.path_start.x() + along, lateral, yaw};
  }
  const Vec2 delta = schedule.path_goal - schedule.path_start;
  const Vec2 u = delta / delta.norm();
  const Vec2 perp(-u.y(), u.x());
  const double half_width = 0.5 * cfg.scaled(cfg.object_size);
  const double lateral = uniform(rng, -half_width, half_width);
  const Vec2 p = schedule.path_start + along * u + lateral * perp;
  return {p.x(), p.y(), yaw};
}

EpisodeSetup sample_episode(const EpisodeConfig& cfg, bool base_only, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const auto ws = workspace(cfg);
  EpisodeSetup setup;
  WorldState& w = setup.world;

  const double half = 0.5 * cfg.scaled(cfg.object_size);
  w.object.half_width = w.object.half_depth = half;
  w.object.pose = {uniform(rng, ws.start_x_lo, ws.start_x_hi), uniform(rng, ws.start_y_lo, ws.start_y_hi),
                   uniform(rng, -0.1, 0.1)};
  w.goal = {uniform(rng, ws.goal_x_lo, ws.goal_x_hi), uniform(rng, ws.goal_y_lo, ws.goal_y_hi),
            uniform(rng, -0.1, 0.1)};

  // Robot behind the object, facing it, pusher touching the rear face.
  const Vec2 u = rotate({1.0, 0.0}, w.object.pose.yaw);
  const double offset = base_only ? cfg.scaled(cfg.base_radius + 0.1) : cfg.scaled(cfg.reach_radius);
  const Vec2 rear = w.object.pose.position() - half * u;
  const Vec2 base = rear - offset * u;
  w.base = {base.x(), base.y(), w.object.pose.yaw};
  w.pusher = rear;
  w.sim_time = 0.0;

  setup.contact_target_local = {-half, uniform(rng, -0.8 * half, 0.8 * half)};

  auto& sched = setup.schedule;
  sched.scenario = cfg.scenario;
  sched.path_start = w.object.pose.position();
  sched.path_goal = w.goal.position();
  const int count = cfg.fixed_obstacle_count
                        ? cfg.obstacle_count
                        : std::uniform_int_distribution<int>(0, cfg.obstacle_count)(rng);
  for (int k = 0; k < count; ++k) {
    ScheduledObstacle e;
    e.time = uniform(rng, 0.0, cfg.spawn_window_fraction * cfg.timeout);
    const auto pick = std::uniform_int_distribution<std::size_t>(0, cfg.obstacle_sizes.size() - 1)(rng);
    e.size = cfg.scaled(cfg.obstacle_sizes[pick]);
    e.redraw_seed = rng();
    std::mt19937_64 first(e.redraw_seed);
    e.pose = draw_obstacle_pose(cfg, sched, e.size, first);
    sched.entries.push_back(e);
  }
  std::stable_sort(sched.entries.begin(), sched.entries.end(),
                   [](const auto& a, const auto& b) { return a.time < b.time; });
  return setup;
}

bool spawn_conflicts(const WorldState& world, const OrientedRect& candidate, const EpisodeConfig& cfg) {
  OrientedRect inflated = candidate;
  inflated.half_width += cfg.scaled(cfg.spawn_clearance);
  inflated.half_depth += cfg.scaled(cfg.spawn_clearance);
  if (geom::rect_overlap(inflated, world.object)) return true;
  if (geom::disc_rect_overlap(world.base.position(), cfg.scaled(cfg.base_radius), inflated)) return true;
  if (geom::disc_rect_overlap(world.pusher, cfg.scaled(cfg.pusher_radius), inflated)) return true;
  for (const auto& o : world.obstacles)
    if (geom::rect_overlap(inflated, o)) return true;
  return false;
}

std::vector<SpawnEvent> spawn_pending(WorldState& world, ObstacleSchedule& schedule, double sim_time,
                                      const EpisodeConfig& cfg) {
  std::vector<SpawnEvent> events;
  while (schedule.next < schedule.entries.size() && schedule.entries[schedule.next].time <= sim_time) {
    auto& entry = schedule.entries[schedule.next];
    SpawnEvent ev{sim_time, schedule.next, false, 0};
    // Redraws continue the entry's own stream so they do not depend on other entries.
    std::mt19937_64 rng(entry.redraw_seed);
    draw_obstacle_pose(cfg, schedule, entry.size, rng);
    Pose2D pose = entry.pose;
    for (int attempt = 0; attempt <= cfg.spawn_redraws; ++attempt) {
      ++ev.draws;
      const OrientedRect candidate = square(pose, entry.size);
      if (!spawn_conflicts(world, candidate, cfg)) {
        world.obstacles.push_back(candidate);
        ev.placed = true;
        break;
      }
      pose = draw_obstacle_pose(cfg, schedule, entry.size, rng);
    }
    entry.done = true;
    ++schedule.next;
    events.push_back(ev);
  }
  return events;
}

nn::Vector Observation::flatten() const {
  nn::Vector v(proprio.size() + object.size() + goal.size() + latent.size());
  v << proprio, object, goal, latent;
  return v;
}

Observation assemble_observation(const WorldState& world, const WorldState& prev_world, const Action& prev_action,
                                 const nn::Vector& latent, double dt) {
  const Pose2D& base = world.base;
  const double yaw = base.yaw;
  auto vel = [&](const Vec2& now, const Vec2& before) { return rotate((now - before) / dt, -yaw); };

  Observation o;
  const Vec2 pusher = base.to_local(world.pusher);
  const Vec2 pusher_vel = vel(world.pusher, prev_world.pusher);
  const Vec2 base_vel = vel(base.position(), prev_world.base.position());
  o.proprio.resize(kProprioDim);
  o.proprio << pusher.x(), pusher.y(), pusher_vel.x(), pusher_vel.y(), base_vel.x(), base_vel.y(),
      prev_action.as_vector();

  const Vec2 obj = base.to_local(world.object.pose.position());
  const Vec2 obj_vel = vel(world.object.pose.position(), prev_world.object.pose.position());
  const double omega = normalize_angle(world.object.pose.yaw - prev_world.object.pose.yaw) / dt;
  o.object.resize(kObjectDim);
  o.object << obj.x(), obj.y(), normalize_angle(world.object.pose.yaw - yaw), obj_vel.x(), obj_vel.y(), omega;

  const Vec2 goal = base.to_local(world.goal.position());
  o.goal.resize(kGoalDim);
  o.goal << goal.x(), goal.y(), normalize_angle(world.goal.yaw - yaw);
  o.latent = latent;
  return o;
}

nn::Vector feature_scale(int latent_dim) {
  nn::Vector s = nn::Vector::Ones(kLowDim + latent_dim);
  s[kProprioDim + kObjectDim + 0] = 0.2;
  s[kProprioDim + kObjectDim + 1] = 0.2;
  return s;
}

std::array<Vec2, 4> goal_corners(const WorldState& world) {
  OrientedRect g = world.object;
  g.pose = world.goal;
  return g.corners();
}

double keypoint_distance(const WorldState& world) {
  const auto a = world.object.corners();
  const auto b = goal_corners(world);
  double sq = 0.0;
  for (int k = 0; k < 4; ++k) sq += (a[k] - b[k]).squaredNorm();
  return std::sqrt(sq);
}

double mean_keypoint_distance(const WorldState& world) {
  const auto a = world.object.corners();
  const auto b = goal_corners(world);
  double sum = 0.0;
  for (int k = 0; k < 4; ++k) sum += (a[k] - b[k]).norm();
  return 0.25 * sum;
}

RewardBreakdown compute_reward(const WorldState& prev, const WorldState& cur, const Action& action,
                               const Action& prev_action, const Action& prev2_action,
                               const Vec2& contact_target_world, const RewardConfig& cfg, double v_max, double dt) {
  RewardBreakdown r;
  auto& c = r.components;
  c[0] = cfg.w[0] * std::exp(-0.25 * keypoint_distance(cur));

  const Vec2 v_obj = (cur.object.pose.position() - prev.object.pose.position()) / dt;
  const double speed = v_obj.norm();
  // Progress is measured against the direction to the goal at the start of the step.
  const Vec2 to_goal = cur.goal.position() - prev.object.pose.position();
  double alignment = 0.0;
  if (speed >= 1e-4 && to_goal.norm() > 0.0) alignment = v_obj.dot(to_goal) / (speed * to_goal.norm());
  c[1] = cfg.w[1] * std::exp(5.0 * (alignment - 1.0));
  c[2] = cfg.w[2] * std::min(speed / v_max, 1.0);
  c[3] = cfg.w[3] * std::exp(-0.1 * (contact_target_world - cur.pusher).norm());
  c[4] = cfg.w[4] * (action.as_vector() - prev_action.as_vector()).norm();
  c[5] = cfg.w[5] * (action.as_vector() - 2.0 * prev_action.as_vector() + prev2_action.as_vector()).norm();
  for (double x : c) r.total += x;
  return r;
}

Termination check_termination(const WorldState& world, const EpisodeConfig& cfg) {
  Termination t;
  const double base_radius = cfg.scaled(cfg.base_radius);
  for (const auto& o : world.obstacles) {
    if (geom::rect_overlap(world.object, o) || geom::disc_rect_overlap(world.base.position(), base_radius, o)) {
      t.collision = true;
      break;
    }
  }
  t.success = !t.collision && mean_keypoint_distance(world) < cfg.scaled(cfg.success_tolerance);
  t.timeout = world.sim_time >= cfg.timeout - 1e-9;
  t.terminal = t.collision || t.success || t.timeout;
  return t;
}

perception::ConfidenceMap make_confidence_map(const EpisodeConfig& cfg, const SensorConfig& sensor) {
  const auto ws = workspace(cfg);
  const double margin = cfg.scaled(sensor.map_margin);
  const Vec2 origin(ws.min_x - margin, ws.min_y - margin);
  const int width = static_cast<int>(std::ceil((ws.max_x - ws.min_x + 2.0 * margin) / sensor.resolution));
  const int height = static_cast<int>(std::ceil((ws.max_y - ws.min_y + 2.0 * margin) / sensor.resolution));
  return perception::ConfidenceMap(origin, sensor.resolution, width, height, sensor.alpha);
}

TaskEnv::TaskEnv(EnvOptions options, std::shared_ptr<const perception::MapEncoder> encoder)
    : options_(std::move(options)),
      encoder_(std::move(encoder)),
      map_(make_confidence_map(options_.episode, options_.sensor)) {
  options_.episode.validate();
}

void TaskEnv::set_episode_config(const EpisodeConfig& cfg) {
  cfg.validate();
  if (cfg.world_scale != options_.episode.world_scale) map_ = make_confidence_map(cfg, options_.sensor);
  options_.episode = cfg;
}

int TaskEnv::latent_dim() const { return encoder_ ? encoder_->latent_dim() : 32; }

nn::Vector TaskEnv::latent() const {
  if (!options_.sensor.use_latent || !encoder_) return nn::Vector::Zero(latent_dim());
  return encoder_->encode(perception::local_window(map_, world_.base));
}

Vec2 TaskEnv::contact_target() const { return world_.object.pose.to_world(contact_local_); }

Observation TaskEnv::reset(std::uint64_t seed) {
  auto setup = sample_episode(options_.episode, options_.base_only, seed);
  world_ = std::move(setup.world);
  schedule_ = std::move(setup.schedule);
  contact_local_ = setup.contact_target_local;
  prev_action_ = Action{};
  prev2_action_ = Action{};
  steps_ = 0;
  map_.reset();
  spawn_pending(world_, schedule_, world_.sim_time, options_.episode);
  scan_ = perception::simulate_lidar(world_, options_.sensor.beam_count,
                                     options_.episode.scaled(options_.sensor.max_range), options_.sensor.occlusion);
  map_.update(scan_, world_.base);
  return assemble_observation(world_, world_, prev_action_, latent(), options_.episode.dt);
}

StepResult TaskEnv::step(const Action& raw_action) {
  const auto limits = options_.limits();
  Action action = geom::clamp_action(raw_action, limits);
  if (options_.base_only) action.pusher_velocity = Vec2::Zero();

  const WorldState prev = world_;
  world_ = geom::step_kinematics(world_, action, options_.episode.dt, limits);
  ++steps_;

  StepResult out;
  out.applied_action = action;
  out.spawns = spawn_pending(world_, schedule_, world_.sim_time, options_.episode);
  scan_ = perception::simulate_lidar(world_, options_.sensor.beam_count,
                                     options_.episode.scaled(options_.sensor.max_range), options_.sensor.occlusion);
  map_.update(scan_, world_.base);

  const auto term = check_termination(world_, options_.episode);
  out.collision = term.collision ? 1 : 0;
  out.success = term.success;
  out.timeout = term.timeout && !term.collision && !term.success;
  out.terminal = term.terminal;

  const auto reward = compute_reward(prev, world_, action, prev_action_, prev2_action_, contact_target(),
                                     options_.reward, limits.v_max, options_.episode.dt);
  out.reward = reward.total;
  out.reward_components = reward.components;
  out.observation = assemble_observation(world_, prev, action, latent(), options_.episode.dt);

  prev2_action_ = prev_action_;
  prev_action_ = action;
  return out;
}

std::vector<nn::Vector> collect_random_windows(const EnvOptions& options, int episodes, int stride,
                                               int pool_factor, std::uint64_t seed) {
  EnvOptions opts = options;
  opts.sensor.use_latent = false;
  TaskEnv env(opts, nullptr);
  std::mt19937_64 rng(seed);
  std::vector<nn::Vector> windows;
  const double v = opts.episode.v_max;
  for (int ep = 0; ep < episodes; ++ep) {
    env.reset(rng());
    for (int t = 0;; ++t) {
      if (t % stride == 0)
        windows.push_back(perception::max_pool_signed(perception::local_window(env.map(), env.world().base),
                                                      pool_factor));
      Action a{Vec2(uniform(rng, -v, v), uniform(rng, -v, v)), Vec2(uniform(rng, -v, v), uniform(rng, -v, v))};
      if (env.step(a).terminal) break;
    }
  }
  return windows;
}

}  // namespace cura::env
