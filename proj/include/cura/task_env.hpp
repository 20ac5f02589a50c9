#pragma once

#include "cura/geometry.hpp"
#include "cura/nn.hpp"
#include "cura/perception.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cura::env {

using geom::Action;
using geom::OrientedRect;
using geom::Pose2D;
using geom::Vec2;
using geom::WorldState;

enum class Scenario { Uniform, Adversarial };
std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

struct EpisodeConfig {
  double object_size = 1.0;
  std::vector<double> obstacle_sizes = {0.4, 0.6, 1.0};
  // Upper bound; the per-episode count is uniform in [0, obstacle_count]
  // unless fixed_obstacle_count is set.
  int obstacle_count = 6;
  bool fixed_obstacle_count = false;
  Scenario scenario = Scenario::Uniform;
  double spawn_band_near = 3.0;
  double spawn_band_far = 11.0;
  double spawn_lateral = 3.0;
  double spawn_window_fraction = 0.6;
  int spawn_redraws = 20;
  double spawn_clearance = 0.3;
  double timeout = 50.0;
  double dt = 0.2;
  double reach_radius = 1.2;
  double success_tolerance = 0.2;
  double world_scale = 1.0;
  double v_max = 0.8;
  double pusher_v_max = 0.8;
  double base_radius = 0.4;
  double pusher_radius = 0.1;

  void validate() const;
  double scaled(double meters) const { return meters * world_scale; }
};

struct RewardConfig {
  std::array<double, 6> w = {4.0, 2.0, 1.0, 1.0, -0.1, -0.1};
};

struct SensorConfig {
  int beam_count = 180;
  double max_range = 10.0;
  double alpha = 0.9;
  double resolution = 0.1;
  double map_margin = 2.0;
  perception::OcclusionMode occlusion = perception::OcclusionMode::Realistic;
  // When false the map latent is replaced by zeros of the same dimension.
  bool use_latent = true;
};

struct EnvOptions {
  EpisodeConfig episode;
  RewardConfig reward;
  SensorConfig sensor;
  // Pin the pusher to the base front (no kinematic redundancy).
  bool base_only = false;

  geom::KinematicLimits limits() const;
};

// Axis-aligned regions of the workspace, already scaled.
struct Workspace {
  double start_x_lo, start_x_hi, start_y_lo, start_y_hi;
  double goal_x_lo, goal_x_hi, goal_y_lo, goal_y_hi;
  double min_x, max_x, min_y, max_y;  // extent covered by any body
};
Workspace workspace(const EpisodeConfig& cfg);

struct ScheduledObstacle {
  double time = 0.0;
  double size = 0.0;
  Pose2D pose;              // first draw
  std::uint64_t redraw_seed = 0;
  bool done = false;
};

struct ObstacleSchedule {
  Scenario scenario = Scenario::Uniform;
  Vec2 path_start = Vec2::Zero();  // initial object position
  Vec2 path_goal = Vec2::Zero();
  std::vector<ScheduledObstacle> entries;  // sorted by time
  std::size_t next = 0;

  // Stable digest of times, sizes, and poses (for paired-evaluation checks).
  std::uint64_t hash() const;
};

struct SpawnEvent {
  double time = 0.0;
  std::size_t entry = 0;
  bool placed = false;
  int draws = 0;
};

struct EpisodeSetup {
  WorldState world;
  ObstacleSchedule schedule;
  Vec2 contact_target_local = Vec2::Zero();  // on the rear face, object frame
};

// Samples start/goal poses, robot placement and the obstacle schedule.
EpisodeSetup sample_episode(const EpisodeConfig& cfg, bool base_only, std::uint64_t seed);

// Draws an obstacle pose for the scenario from `rng`.
Pose2D draw_obstacle_pose(const EpisodeConfig& cfg, const ObstacleSchedule& schedule, double size,
                          std::mt19937_64& rng);

// Inserts every obstacle whose time has come. A placement that would overlap
// the object, the base disc, the pusher disc, or another obstacle (inflated by
// the spawn clearance) is redrawn up to cfg.spawn_redraws times, else skipped.
std::vector<SpawnEvent> spawn_pending(WorldState& world, ObstacleSchedule& schedule, double sim_time,
                                      const EpisodeConfig& cfg);

bool spawn_conflicts(const WorldState& world, const OrientedRect& candidate, const EpisodeConfig& cfg);

struct Observation {
  nn::Vector proprio;  // pusher pos (2), pusher vel (2), base vel (2), previous action (4)
  nn::Vector object;   // object pose (x, y, yaw) and velocity (vx, vy, omega)
  nn::Vector goal;     // goal pose (x, y, yaw)
  nn::Vector latent;

  nn::Vector flatten() const;
};

inline constexpr int kProprioDim = 10;
inline constexpr int kObjectDim = 6;
inline constexpr int kGoalDim = 3;
inline constexpr int kLowDim = kProprioDim + kObjectDim + kGoalDim;

// All poses and velocities in the base frame; velocities by finite difference over dt.
Observation assemble_observation(const WorldState& world, const WorldState& prev_world, const Action& prev_action,
                                 const nn::Vector& latent, double dt);

// Per-feature multipliers applied before the networks (positions in units of 5 m).
nn::Vector feature_scale(int latent_dim);

// Object corners and the corresponding goal corners (same extents, goal pose).
std::array<Vec2, 4> goal_corners(const WorldState& world);
double keypoint_distance(const WorldState& world);       // L2 over the stacked 8-vector
double mean_keypoint_distance(const WorldState& world);  // mean corner distance

struct RewardBreakdown {
  double total = 0.0;
  std::array<double, 6> components{};
};

// `prev2_action` is the command before `prev_action` (for the second difference).
RewardBreakdown compute_reward(const WorldState& prev, const WorldState& cur, const Action& action,
                               const Action& prev_action, const Action& prev2_action,
                               const Vec2& contact_target_world, const RewardConfig& cfg, double v_max, double dt);

struct Termination {
  bool collision = false;
  bool success = false;
  bool terminal = false;
  bool timeout = false;
};

Termination check_termination(const WorldState& world, const EpisodeConfig& cfg);

struct StepResult {
  Observation observation;
  double reward = 0.0;
  std::array<double, 6> reward_components{};
  int collision = 0;
  bool terminal = false;
  bool success = false;
  bool timeout = false;
  Action applied_action;  // after clamping and base-only pinning
  std::vector<SpawnEvent> spawns;
};

perception::ConfidenceMap make_confidence_map(const EpisodeConfig& cfg, const SensorConfig& sensor);

// One episode instance: world, confidence map, schedule, RNG-derived setup.
class TaskEnv {
 public:
  TaskEnv(EnvOptions options, std::shared_ptr<const perception::MapEncoder> encoder);

  Observation reset(std::uint64_t seed);
  StepResult step(const Action& action);

  const WorldState& world() const { return world_; }
  const perception::ConfidenceMap& map() const { return map_; }
  const ObstacleSchedule& schedule() const { return schedule_; }
  const EnvOptions& options() const { return options_; }
  const perception::LidarScan& last_scan() const { return scan_; }
  Vec2 contact_target() const;
  int latent_dim() const;
  int observation_dim() const { return kLowDim + latent_dim(); }
  int steps() const { return steps_; }
  void set_episode_config(const EpisodeConfig& cfg);

 private:
  nn::Vector latent() const;

  EnvOptions options_;
  std::shared_ptr<const perception::MapEncoder> encoder_;
  perception::ConfidenceMap map_;
  perception::LidarScan scan_;
  WorldState world_;
  ObstacleSchedule schedule_;
  Vec2 contact_local_ = Vec2::Zero();
  Action prev_action_;
  Action prev2_action_;
  int steps_ = 0;
};

// Pooled local windows from episodes driven by uniformly random actions.
std::vector<nn::Vector> collect_random_windows(const EnvOptions& options, int episodes, int stride,
                                               int pool_factor, std::uint64_t seed);

}  // namespace cura::env
