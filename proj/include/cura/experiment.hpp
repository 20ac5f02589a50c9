#pragma once

#include "cura/config.hpp"
#include "cura/perception.hpp"
#include "cura/task_env.hpp"
#include "cura/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cura::exp {

const char* version_stamp();

struct VariantSpec {
  std::string name;
  perception::OcclusionMode occlusion = perception::OcclusionMode::Realistic;
  bool use_latent = true;
  double lambda_r = 0.0;
  double lambda_u = 0.0;
  bool base_only = false;

  // Overwrites the derived flags in `cfg` (the variant always wins).
  void apply(RunConfig& cfg) const;
};

const std::vector<VariantSpec>& all_variants();
// Throws std::invalid_argument for unknown names.
const VariantSpec& find_variant(const std::string& name);

env::EnvOptions env_options(const RunConfig& cfg);
train::TrainConfig train_config(const RunConfig& cfg, const std::filesystem::path& out_dir);

// Pretrains the map encoder described by `cfg` and saves it to `dir`.
std::shared_ptr<const perception::MapEncoder> pretrain_encoder_to(const RunConfig& cfg,
                                                                  const std::filesystem::path& dir,
                                                                  perception::VaeTrainStats* stats = nullptr);
std::shared_ptr<const perception::MapEncoder> load_encoder(const std::filesystem::path& dir);

// Writes config.txt, run_info.txt, encoder/, training_log.csv and
// checkpoints into `out_dir`. With `resume`, continues from out_dir/latest.
void run_training(RunConfig cfg, const std::filesystem::path& out_dir, bool resume = false,
                  const std::function<void(const train::IterationLog&)>& progress = {});

struct LoadedRun {
  RunConfig config;
  std::shared_ptr<const perception::MapEncoder> encoder;
  train::Networks nets;
};

// Loads a run directory; `checkpoint` defaults to run_dir/latest.
LoadedRun load_run(const std::filesystem::path& run_dir, const std::optional<std::filesystem::path>& checkpoint = {});

enum class Outcome { Success, Collision, Timeout };
std::string to_string(Outcome o);

struct EpisodeRecord {
  std::uint64_t seed = 0;
  env::Scenario scenario = env::Scenario::Uniform;
  double object_size = 1.0;
  Outcome outcome = Outcome::Timeout;
  int steps = 0;
  double final_uncertainty = 0.0;
  std::uint64_t schedule_hash = 0;
  std::vector<double> uncertainty;  // DCE variance at o_0 .. o_steps
  std::vector<int> spawn_steps;     // observation index right after each placed spawn
  double max_pusher_offset_error = 0.0;  // deviation from the pinned offset (base-only runs)
};

struct EvalCell {
  env::Scenario scenario = env::Scenario::Uniform;
  double object_size = 1.0;
  int episodes = 0;
  double success_rate = 0.0;
  double collision_rate = 0.0;
  double timeout_rate = 0.0;
  double mean_length = 0.0;
  double mean_final_uncertainty = 0.0;
  std::vector<EpisodeRecord> records;
};

struct EvalOptions {
  std::vector<env::Scenario> scenarios = {env::Scenario::Uniform, env::Scenario::Adversarial};
  std::vector<double> object_sizes = {0.5, 0.75, 1.0};
  int episodes = 300;
  std::uint64_t seed = 1000;
  int jobs = 1;
  std::optional<int> obstacle_count;  // overrides the trained config
};

struct EvalReport {
  std::string variant;
  std::uint64_t train_seed = 0;
  std::uint64_t eval_seed = 0;
  std::vector<EvalCell> cells;
};

// Seed of the k-th evaluation episode; shared by every variant (paired evaluation).
std::uint64_t eval_episode_seed(std::uint64_t eval_seed, int k);

// One deterministic (mean-action) episode.
EpisodeRecord run_episode(const LoadedRun& run, const env::EpisodeConfig& episode, std::uint64_t seed);

EvalReport run_eval(const LoadedRun& run, const EvalOptions& options);

void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
void write_episodes_csv(const EvalReport& report, const std::filesystem::path& path);
std::vector<EvalReport> read_report_csv(const std::filesystem::path& path);

// Success rates in a variant x (scenario, size) grid, averaged over reports of the same variant.
std::string format_success_table(const std::vector<EvalReport>& reports);

// Mean slope of the uncertainty trace over `window` steps after each spawn
// event; empty when the episode had no usable event.
std::optional<double> post_spawn_uncertainty_slope(const EpisodeRecord& record, int window = 10);

struct DumpResult {
  int steps = 0;
  Outcome outcome = Outcome::Timeout;
};

// Writes trace.txt, trace_exact.txt, actions.txt, quantiles.csv, maps/ and
// config.txt into `out_dir` for one deterministic episode.
DumpResult dump_trajectory(const LoadedRun& run, const env::EpisodeConfig& episode, std::uint64_t seed,
                           const std::filesystem::path& out_dir);

// Largest absolute difference over every field, infinity if obstacle counts differ.
double state_distance(const geom::WorldState& a, const geom::WorldState& b);

struct ReplayResult {
  int steps = 0;
  double max_error = 0.0;
};

// Re-simulates a dumped trajectory through step_kinematics.
ReplayResult replay_trajectory(const std::filesystem::path& dump_dir);

}  // namespace cura::exp
