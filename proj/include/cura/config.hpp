#pragma once

#include "cura/perception.hpp"
#include "cura/task_env.hpp"
#include "cura/trainer.hpp"

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

namespace cura::exp {

// Everything needed to reproduce a training run. Stored as `key = value`
// lines; doubles are written with 17 significant digits so files round-trip.
struct RunConfig {
  std::string variant = "cura_ppo";
  std::uint64_t seed = 1;
  env::EpisodeConfig episode;
  env::RewardConfig reward;
  env::SensorConfig sensor;
  train::CuraHyperparams hp;
  bool base_only = false;
  int iterations = 300;
  int checkpoint_every = 50;
  std::vector<env::Scenario> scenarios = {env::Scenario::Uniform, env::Scenario::Adversarial};
  std::vector<double> object_sizes = {1.0};

  std::string encoder = "vae";  // vae | pool
  std::string encoder_dir;      // reuse a pretrained encoder; empty pretrains one
  int encoder_episodes = 200;
  int encoder_stride = 2;
  std::uint64_t encoder_seed = 7;
  perception::VaeOptions vae;
};

std::string occlusion_to_string(perception::OcclusionMode m);
perception::OcclusionMode occlusion_from_string(const std::string& s);

// Throws std::invalid_argument naming the key for unknown keys or bad values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

// Lines are `key = value`; blank lines and `#` comments are ignored.
RunConfig parse_config(std::istream& in, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
std::string format_config(const RunConfig& cfg);

}  // namespace cura::exp
