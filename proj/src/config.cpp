#include "cura/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace cura::exp {

std::string occlusion_to_string(perception::OcclusionMode m) {
  return m == perception::OcclusionMode::Realistic ? "realistic" : "object_filtered";
}

perception::OcclusionMode occlusion_from_string(const std::string& s) {
  if (s == "realistic") return perception::OcclusionMode::Realistic;
  if (s == "object_filtered") return perception::OcclusionMode::ObjectFiltered;
  throw std::invalid_argument("unknown occlusion mode '" + s + "'");
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

long long to_int(const std::string& s) {
  std::size_t used = 0;
  const long long v = std::stoll(s, &used);
  if (used != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected true or false");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define CURA_DOUBLE(name, member) \
  Field{name, [](const RunConfig& c) { return fmt(c.member); }, [](RunConfig& c, const std::string& v) { c.member = to_double(v); }}
#define CURA_INT(name, member)                                                 \
  Field{name, [](const RunConfig& c) { return std::to_string(c.member); },     \
        [](RunConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_int(v)); }}
#define CURA_BOOL(name, member)                                                    \
  Field{name, [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.member = to_bool(v); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"variant", [](const RunConfig& c) { return c.variant; },
            [](RunConfig& c, const std::string& v) { c.variant = v; }},
      Field{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.seed = std::stoull(v); }},
      CURA_INT("iterations", iterations),
      CURA_INT("checkpoint_every", checkpoint_every),
      CURA_BOOL("base_only", base_only),
      Field{"scenarios", [](const RunConfig& c) { return join(c.scenarios, [](env::Scenario s) { return env::to_string(s); }); },
            [](RunConfig& c, const std::string& v) {
              c.scenarios.clear();
              for (const auto& s : split_list(v)) c.scenarios.push_back(env::scenario_from_string(s));
            }},
      Field{"object_sizes", [](const RunConfig& c) { return join(c.object_sizes, fmt); },
            [](RunConfig& c, const std::string& v) {
              c.object_sizes.clear();
              for (const auto& s : split_list(v)) c.object_sizes.push_back(to_double(s));
            }},

      CURA_DOUBLE("episode.object_size", episode.object_size),
      Field{"episode.obstacle_sizes", [](const RunConfig& c) { return join(c.episode.obstacle_sizes, fmt); },
            [](RunConfig& c, const std::string& v) {
              c.episode.obstacle_sizes.clear();
              for (const auto& s : split_list(v)) c.episode.obstacle_sizes.push_back(to_double(s));
            }},
      CURA_INT("episode.obstacle_count", episode.obstacle_count),
      CURA_BOOL("episode.fixed_obstacle_count", episode.fixed_obstacle_count),
      Field{"episode.scenario", [](const RunConfig& c) { return env::to_string(c.episode.scenario); },
            [](RunConfig& c, const std::string& v) { c.episode.scenario = env::scenario_from_string(v); }},
      CURA_DOUBLE("episode.spawn_band_near", episode.spawn_band_near),
      CURA_DOUBLE("episode.spawn_band_far", episode.spawn_band_far),
      CURA_DOUBLE("episode.spawn_lateral", episode.spawn_lateral),
      CURA_DOUBLE("episode.spawn_window_fraction", episode.spawn_window_fraction),
      CURA_INT("episode.spawn_redraws", episode.spawn_redraws),
      CURA_DOUBLE("episode.spawn_clearance", episode.spawn_clearance),
      CURA_DOUBLE("episode.timeout", episode.timeout),
      CURA_DOUBLE("episode.dt", episode.dt),
      CURA_DOUBLE("episode.reach_radius", episode.reach_radius),
      CURA_DOUBLE("episode.success_tolerance", episode.success_tolerance),
      CURA_DOUBLE("episode.world_scale", episode.world_scale),
      CURA_DOUBLE("episode.v_max", episode.v_max),
      CURA_DOUBLE("episode.pusher_v_max", episode.pusher_v_max),
      CURA_DOUBLE("episode.base_radius", episode.base_radius),
      CURA_DOUBLE("episode.pusher_radius", episode.pusher_radius),

      CURA_DOUBLE("reward.w1", reward.w[0]),
      CURA_DOUBLE("reward.w2", reward.w[1]),
      CURA_DOUBLE("reward.w3", reward.w[2]),
      CURA_DOUBLE("reward.w4", reward.w[3]),
      CURA_DOUBLE("reward.w5", reward.w[4]),
      CURA_DOUBLE("reward.w6", reward.w[5]),

      CURA_INT("sensor.beam_count", sensor.beam_count),
      CURA_DOUBLE("sensor.max_range", sensor.max_range),
      CURA_DOUBLE("sensor.alpha", sensor.alpha),
      CURA_DOUBLE("sensor.resolution", sensor.resolution),
      CURA_DOUBLE("sensor.map_margin", sensor.map_margin),
      Field{"sensor.occlusion", [](const RunConfig& c) { return occlusion_to_string(c.sensor.occlusion); },
            [](RunConfig& c, const std::string& v) { c.sensor.occlusion = occlusion_from_string(v); }},
      CURA_BOOL("sensor.use_latent", sensor.use_latent),

      CURA_DOUBLE("hp.lambda_r", hp.lambda_r),
      CURA_DOUBLE("hp.lambda_u", hp.lambda_u),
      CURA_DOUBLE("hp.clip_eps", hp.clip_eps),
      CURA_DOUBLE("hp.gamma", hp.gamma),
      CURA_DOUBLE("hp.gae_lambda", hp.gae_lambda),
      CURA_INT("hp.epochs", hp.epochs),
      CURA_INT("hp.minibatch", hp.minibatch),
      CURA_INT("hp.num_envs", hp.num_envs),
      CURA_INT("hp.horizon", hp.horizon),
      CURA_DOUBLE("hp.entropy_coef", hp.entropy_coef),
      CURA_DOUBLE("hp.actor_lr", hp.actor_lr),
      CURA_DOUBLE("hp.critic_lr", hp.critic_lr),
      CURA_DOUBLE("hp.dce_lr", hp.dce_lr),
      CURA_DOUBLE("hp.max_grad_norm", hp.max_grad_norm),
      CURA_DOUBLE("hp.gamma_c", hp.gamma_c),
      CURA_INT("hp.quantiles", hp.quantiles),
      CURA_INT("hp.hidden", hp.hidden),
      CURA_DOUBLE("hp.init_log_std", hp.init_log_std),
      CURA_DOUBLE("hp.reward_scale", hp.reward_scale),
      CURA_BOOL("hp.bootstrap_timeouts", hp.bootstrap_timeouts),

      Field{"encoder", [](const RunConfig& c) { return c.encoder; },
            [](RunConfig& c, const std::string& v) {
              if (v != "vae" && v != "pool") throw std::invalid_argument("expected vae or pool");
              c.encoder = v;
            }},
      Field{"encoder_dir", [](const RunConfig& c) { return c.encoder_dir; },
            [](RunConfig& c, const std::string& v) { c.encoder_dir = v; }},
      CURA_INT("encoder_episodes", encoder_episodes),
      CURA_INT("encoder_stride", encoder_stride),
      Field{"encoder_seed", [](const RunConfig& c) { return std::to_string(c.encoder_seed); },
            [](RunConfig& c, const std::string& v) { c.encoder_seed = std::stoull(v); }},
      CURA_INT("vae.pool_factor", vae.pool_factor),
      CURA_INT("vae.hidden", vae.hidden),
      CURA_INT("vae.latent_dim", vae.latent_dim),
      CURA_DOUBLE("vae.kl_weight", vae.kl_weight),
      CURA_DOUBLE("vae.lr", vae.lr),
      CURA_INT("vae.epochs", vae.epochs),
      CURA_INT("vae.batch_size", vae.batch_size),
  };
  return table;
}

#undef CURA_DOUBLE
#undef CURA_INT
#undef CURA_BOOL

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields()) {
    if (f.key != key) continue;
    try {
      f.set(cfg, value);
    } catch (const std::exception& e) {
      throw std::invalid_argument("bad value for " + key + ": '" + value + "' (" + e.what() + ")");
    }
    return;
  }
  throw std::invalid_argument("unknown config key '" + key + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

RunConfig parse_config(std::istream& in, RunConfig base) {
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + " is not key = value");
    set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  return parse_config(in, std::move(base));
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace cura::exp
