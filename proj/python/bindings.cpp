#include "cura/config.hpp"
#include "cura/dce.hpp"
#include "cura/experiment.hpp"
#include "cura/geometry.hpp"
#include "cura/perception.hpp"
#include "cura/stats.hpp"
#include "cura/task_env.hpp"
#include "cura/trainer.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace cura;

namespace {

exp::RunConfig make_config(const std::string& variant, std::uint64_t seed, int iterations,
                           const std::map<std::string, std::string>& overrides) {
  exp::RunConfig cfg;
  for (const auto& [k, v] : overrides) exp::set_config_value(cfg, k, v);
  cfg.variant = variant;
  cfg.seed = seed;
  cfg.iterations = iterations;
  return cfg;
}

py::dict cell_dict(const exp::EvalCell& c) {
  py::dict d;
  d["scenario"] = env::to_string(c.scenario);
  d["object_size"] = c.object_size;
  d["episodes"] = c.episodes;
  d["success_rate"] = c.success_rate;
  d["collision_rate"] = c.collision_rate;
  d["timeout_rate"] = c.timeout_rate;
  d["mean_length"] = c.mean_length;
  d["mean_final_uncertainty"] = c.mean_final_uncertainty;
  return d;
}

}  // namespace

PYBIND11_MODULE(_cura, m) {
  m.doc() = "Risk- and uncertainty-aware pushing: simulator, DCE and PPO building blocks";
  m.attr("__version__") = exp::version_stamp();

  // geometry
  py::class_<geom::Pose2D>(m, "Pose2D")
      .def(py::init<>())
      .def(py::init([](double x, double y, double yaw) { return geom::Pose2D{x, y, yaw}; }), py::arg("x"),
           py::arg("y"), py::arg("yaw") = 0.0)
      .def_readwrite("x", &geom::Pose2D::x)
      .def_readwrite("y", &geom::Pose2D::y)
      .def_readwrite("yaw", &geom::Pose2D::yaw);

  py::class_<geom::OrientedRect>(m, "OrientedRect")
      .def(py::init([](const geom::Pose2D& pose, double half_width, double half_depth) {
             return geom::OrientedRect{pose, half_width, half_depth};
           }),
           py::arg("pose"), py::arg("half_width"), py::arg("half_depth"))
      .def_readwrite("pose", &geom::OrientedRect::pose)
      .def_readwrite("half_width", &geom::OrientedRect::half_width)
      .def_readwrite("half_depth", &geom::OrientedRect::half_depth)
      .def("corners", [](const geom::OrientedRect& r) {
        const auto c = r.corners();
        Eigen::Matrix<double, 4, 2> out;
        for (int i = 0; i < 4; ++i) out.row(i) = c[static_cast<std::size_t>(i)].transpose();
        return out;
      });

  m.def("rect_overlap", &geom::rect_overlap, py::arg("a"), py::arg("b"));
  m.def(
      "ray_cast",
      [](const geom::Vec2& origin, double angle, const std::vector<geom::OrientedRect>& bodies, double max_range) {
        const auto hit = geom::ray_cast(origin, angle, bodies, max_range);
        return py::make_tuple(hit.distance, hit.index ? py::cast(*hit.index) : py::none());
      },
      py::arg("origin"), py::arg("angle"), py::arg("bodies"), py::arg("max_range"),
      "Distance to the first body along the ray and its index (None when nothing is hit).");

  // dce
  m.def(
      "energy_distance_loss",
      [](const nn::Vector& pred, const nn::Vector& target) {
        const auto r = dce::energy_distance_loss(dce::QuantileSet{pred}, dce::QuantileSet{target});
        return py::make_tuple(r.loss, r.grad);
      },
      py::arg("pred"), py::arg("target"), "Energy distance between two atom sets and its gradient w.r.t. pred.");
  m.def(
      "risk_and_uncertainty",
      [](const nn::Vector& q) {
        const auto r = dce::risk_and_uncertainty(q);
        return py::make_tuple(r.risk, r.uncertainty);
      },
      py::arg("quantiles"));
  m.def(
      "bellman_targets",
      [](int collision, bool terminal, const nn::Vector& next, double gamma_c) {
        return dce::bellman_targets(collision, terminal, dce::QuantileSet{next}, dce::CollisionDiscount{gamma_c})
            .values;
      },
      py::arg("collision"), py::arg("terminal"), py::arg("next_quantiles"), py::arg("gamma_c") = 0.9);

  // trainer math
  m.def(
      "gae_advantages",
      [](const nn::Vector& rewards, const nn::Vector& values, const nn::Vector& next_values,
         const std::vector<std::uint8_t>& terminals, int num_envs, double gamma, double lam) {
        const int horizon = static_cast<int>(rewards.size()) / num_envs;
        const auto r = train::gae_advantages(rewards, values, next_values, terminals, num_envs, horizon, gamma, lam);
        return py::make_tuple(r.advantages, r.value_targets);
      },
      py::arg("rewards"), py::arg("values"), py::arg("next_values"), py::arg("terminals"), py::arg("num_envs") = 1,
      py::arg("gamma") = 0.99, py::arg("gae_lambda") = 0.95);
  m.def("normalize_costs", &train::normalize_costs, py::arg("x"));
  m.def("risk_cost", &train::risk_cost, py::arg("collision"), py::arg("terminal"), py::arg("risk_t"),
        py::arg("risk_next"), py::arg("gamma_c") = 0.9);
  m.def("uncertainty_cost", &train::uncertainty_cost, py::arg("u_t"), py::arg("u_next"), py::arg("terminal"));
  m.def("ppo_actor_loss", &train::ppo_actor_loss, py::arg("logp_new"), py::arg("logp_old"), py::arg("advantages"),
        py::arg("eps") = 0.2);
  m.def("cura_actor_loss", &train::cura_actor_loss, py::arg("logp_new"), py::arg("logp_old"),
        py::arg("advantages"), py::arg("risk_norm"), py::arg("uncertainty_norm"), py::arg("lambda_r"),
        py::arg("lambda_u"), py::arg("eps") = 0.2);

  // stats
  m.def(
      "wilcoxon_signed_rank",
      [](const std::vector<double>& a, const std::vector<double>& b, const std::string& alternative) {
        auto alt = stats::Alternative::TwoSided;
        if (alternative == "less") alt = stats::Alternative::Less;
        else if (alternative == "greater") alt = stats::Alternative::Greater;
        else if (alternative != "two-sided") throw std::invalid_argument("alternative: two-sided, less or greater");
        const auto r = stats::wilcoxon_signed_rank(a, b, alt);
        py::dict d;
        d["n"] = r.n;
        d["w_plus"] = r.w_plus;
        d["z"] = r.z;
        d["p_value"] = r.p_value;
        return d;
      },
      py::arg("a"), py::arg("b"), py::arg("alternative") = "two-sided");
  m.def("ks_distance", &stats::ks_distance, py::arg("a"), py::arg("b"));

  // environment
  py::class_<env::TaskEnv>(m, "TaskEnv")
      .def(py::init([](const std::string& variant, const std::map<std::string, std::string>& overrides) {
             auto cfg = make_config(variant, 1, 1, overrides);
             exp::find_variant(variant).apply(cfg);
             return env::TaskEnv(exp::env_options(cfg), std::make_shared<perception::PoolEncoder>());
           }),
           py::arg("variant") = "cura_ppo", py::arg("overrides") = std::map<std::string, std::string>{},
           "Environment with the variant's sensing and the deterministic pooling encoder.")
      .def("reset", [](env::TaskEnv& e, std::uint64_t seed) { return e.reset(seed).flatten(); }, py::arg("seed"))
      .def(
          "step",
          [](env::TaskEnv& e, const Eigen::Vector4d& action) {
            const auto r = e.step(geom::Action::from_vector(action));
            py::dict info;
            info["collision"] = r.collision;
            info["success"] = r.success;
            info["timeout"] = r.timeout;
            info["reward_components"] = r.reward_components;
            return py::make_tuple(r.observation.flatten(), r.reward, r.terminal, info);
          },
          py::arg("action"), "Returns (observation, reward, terminal, info).")
      .def_property_readonly("observation_dim", &env::TaskEnv::observation_dim)
      .def("state", [](const env::TaskEnv& e) { return geom::format_state(e.world()); })
      .def("confidence_map", [](const env::TaskEnv& e) { return e.map().values(); });

  // experiments
  m.def("variants", [] {
    std::vector<std::string> names;
    for (const auto& v : exp::all_variants()) names.push_back(v.name);
    return names;
  });
  m.def(
      "train",
      [](const std::string& variant, const std::filesystem::path& out_dir, std::uint64_t seed, int iterations,
         const std::map<std::string, std::string>& overrides) {
        const auto cfg = make_config(variant, seed, iterations, overrides);
        py::gil_scoped_release release;
        exp::run_training(cfg, out_dir);
      },
      py::arg("variant"), py::arg("out_dir"), py::arg("seed") = 1, py::arg("iterations") = 300,
      py::arg("overrides") = std::map<std::string, std::string>{},
      "Trains one variant into out_dir. `overrides` maps config keys to values.");
  m.def(
      "evaluate",
      [](const std::filesystem::path& run_dir, int episodes, const std::vector<std::string>& scenarios,
         const std::vector<double>& object_sizes, std::uint64_t seed, std::optional<int> obstacles) {
        exp::EvalOptions opts;
        opts.episodes = episodes;
        opts.scenarios.clear();
        for (const auto& s : scenarios) opts.scenarios.push_back(env::scenario_from_string(s));
        opts.object_sizes = object_sizes;
        opts.seed = seed;
        opts.obstacle_count = obstacles;
        exp::EvalReport rep;
        {
          py::gil_scoped_release release;
          rep = exp::run_eval(exp::load_run(run_dir), opts);
        }
        py::list cells;
        for (const auto& c : rep.cells) cells.append(cell_dict(c));
        return cells;
      },
      py::arg("run_dir"), py::arg("episodes") = 300,
      py::arg("scenarios") = std::vector<std::string>{"uniform", "adversarial"},
      py::arg("object_sizes") = std::vector<double>{1.0}, py::arg("seed") = 1000,
      py::arg("obstacles") = std::nullopt, "Paired deterministic evaluation; one dict per (scenario, size) cell.");
  m.def("format_config", [](const std::map<std::string, std::string>& overrides) {
    return exp::format_config(make_config("cura_ppo", 1, 300, overrides));
  }, py::arg("overrides") = std::map<std::string, std::string>{});
}
