#include "cura/perception.hpp"
#include "cura/task_env.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace cura;
using namespace cura::perception;
using geom::OrientedRect;

namespace {

WorldState scene_with_object_and_obstacle() {
  WorldState w;
  w.base = {0.0, 0.0, 0.0};
  w.pusher = Vec2(0.6, 0.0);
  w.object = {{2.0, 0.0, 0.0}, 0.5, 0.5};
  w.obstacles.push_back({{5.0, 0.0, 0.0}, 0.5, 0.5});
  return w;
}

// A scan with `n` free beams of length `range` (nothing hit).
LidarScan free_scan(int n, double range) {
  LidarScan s;
  s.beam_count = n;
  s.max_range = range;
  for (int i = 0; i < n; ++i) {
    s.angles.push_back(2.0 * geom::kPi * i / n);
    s.ranges.push_back(range);
    s.hit_is_object.push_back(0);
  }
  return s;
}

LidarScan empty_scan() { return free_scan(0, 1.0); }

}  // namespace

TEST_CASE("nearer body wins in realistic mode, object is ignored when filtered") {
  const auto w = scene_with_object_and_obstacle();
  const auto real = simulate_lidar(w, 180, 10.0, OcclusionMode::Realistic);
  const auto filt = simulate_lidar(w, 180, 10.0, OcclusionMode::ObjectFiltered);
  CHECK(real.angles[0] == 0.0);
  CHECK(real.ranges[0] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(real.hit_is_object[0] == 1);
  CHECK(filt.ranges[0] == doctest::Approx(4.5).epsilon(1e-12));
  CHECK(filt.hit_is_object[0] == 0);
}

TEST_CASE("empty scene gives max range everywhere") {
  WorldState w;
  w.object = {{100.0, 100.0, 0.0}, 0.5, 0.5};
  const auto s = simulate_lidar(w, 180, 10.0, OcclusionMode::ObjectFiltered);
  REQUIRE(s.beam_count == 180);
  for (double r : s.ranges) CHECK(r == 10.0);
  CHECK(s.angles[90] == doctest::Approx(geom::kPi));
}

TEST_CASE("occlusion only shortens beams") {
  std::mt19937_64 rng(2);
  for (int scene = 0; scene < 200; ++scene) {
    WorldState w;
    w.base = {oracle::uniform(rng, -1, 1), oracle::uniform(rng, -1, 1), oracle::uniform(rng, -3, 3)};
    w.object = oracle::random_rect(rng, 4.0, 0.2, 0.6);
    for (int k = 0; k < 4; ++k) w.obstacles.push_back(oracle::random_rect(rng, 6.0, 0.2, 0.5));
    const auto real = simulate_lidar(w, 90, 10.0, OcclusionMode::Realistic);
    const auto filt = simulate_lidar(w, 90, 10.0, OcclusionMode::ObjectFiltered);
    for (int i = 0; i < 90; ++i) REQUIRE(real.ranges[i] <= filt.ranges[i]);
  }
}

TEST_CASE("observed cells are exactly one and decay by alpha per step") {
  ConfidenceMap map(Vec2(-5, -5), 0.1, 100, 100, 0.9);
  const Pose2D base{0.0, 0.0, 0.0};
  map.update(free_scan(8, 2.0), base);
  const auto [cx, cy] = map.cell_of(Vec2(1.0, 0.0));
  CHECK(map.value(cx, cy) == 1.0);
  CHECK(map.label(cx, cy) == CellLabel::Free);
  CHECK(map.observed_at_current_step(cx, cy));
  double expected = 1.0;
  for (int k = 1; k <= 40; ++k) {
    map.update(empty_scan(), base);
    expected *= 0.9;
    CHECK(std::abs(map.value(cx, cy) - expected) < 1e-12);
  }
  CHECK(map.label(cx, cy) == CellLabel::Free);  // labels persist
  map.update(free_scan(8, 2.0), base);
  CHECK(map.value(cx, cy) == 1.0);
}

TEST_CASE("three unobserved steps give 0.729") {
  ConfidenceMap map(Vec2(-5, -5), 0.1, 100, 100, 0.9);
  map.update(free_scan(16, 1.0), {0, 0, 0});
  for (int k = 0; k < 3; ++k) map.update(empty_scan(), {0, 0, 0});
  const auto [x, y] = map.cell_of(Vec2(0.5, 0.0));
  CHECK(map.value(x, y) == doctest::Approx(0.729).epsilon(1e-12));
}

TEST_CASE("alpha near zero leaves only the current observation") {
  ConfidenceMap map(Vec2(-5, -5), 0.1, 100, 100, 1e-300);
  map.update(free_scan(32, 3.0), {0, 0, 0});
  map.update(free_scan(32, 1.0), {0, 0, 0});
  const auto v = map.values();
  for (Eigen::Index i = 0; i < v.size(); ++i) CHECK((v.data()[i] == 1.0 || v.data()[i] < 1e-200));
  const auto [x, y] = map.cell_of(Vec2(2.5, 0.0));
  CHECK(map.value(x, y) < 1e-200);
}

TEST_CASE("hit cells are labelled and values stay in [0, 1]") {
  const auto w = scene_with_object_and_obstacle();
  ConfidenceMap map(Vec2(-3, -5), 0.1, 150, 100, 0.9);
  for (int t = 0; t < 5; ++t) map.update(simulate_lidar(w, 180, 10.0), w.base);
  const auto [hx, hy] = map.cell_of(Vec2(1.5, 0.0));
  CHECK(map.label(hx, hy) == CellLabel::Hit);
  CHECK(map.signed_value(hx, hy) == -1.0);
  const auto v = map.values();
  CHECK(v.minCoeff() >= 0.0);
  CHECK(v.maxCoeff() <= 1.0);
}

TEST_CASE("local window indexes the map around the base cell") {
  ConfidenceMap map(Vec2(-5, -5), 0.1, 100, 100, 0.9);
  const Pose2D centre{0.0, 0.0, 0.0};
  map.update(free_scan(4000, 8.0), centre);
  const auto w = local_window(map, centre);
  REQUIRE(w.rows() == kWindowSize);
  REQUIRE(w.cols() == kWindowSize);
  int seen = 0;
  for (int i = 0; i < 100; ++i) {
    for (int j = 0; j < 100; ++j) {
      CHECK(w(i, j) == map.signed_value(i, j));
      seen += w(i, j) == 1.0 ? 1 : 0;
    }
  }
  // A ray fan leaves a few isolated cells unvisited far from the origin.
  CHECK(seen > 9900);

  const auto corner_cell = map.cell_center(0, 0);
  const auto c = local_window(map, {corner_cell.x(), corner_cell.y(), 0.0});
  CHECK(c.block(0, 0, 50, 100).cwiseAbs().maxCoeff() == 0.0);
  CHECK(c.block(0, 0, 100, 50).cwiseAbs().maxCoeff() == 0.0);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j) CHECK(c(50 + i, 50 + j) == map.signed_value(i, j));
}

TEST_CASE("window shifts with the base over a frozen map") {
  const auto w = scene_with_object_and_obstacle();
  ConfidenceMap map(Vec2(-6, -6), 0.1, 160, 120, 0.9);
  for (int t = 0; t < 3; ++t) map.update(simulate_lidar(w, 180, 10.0), {t * 0.3, 0.1 * t, 0.0});
  const auto base_cell = map.cell_center(60, 60);
  const auto a = local_window(map, {base_cell.x(), base_cell.y(), 0.0});
  const auto b = local_window(map, {base_cell.x() + 1.0, base_cell.y(), 0.0});
  CHECK(a.block(10, 0, 90, 100) == b.block(0, 0, 90, 100));
}

TEST_CASE("pgm dump has the expected header and size") {
  ConfidenceMap map(Vec2(0, 0), 0.1, 30, 20, 0.9);
  map.update(free_scan(64, 1.0), {1.5, 1.0, 0.0});
  const auto path = std::filesystem::temp_directory_path() / "cura_test_map.pgm";
  write_pgm(path, map);
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxv = 0;
  in >> magic >> w >> h >> maxv;
  CHECK(magic == "P5");
  CHECK(w == 30);
  CHECK(h == 20);
  CHECK(maxv == 255);
  in.get();
  std::string pixels((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(pixels.size() == 600u);
  std::filesystem::remove(path);
}

TEST_CASE("signed max pooling keeps the largest magnitude, hits win ties") {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(4, 4);
  w(0, 0) = 0.5;
  w(1, 1) = -0.7;
  w(2, 2) = 0.9;
  w(3, 3) = -0.9;
  w(0, 2) = 0.3;
  const auto p = max_pool_signed(w, 2);
  CHECK(p[0] == -0.7);
  CHECK(p[3] == -0.9);
  CHECK(p[2] == 0.3);
  CHECK(p[1] == 0.0);
}

TEST_CASE("pool encoder is a 10x10 average") {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(100, 100);
  w.block(0, 0, 10, 10).setConstant(0.5);
  const PoolEncoder enc;
  const auto z = enc.encode(w);
  REQUIRE(z.size() == 100);
  CHECK(z[0] == doctest::Approx(0.5));
  CHECK(z.tail(99).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pretrained encoder: deterministic, discriminative, better than the mean image") {
  env::EnvOptions opts;
  const auto windows = env::collect_random_windows(opts, 24, 2, 4, 99);
  REQUIRE(windows.size() > 500);
  const std::size_t held = windows.size() / 5;
  std::vector<nn::Vector> train(windows.begin(), windows.end() - static_cast<long>(held));
  std::vector<nn::Vector> test(windows.end() - static_cast<long>(held), windows.end());
  VaeOptions vo;
  vo.epochs = 6;
  VaeTrainStats stats;
  const auto enc = pretrain_encoder(train, vo, 5, &stats);
  CHECK(enc.latent_dim() == 32);

  Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(100, 100), ones = Eigen::MatrixXd::Ones(100, 100);
  CHECK(enc.encode(ones) == enc.encode(ones));
  CHECK((enc.encode(zeros) - enc.encode(ones)).norm() > 0.0);

  nn::Vector mean = nn::Vector::Zero(train.front().size());
  for (const auto& w : train) mean += w;
  mean /= static_cast<double>(train.size());
  double vae_err = 0.0, mean_err = 0.0;
  for (const auto& w : test) {
    vae_err += (enc.decode(enc.encode_pooled(w)) - w).squaredNorm();
    mean_err += (mean - w).squaredNorm();
  }
  CHECK(vae_err < mean_err);

  const auto dir = std::filesystem::temp_directory_path() / "cura_test_vae";
  enc.save(dir);
  const auto loaded = VaeEncoder::load(dir);
  CHECK(loaded.encode_pooled(test.front()) == enc.encode_pooled(test.front()));
  CHECK(loaded.pool_factor() == 4);
  std::filesystem::remove_all(dir);
}

TEST_CASE("pretraining an empty corpus fails") {
  std::vector<nn::Vector> none;
  CHECK_THROWS_AS(pretrain_encoder(none, VaeOptions{}, 1), std::invalid_argument);
}
