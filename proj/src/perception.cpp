#include "cura/perception.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace cura::perception {

LidarScan simulate_lidar(const WorldState& world, int beam_count, double max_range, OcclusionMode mode) {
  if (beam_count < 8) throw std::invalid_argument("LiDAR needs at least 8 beams");
  if (max_range <= 0.0) throw std::invalid_argument("LiDAR max range must be positive");
  std::vector<geom::OrientedRect> bodies;
  bodies.reserve(world.obstacles.size() + 1);
  const bool with_object = mode == OcclusionMode::Realistic;
  if (with_object) bodies.push_back(world.object);
  bodies.insert(bodies.end(), world.obstacles.begin(), world.obstacles.end());

  LidarScan scan;
  scan.beam_count = beam_count;
  scan.max_range = max_range;
  scan.angles.resize(beam_count);
  scan.ranges.resize(beam_count);
  scan.hit_is_object.assign(beam_count, 0);
  const Vec2 origin = world.base.position();
  for (int i = 0; i < beam_count; ++i) {
    scan.angles[i] = 2.0 * geom::kPi * i / beam_count;
    const auto hit = geom::ray_cast(origin, world.base.yaw + scan.angles[i], bodies, max_range);
    scan.ranges[i] = hit.distance;
    scan.hit_is_object[i] = with_object && hit.index && *hit.index == 0;
  }
  return scan;
}

ConfidenceMap::ConfidenceMap(Vec2 origin, double resolution, int width, int height, double alpha)
    : origin_(std::move(origin)), resolution_(resolution), width_(width), height_(height), alpha_(alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("confidence decay alpha must lie in (0, 1)");
  if (resolution <= 0.0 || width <= 0 || height <= 0) throw std::invalid_argument("bad confidence map geometry");
  reset();
}

void ConfidenceMap::reset() {
  step_ = 0;
  last_seen_.assign(static_cast<std::size_t>(width_) * height_, -1);
  labels_.assign(static_cast<std::size_t>(width_) * height_, CellLabel::Unknown);
}

double ConfidenceMap::decay(std::int64_t k) const {
  if (decay_table_.empty()) decay_table_.push_back(1.0);
  while (static_cast<std::int64_t>(decay_table_.size()) <= k) decay_table_.push_back(decay_table_.back() * alpha_);
  return decay_table_[static_cast<std::size_t>(k)];
}

double ConfidenceMap::value(int ix, int iy) const {
  if (!in_bounds(ix, iy)) return 0.0;
  const auto seen = last_seen_[idx(ix, iy)];
  return seen < 0 ? 0.0 : decay(step_ - seen);
}

CellLabel ConfidenceMap::label(int ix, int iy) const {
  return in_bounds(ix, iy) ? labels_[idx(ix, iy)] : CellLabel::Unknown;
}

double ConfidenceMap::signed_value(int ix, int iy) const {
  if (!in_bounds(ix, iy)) return 0.0;
  return value(ix, iy) * static_cast<double>(static_cast<int>(labels_[idx(ix, iy)]));
}

bool ConfidenceMap::observed_at_current_step(int ix, int iy) const {
  return in_bounds(ix, iy) && last_seen_[idx(ix, iy)] == step_;
}

std::pair<int, int> ConfidenceMap::cell_of(const Vec2& p) const {
  return {static_cast<int>(std::floor((p.x() - origin_.x()) / resolution_)),
          static_cast<int>(std::floor((p.y() - origin_.y()) / resolution_))};
}

Vec2 ConfidenceMap::cell_center(int ix, int iy) const {
  return origin_ + Vec2((ix + 0.5) * resolution_, (iy + 0.5) * resolution_);
}

void ConfidenceMap::mark(int ix, int iy, CellLabel l) {
  if (!in_bounds(ix, iy)) return;
  last_seen_[idx(ix, iy)] = step_;
  labels_[idx(ix, iy)] = l;
}

void ConfidenceMap::update(const LidarScan& scan, const Pose2D& base) {
  ++step_;
  const auto [bx, by] = cell_of(base.position());
  std::vector<std::pair<int, int>> hits;
  for (int i = 0; i < scan.beam_count; ++i) {
    const double a = base.yaw + scan.angles[i];
    const Vec2 end = base.position() + scan.ranges[i] * Vec2(std::cos(a), std::sin(a));
    const auto [ex, ey] = cell_of(end);
    const auto cells = bresenham(bx, by, ex, ey);
    const bool hit = scan.hit(i);
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (hit && k + 1 == cells.size()) {
        hits.push_back(cells[k]);
      } else {
        mark(cells[k].first, cells[k].second, CellLabel::Free);
      }
    }
  }
  for (const auto& [x, y] : hits) mark(x, y, CellLabel::Hit);
}

Eigen::MatrixXd ConfidenceMap::values() const {
  Eigen::MatrixXd v(width_, height_);
  for (int iy = 0; iy < height_; ++iy)
    for (int ix = 0; ix < width_; ++ix) v(ix, iy) = value(ix, iy);
  return v;
}

std::vector<std::pair<int, int>> bresenham(int x0, int y0, int x1, int y1) {
  std::vector<std::pair<int, int>> cells;
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  cells.reserve(static_cast<std::size_t>(std::max(dx, -dy)) + 1);
  while (true) {
    cells.emplace_back(x0, y0);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
  return cells;
}

Eigen::MatrixXd local_window(const ConfidenceMap& map, const Pose2D& base) {
  const auto [cx, cy] = map.cell_of(base.position());
  const int half = kWindowSize / 2;
  Eigen::MatrixXd w(kWindowSize, kWindowSize);
  for (int j = 0; j < kWindowSize; ++j)
    for (int i = 0; i < kWindowSize; ++i) w(i, j) = map.signed_value(cx - half + i, cy - half + j);
  return w;
}

void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& grid, double lo, double hi) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write PGM: " + path.string());
  const auto w = grid.rows(), h = grid.cols();
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (Eigen::Index r = 0; r < h; ++r) {
    const Eigen::Index iy = h - 1 - r;  // top row is the largest y
    for (Eigen::Index ix = 0; ix < w; ++ix) {
      const double t = std::clamp((grid(ix, iy) - lo) / (hi - lo), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
    }
  }
}

void write_pgm(const std::filesystem::path& path, const ConfidenceMap& map) {
  write_pgm(path, map.values(), 0.0, 1.0);
}

nn::Vector max_pool_signed(const Eigen::MatrixXd& window, int factor) {
  const auto n = window.rows() / factor, m = window.cols() / factor;
  nn::Vector out(n * m);
  for (Eigen::Index bj = 0; bj < m; ++bj) {
    for (Eigen::Index bi = 0; bi < n; ++bi) {
      double best = 0.0;
      for (int j = 0; j < factor; ++j) {
        for (int i = 0; i < factor; ++i) {
          const double v = window(bi * factor + i, bj * factor + j);
          if (std::abs(v) > std::abs(best) || (std::abs(v) == std::abs(best) && v < best)) best = v;
        }
      }
      out[bi + bj * n] = best;
    }
  }
  return out;
}

nn::Vector average_pool(const Eigen::MatrixXd& window, int factor) {
  const auto n = window.rows() / factor, m = window.cols() / factor;
  nn::Vector out(n * m);
  for (Eigen::Index bj = 0; bj < m; ++bj)
    for (Eigen::Index bi = 0; bi < n; ++bi)
      out[bi + bj * n] = window.block(bi * factor, bj * factor, factor, factor).mean();
  return out;
}

nn::Vector PoolEncoder::encode(const Eigen::MatrixXd& window) const { return average_pool(window, 10); }

VaeEncoder::VaeEncoder(nn::Mlp encoder, nn::Mlp decoder, int pool_factor)
    : encoder_(std::move(encoder)), decoder_(std::move(decoder)), pool_factor_(pool_factor) {
  if (encoder_.output_dim() % 2 != 0 || encoder_.output_dim() / 2 != decoder_.input_dim())
    throw std::invalid_argument("VAE encoder/decoder shapes are inconsistent");
  if (encoder_.input_dim() != decoder_.output_dim())
    throw std::invalid_argument("VAE decoder must reconstruct the encoder input");
}

nn::Vector VaeEncoder::encode_pooled(const nn::Vector& pooled) const {
  return nn::forward(encoder_, pooled).head(latent_dim());
}

nn::Vector VaeEncoder::encode(const Eigen::MatrixXd& window) const {
  return encode_pooled(max_pool_signed(window, pool_factor_));
}

nn::Vector VaeEncoder::decode(const nn::Vector& z) const { return nn::forward(decoder_, z); }

void VaeEncoder::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nn::save_checkpoint(dir / "vae_encoder.bin", encoder_, nn::Vector::Constant(1, pool_factor_));
  nn::save_checkpoint(dir / "vae_decoder.bin", decoder_);
}

VaeEncoder VaeEncoder::load(const std::filesystem::path& dir) {
  auto enc = nn::load_checkpoint(dir / "vae_encoder.bin");
  auto dec = nn::load_checkpoint(dir / "vae_decoder.bin");
  if (enc.extra.size() != 1) throw std::runtime_error("VAE encoder checkpoint lacks the pool factor");
  return VaeEncoder(std::move(enc.net), std::move(dec.net), static_cast<int>(enc.extra[0]));
}

double vae_loss(const nn::Mlp& encoder, const nn::Mlp& decoder, const nn::Matrix& x, const nn::Matrix& eps,
                double kl_weight, nn::Vector* encoder_grad, nn::Vector* decoder_grad, double* reconstruction,
                double* kl) {
  const Eigen::Index latent = eps.rows(), b = x.cols();
  if (encoder.output_dim() != 2 * latent || decoder.input_dim() != latent || eps.cols() != b)
    throw std::invalid_argument("VAE shapes do not match the noise batch");
  const bool grads = encoder_grad != nullptr || decoder_grad != nullptr;
  nn::MlpCache enc_cache, dec_cache;
  const nn::Matrix stats_out = nn::forward(encoder, x, grads ? &enc_cache : nullptr);
  const nn::Matrix mu = stats_out.topRows(latent);
  const nn::Matrix raw_logvar = stats_out.bottomRows(latent);
  const nn::Matrix logvar = raw_logvar.cwiseMax(-10.0).cwiseMin(10.0);
  const nn::Matrix sigma = (0.5 * logvar.array()).exp().matrix();
  const nn::Matrix z = mu + sigma.cwiseProduct(eps);
  const nn::Matrix recon = nn::forward(decoder, z, grads ? &dec_cache : nullptr);

  const double scale = 1.0 / static_cast<double>(b);
  const nn::Matrix diff = recon - x;
  const double rec = diff.squaredNorm() * scale;
  const double kld = -0.5 * (1.0 + logvar.array() - mu.array().square() - logvar.array().exp()).sum() * scale;
  if (reconstruction) *reconstruction = rec;
  if (kl) *kl = kld;
  if (grads) {
    nn::Vector dec_grad = nn::Vector::Zero(decoder.params().size());
    const nn::Matrix dz = nn::backward(decoder, dec_cache, 2.0 * scale * diff, dec_grad);
    nn::Matrix dstats(2 * latent, b);
    dstats.topRows(latent) = dz + kl_weight * scale * mu;
    nn::Matrix dlogvar = (dz.array() * 0.5 * sigma.array() * eps.array() +
                          kl_weight * scale * 0.5 * (logvar.array().exp() - 1.0))
                             .matrix();
    for (Eigen::Index k = 0; k < dlogvar.size(); ++k)
      if (raw_logvar.data()[k] != logvar.data()[k]) dlogvar.data()[k] = 0.0;
    dstats.bottomRows(latent) = dlogvar;
    nn::Vector enc_grad = nn::Vector::Zero(encoder.params().size());
    nn::backward(encoder, enc_cache, dstats, enc_grad);
    if (encoder_grad) *encoder_grad = std::move(enc_grad);
    if (decoder_grad) *decoder_grad = std::move(dec_grad);
  }
  return rec + kl_weight * kld;
}

VaeEncoder pretrain_encoder(std::span<const nn::Vector> pooled_windows, const VaeOptions& options,
                            std::uint64_t seed, VaeTrainStats* stats) {
  if (pooled_windows.empty()) throw std::invalid_argument("encoder pretraining needs a non-empty corpus");
  const int input = static_cast<int>(pooled_windows.front().size());
  const int latent = options.latent_dim;
  nn::Rng rng(seed);
  nn::Mlp enc = nn::Mlp::initialized({input, options.hidden, 2 * latent}, rng, 0.1);
  nn::Mlp dec = nn::Mlp::initialized({latent, options.hidden, input}, rng);
  auto enc_opt = nn::AdamState::for_size(enc.params().size(), options.lr);
  auto dec_opt = nn::AdamState::for_size(dec.params().size(), options.lr);

  std::vector<std::size_t> order(pooled_windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  double recon_sum = 0.0, kl_sum = 0.0;
  std::size_t seen = 0;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    recon_sum = kl_sum = 0.0;
    seen = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const auto b = static_cast<Eigen::Index>(std::min<std::size_t>(options.batch_size, order.size() - start));
      nn::Matrix x(input, b);
      for (Eigen::Index k = 0; k < b; ++k) x.col(k) = pooled_windows[order[start + k]];

      nn::Matrix eps(latent, b);
      for (auto& e : eps.reshaped()) e = normal(rng);
      nn::Vector enc_grad, dec_grad;
      double recon = 0.0, kl = 0.0;
      vae_loss(enc, dec, x, eps, options.kl_weight, &enc_grad, &dec_grad, &recon, &kl);
      recon_sum += recon * static_cast<double>(b);
      kl_sum += kl * static_cast<double>(b);
      seen += static_cast<std::size_t>(b);
      nn::adam_step(dec.params(), dec_grad, dec_opt);
      nn::adam_step(enc.params(), enc_grad, enc_opt);
    }
  }
  if (stats) {
    stats->final_reconstruction = recon_sum / static_cast<double>(seen);
    stats->final_kl = kl_sum / static_cast<double>(seen);
  }
  return VaeEncoder(std::move(enc), std::move(dec), options.pool_factor);
}

}  // namespace cura::perception
