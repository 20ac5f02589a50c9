#pragma once

#include "cura/geometry.hpp"
#include "cura/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace cura::perception {

using geom::Pose2D;
using geom::Vec2;
using geom::WorldState;

enum class OcclusionMode { Realistic, ObjectFiltered };

struct LidarScan {
  int beam_count = 0;
  double max_range = 0.0;
  std::vector<double> angles;  // base frame, uniform over the full circle
  std::vector<double> ranges;
  std::vector<std::uint8_t> hit_is_object;

  bool hit(int beam) const { return ranges[beam] < max_range; }
};

// Beams originate at the base position. ObjectFiltered ignores the pushed object.
LidarScan simulate_lidar(const WorldState& world, int beam_count = 180, double max_range = 10.0,
                         OcclusionMode mode = OcclusionMode::Realistic);

enum class CellLabel : std::int8_t { Hit = -1, Unknown = 0, Free = 1 };

// Global reliability grid. A cell observed at step s has value alpha^(t - s)
// at step t; never-observed cells are 0. Decay is evaluated lazily from the
// step of last observation, so an update only touches the traversed cells.
class ConfidenceMap {
 public:
  ConfidenceMap(Vec2 origin, double resolution, int width, int height, double alpha);

  void reset();
  // Advances one step: cells traversed by a beam become 1 and get relabeled.
  void update(const LidarScan& scan, const Pose2D& base);

  double value(int ix, int iy) const;
  CellLabel label(int ix, int iy) const;
  // value * (+1 free, -1 hit, 0 unknown); 0 outside the grid.
  double signed_value(int ix, int iy) const;
  bool observed_at_current_step(int ix, int iy) const;

  bool in_bounds(int ix, int iy) const { return ix >= 0 && iy >= 0 && ix < width_ && iy < height_; }
  std::pair<int, int> cell_of(const Vec2& p) const;
  Vec2 cell_center(int ix, int iy) const;

  // Dense value grid, rows = x index, cols = y index.
  Eigen::MatrixXd values() const;

  int width() const { return width_; }
  int height() const { return height_; }
  double resolution() const { return resolution_; }
  double alpha() const { return alpha_; }
  const Vec2& origin() const { return origin_; }
  std::int64_t step() const { return step_; }

 private:
  std::size_t idx(int ix, int iy) const { return static_cast<std::size_t>(iy) * width_ + ix; }
  void mark(int ix, int iy, CellLabel l);
  double decay(std::int64_t k) const;

  Vec2 origin_;
  double resolution_;
  int width_;
  int height_;
  double alpha_;
  std::int64_t step_ = 0;
  std::vector<std::int64_t> last_seen_;
  std::vector<CellLabel> labels_;
  mutable std::vector<double> decay_table_;
};

// Grid cells on the segment between two cells, both endpoints included.
std::vector<std::pair<int, int>> bresenham(int x0, int y0, int x1, int y1);

inline constexpr int kWindowSize = 100;

// 100x100 axis-aligned crop of signed values centred on the base cell
// (window(50, 50) is the base cell). Out-of-map cells are 0.
Eigen::MatrixXd local_window(const ConfidenceMap& map, const Pose2D& base);

// Portable graymap (P5) of value*255.
void write_pgm(const std::filesystem::path& path, const ConfidenceMap& map);
void write_pgm(const std::filesystem::path& path, const Eigen::MatrixXd& grid, double lo, double hi);

// Non-overlapping `factor`x`factor` pooling keeping the entry of largest
// magnitude (hits win ties), flattened column-major.
nn::Vector max_pool_signed(const Eigen::MatrixXd& window, int factor);
nn::Vector average_pool(const Eigen::MatrixXd& window, int factor);

class MapEncoder {
 public:
  virtual ~MapEncoder() = default;
  virtual int latent_dim() const = 0;
  virtual nn::Vector encode(const Eigen::MatrixXd& window) const = 0;
};

// Deterministic fallback: 10x10 average pool, latent dim 100.
class PoolEncoder final : public MapEncoder {
 public:
  int latent_dim() const override { return 100; }
  nn::Vector encode(const Eigen::MatrixXd& window) const override;
};

struct VaeOptions {
  int pool_factor = 4;
  int hidden = 128;
  int latent_dim = 32;
  double kl_weight = 0.05;
  double lr = 1e-3;
  int epochs = 8;
  int batch_size = 64;
};

// Frozen VAE encoder; encode() returns the posterior mean.
class VaeEncoder final : public MapEncoder {
 public:
  VaeEncoder(nn::Mlp encoder, nn::Mlp decoder, int pool_factor);

  int latent_dim() const override { return encoder_.output_dim() / 2; }
  nn::Vector encode(const Eigen::MatrixXd& window) const override;
  nn::Vector encode_pooled(const nn::Vector& pooled) const;
  nn::Vector decode(const nn::Vector& z) const;
  int pool_factor() const { return pool_factor_; }

  const nn::Mlp& encoder_net() const { return encoder_; }
  const nn::Mlp& decoder_net() const { return decoder_; }

  void save(const std::filesystem::path& dir) const;
  static VaeEncoder load(const std::filesystem::path& dir);

 private:
  nn::Mlp encoder_;
  nn::Mlp decoder_;
  int pool_factor_;
};

struct VaeTrainStats {
  double final_reconstruction = 0.0;
  double final_kl = 0.0;
};

// Per-sample mean of ||decode(mu + sigma * eps) - x||^2 + kl_weight * KL(q || N(0, I))
// for the batch in the columns of `x`, with the reparameterization noise fixed.
// Gradients are written when the pointers are non-null.
double vae_loss(const nn::Mlp& encoder, const nn::Mlp& decoder, const nn::Matrix& x, const nn::Matrix& eps,
                double kl_weight, nn::Vector* encoder_grad, nn::Vector* decoder_grad,
                double* reconstruction = nullptr, double* kl = nullptr);

// Trains on pooled windows (see max_pool_signed). Throws on an empty corpus.
VaeEncoder pretrain_encoder(std::span<const nn::Vector> pooled_windows, const VaeOptions& options,
                            std::uint64_t seed, VaeTrainStats* stats = nullptr);

}  // namespace cura::perception
