#pragma once

#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mufasa/cloud.hpp"
#include "mufasa/nn/mlp.hpp"

namespace mufasa::projection {

enum class View { Bev, Cylinder };

/// Planar grid over (x, y) for BEV or (theta, z) for the cylinder view. Rows index axis 0.
struct GridSpec {
  View view = View::Bev;
  double min0 = 0.0, max0 = 51.2;
  double min1 = -25.6, max1 = 25.6;
  double cell0 = 0.16, cell1 = 0.16;

  std::size_t height() const;
  std::size_t width() const;
  std::size_t cells() const { return height() * width(); }
  bool valid() const;

  static GridSpec bev_default();
  static GridSpec cylinder_default();
};

struct CylindricalPoint {
  double rho = 0.0;
  double theta = 0.0;  ///< (-pi, pi]; (0, 0, z) maps to 0
  double z_prime = 0.0;
};

CylindricalPoint to_cylindrical(const RadarPoint& p);

/// The point's coordinates on the view's plane: (x, y) or (theta, z).
std::array<double, 2> planar_coords(const RadarPoint& p, View view);

/// Per point: flat pillar index row * W + col, or -1 when outside the grid.
struct PillarAssignment {
  std::vector<std::int64_t> pillar;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t assigned() const;
  std::size_t out_of_range() const { return pillar.size() - assigned(); }
};

/// -1 when outside the grid. The cylinder view folds theta = pi into the last row.
std::int64_t pillar_of(const std::array<double, 2>& a, const GridSpec& grid);
PillarAssignment assign_pillars(const PointCloud& cloud, const GridSpec& grid);

/// Centre of a flat pillar index in the view's planar coordinates.
std::array<double, 2> pillar_center(std::int64_t pillar, const GridSpec& grid);

inline constexpr std::size_t kPillarFeatureDim = 10;
inline constexpr std::size_t kDefaultMaxPointsPerPillar = 32;

struct PillarOptions {
  std::size_t max_points = kDefaultMaxPointsPerPillar;
  bool use_rcs = true;
  bool use_doppler = true;
};

/// Decorated member points of every non-empty pillar, pillars in ascending cell order.
/// Row features: (x, y, z, rcs, v_r, x - x_mean, y - y_mean, z - z_mean, a0 - c0, a1 - c1).
struct PillarBatch {
  nn::Tensor features;                 ///< [K, 10]
  std::vector<std::size_t> point;      ///< source point of each row
  std::vector<std::size_t> segment;    ///< pillar ordinal of each row
  std::vector<std::int64_t> cells;     ///< flat cell of each pillar ordinal
};

PillarBatch decorate_pillars(const PointCloud& cloud, const PillarAssignment& assign,
                             const GridSpec& grid, const PillarOptions& options = {});

/// Dense [C, H, W] feature map.
struct PseudoImage {
  nn::Tensor data;

  std::size_t channels() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
  double at(std::size_t c, std::size_t r, std::size_t w) const {
    return data[(c * height() + r) * width() + w];
  }
};

/// Shared per-point MLP, channel-wise max per pillar, scatter to the grid; empty pillars are 0.
nn::Var encode_pillars(nn::Tape& t, const nn::Parameters& params, const std::string& prefix,
                       const nn::MlpSpec& encoder, const PillarBatch& batch, const GridSpec& grid);
PseudoImage encode_pillars(const PointCloud& cloud, const PillarAssignment& assign,
                           const GridSpec& grid, const nn::Parameters& params,
                           const std::string& prefix, const nn::MlpSpec& encoder,
                           const PillarOptions& options = {});

/// [N, C]: each point's pillar vector, zeros for points outside the grid.
nn::Var gather_to_points(nn::Tape& t, nn::Var img, const PillarAssignment& assign);
nn::Tensor gather_to_points(const PseudoImage& img, const PillarAssignment& assign);

/// Channel-wise max of rows[N, C] per cell into a [C, H, W] map; rows at cell -1 are dropped.
nn::Var scatter_max(nn::Tape& t, nn::Var rows, std::span<const std::int64_t> cells,
                    std::size_t height, std::size_t width);

/// `depth` same-padded 3x3 conv layers, each followed by ReLU; names `<prefix>.conv<i>`.
void init_view_cnn(nn::Parameters& params, const std::string& prefix, std::size_t channels,
                   std::size_t depth, nn::Rng& rng);
nn::Var view_cnn_forward(nn::Tape& t, const nn::Parameters& params, const std::string& prefix,
                         std::size_t depth, nn::Var img);

}  // namespace mufasa::projection
