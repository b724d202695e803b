#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "mufasa/cloud.hpp"
#include "mufasa/sampling.hpp"

namespace mufasa::lalonde {

using Mat3 = std::array<std::array<double, 3>, 3>;

/// Population covariance of a point neighborhood (1/N normalization).
struct Covariance3 {
  Mat3 m{};
  Vec3 mean{};
};

/// Eigenvalues sorted x1 >= x2 >= x3 >= 0 with matching orthonormal eigenvectors.
struct EigenTriple {
  std::array<double, 3> values{};
  std::array<Vec3, 3> vectors{};
};

/// Scatter-ness, linear-ness and surface-ness of a neighborhood:
///   l_scatter = x1, l_linear = x1 - x2, l_surface = x2 - x3.
struct LalondeDescriptor {
  double l_scatter = 0.0;
  double l_linear = 0.0;
  double l_surface = 0.0;

  /// x3, the isotropic remainder: l_scatter - l_linear - l_surface.
  double residual() const { return l_scatter - l_linear - l_surface; }
  friend bool operator==(const LalondeDescriptor&, const LalondeDescriptor&) = default;
};

/// Returned for neighborhoods with fewer than min_neighbors points.
inline constexpr LalondeDescriptor kDegenerateDescriptor{1.0 / 3.0, 0.0, 0.0};

struct DescriptorOptions {
  sampling::NeighborhoodSpec neighborhood{};
  bool normalize = true;
};

/// Per-channel normalized frequencies over uniform bins on [0, 1].
struct LalondeHistogram {
  std::size_t bin_count = 0;
  std::vector<double> scatter;  // L1
  std::vector<double> linear;   // L2
  std::vector<double> surface;  // L3
  bool empty = true;
};

/// Throws std::invalid_argument("empty neighborhood") for N = 0.
Covariance3 covariance(std::span<const Vec3> points);

/// Analytic symmetric 3x3 eigensolver with a Jacobi fallback for near-repeated roots.
/// Negative eigenvalues from round-off are clamped to 0.
EigenTriple eigen(const Covariance3& cov, bool normalize);

/// Cyclic Jacobi sweeps; exposed for the fallback tests.
EigenTriple eigen_jacobi(const Mat3& m);

LalondeDescriptor lalonde_descriptor(const EigenTriple& eig);

/// Descriptor of the neighborhood around point `index`; the query point is included.
LalondeDescriptor descriptor_at(const PointCloud& cloud, const sampling::SpatialIndex& index,
                                std::size_t point, const DescriptorOptions& options);

/// Descriptor of an explicit point set, summed in a canonical order so the result does not
/// depend on how the set is listed.
LalondeDescriptor descriptor_of(std::vector<Vec3> neighborhood, bool normalize);

std::vector<LalondeDescriptor> descriptors_for(const PointCloud& cloud,
                                               const sampling::SpatialIndex& index,
                                               std::span<const std::size_t> points,
                                               const DescriptorOptions& options);

LalondeHistogram histogram(std::span<const LalondeDescriptor> descs, std::size_t bin_count);

/// 1-D earth mover's distance between two normalized histograms on [0, 1].
double earth_movers_distance(std::span<const double> a, std::span<const double> b);

}  // namespace mufasa::lalonde
