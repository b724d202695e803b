#include "mufasa/lalonde.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mufasa::lalonde {

namespace {

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(dot(v, v));
  return {v[0] / n, v[1] / n, v[2] / n};
}

double frobenius(const Mat3& m) {
  double s = 0.0;
  for (const auto& row : m)
    for (double v : row) s += v * v;
  return std::sqrt(s);
}

double reconstruction_error(const Mat3& m, const EigenTriple& e) {
  Mat3 r{};
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) r[i][j] += e.values[k] * e.vectors[k][i] * e.vectors[k][j];
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) r[i][j] -= m[i][j];
  return frobenius(r);
}

// Null direction of (A - lambda I) from the best-conditioned row cross product.
Vec3 null_vector(const Mat3& a, double lambda) {
  const Vec3 r0 = {a[0][0] - lambda, a[0][1], a[0][2]};
  const Vec3 r1 = {a[1][0], a[1][1] - lambda, a[1][2]};
  const Vec3 r2 = {a[2][0], a[2][1], a[2][2] - lambda};
  const std::array<Vec3, 3> c = {cross(r0, r1), cross(r0, r2), cross(r1, r2)};
  std::size_t best = 0;
  double best_n = dot(c[0], c[0]);
  for (std::size_t i = 1; i < 3; ++i) {
    const double n = dot(c[i], c[i]);
    if (n > best_n) {
      best_n = n;
      best = i;
    }
  }
  if (best_n == 0.0) return {0.0, 0.0, 0.0};
  return normalized(c[best]);
}

void sort_descending(EigenTriple& e) {
  std::array<std::size_t, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return e.values[a] > e.values[b]; });
  EigenTriple sorted;
  for (std::size_t i = 0; i < 3; ++i) {
    sorted.values[i] = e.values[order[i]];
    sorted.vectors[i] = e.vectors[order[i]];
  }
  e = sorted;
}

constexpr double kRelativeGap = 1e-6;

}  // namespace

Covariance3 covariance(std::span<const Vec3> points) {
  if (points.empty()) throw std::invalid_argument("empty neighborhood");
  const double n = static_cast<double>(points.size());
  Covariance3 c;
  for (const auto& p : points)
    for (std::size_t i = 0; i < 3; ++i) c.mean[i] += p[i];
  for (double& v : c.mean) v /= n;
  for (const auto& p : points) {
    const Vec3 d = {p[0] - c.mean[0], p[1] - c.mean[1], p[2] - c.mean[2]};
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = i; j < 3; ++j) c.m[i][j] += d[i] * d[j];
  }
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i; j < 3; ++j) {
      c.m[i][j] /= n;
      c.m[j][i] = c.m[i][j];
    }
  return c;
}

EigenTriple eigen_jacobi(const Mat3& input) {
  Mat3 a = input;
  Mat3 v = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  const double scale = frobenius(a);
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = std::sqrt(a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]);
    if (off <= 1e-18 * (scale + 1e-300)) break;
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < 3; ++k) {
          const double akp = a[k][p];
          const double akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < 3; ++k) {
          const double apk = a[p][k];
          const double aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < 3; ++k) {
          const double vkp = v[k][p];
          const double vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  EigenTriple e;
  for (std::size_t i = 0; i < 3; ++i) {
    e.values[i] = a[i][i];
    e.vectors[i] = {v[0][i], v[1][i], v[2][i]};
  }
  sort_descending(e);
  return e;
}

namespace {

EigenTriple eigen_raw(const Mat3& a) {
  const double p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
  if (p1 == 0.0) {
    EigenTriple e;
    for (std::size_t i = 0; i < 3; ++i) {
      e.values[i] = a[i][i];
      e.vectors[i] = {0.0, 0.0, 0.0};
      e.vectors[i][i] = 1.0;
    }
    sort_descending(e);
    return e;
  }
  const double q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
  const double p2 = (a[0][0] - q) * (a[0][0] - q) + (a[1][1] - q) * (a[1][1] - q) +
                    (a[2][2] - q) * (a[2][2] - q) + 2.0 * p1;
  const double p = std::sqrt(p2 / 6.0);
  Mat3 b{};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) b[i][j] = (a[i][j] - (i == j ? q : 0.0)) / p;
  const double det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) -
                     b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0]) +
                     b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
  const double r = std::clamp(det / 2.0, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double x1 = q + 2.0 * p * std::cos(phi);
  const double x3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  const double x2 = 3.0 * q - x1 - x3;

  // Near-repeated roots make the cross-product eigenvectors unreliable.
  const double scale = std::max({std::abs(x1), std::abs(x3), p});
  if (x1 - x2 <= kRelativeGap * scale || x2 - x3 <= kRelativeGap * scale) return eigen_jacobi(a);

  EigenTriple e;
  e.values = {x1, x2, x3};
  e.vectors[0] = null_vector(a, x1);
  Vec3 v3 = null_vector(a, x3);
  const double proj = dot(v3, e.vectors[0]);
  v3 = {v3[0] - proj * e.vectors[0][0], v3[1] - proj * e.vectors[0][1],
        v3[2] - proj * e.vectors[0][2]};
  if (dot(v3, v3) == 0.0 || dot(e.vectors[0], e.vectors[0]) == 0.0) return eigen_jacobi(a);
  e.vectors[2] = normalized(v3);
  e.vectors[1] = normalized(cross(e.vectors[2], e.vectors[0]));
  if (reconstruction_error(a, e) > 1e-10 * (1.0 + frobenius(a))) return eigen_jacobi(a);
  return e;
}

}  // namespace

EigenTriple eigen(const Covariance3& cov, bool normalize) {
  EigenTriple e = eigen_raw(cov.m);
  for (double& v : e.values) v = std::max(v, 0.0);
  if (normalize) {
    const double sum = e.values[0] + e.values[1] + e.values[2];
    if (sum > 0.0)
      for (double& v : e.values) v /= sum;
  }
  return e;
}

LalondeDescriptor lalonde_descriptor(const EigenTriple& eig) {
  const auto& x = eig.values;
  return {x[0], x[0] - x[1], x[1] - x[2]};
}

LalondeDescriptor descriptor_of(std::vector<Vec3> neighborhood, bool normalize) {
  std::sort(neighborhood.begin(), neighborhood.end());
  return lalonde_descriptor(eigen(covariance(neighborhood), normalize));
}

LalondeDescriptor descriptor_at(const PointCloud& cloud, const sampling::SpatialIndex& index,
                                std::size_t point, const DescriptorOptions& options) {
  if (point >= cloud.size()) throw std::out_of_range("descriptor_at: point index out of range");
  const Vec3 q = cloud.points[point].position();
  const auto members = index.neighbors(q, options.neighborhood);
  if (members.size() < options.neighborhood.min_neighbors) return kDegenerateDescriptor;
  std::vector<Vec3> pts;
  pts.reserve(members.size());
  for (std::size_t i : members) pts.push_back(index.positions()[i]);
  return descriptor_of(std::move(pts), options.normalize);
}

std::vector<LalondeDescriptor> descriptors_for(const PointCloud& cloud,
                                               const sampling::SpatialIndex& index,
                                               std::span<const std::size_t> points,
                                               const DescriptorOptions& options) {
  std::vector<LalondeDescriptor> out;
  out.reserve(points.size());
  for (std::size_t i : points) out.push_back(descriptor_at(cloud, index, i, options));
  return out;
}

LalondeHistogram histogram(std::span<const LalondeDescriptor> descs, std::size_t bin_count) {
  if (bin_count < 2) throw std::invalid_argument("histogram needs at least 2 bins");
  LalondeHistogram h;
  h.bin_count = bin_count;
  h.scatter.assign(bin_count, 0.0);
  h.linear.assign(bin_count, 0.0);
  h.surface.assign(bin_count, 0.0);
  h.empty = descs.empty();
  if (h.empty) return h;
  auto bin_of = [bin_count](double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return std::min(static_cast<std::size_t>(c * static_cast<double>(bin_count)), bin_count - 1);
  };
  for (const auto& d : descs) {
    h.scatter[bin_of(d.l_scatter)] += 1.0;
    h.linear[bin_of(d.l_linear)] += 1.0;
    h.surface[bin_of(d.l_surface)] += 1.0;
  }
  const double n = static_cast<double>(descs.size());
  for (auto* channel : {&h.scatter, &h.linear, &h.surface})
    for (double& v : *channel) v /= n;
  return h;
}

double earth_movers_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("earth mover's distance needs equal, non-empty histograms");
  double cdf = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cdf += a[i] - b[i];
    total += std::abs(cdf);
  }
  return total / static_cast<double>(a.size());
}

}  // namespace mufasa::lalonde
