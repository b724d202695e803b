#include "mufasa/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mufasa::sampling {

bool NeighborhoodSpec::valid() const {
  return mode == NeighborhoodMode::Radius ? radius > 0.0 : k >= 1;
}

double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

std::vector<Vec3> positions_of(const PointCloud& cloud) {
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points) out.push_back(p.position());
  return out;
}

std::size_t SpatialIndex::KeyHash::operator()(const Key& k) const noexcept {
  std::uint64_t h = static_cast<std::uint64_t>(k.x) * 73856093ULL;
  h ^= static_cast<std::uint64_t>(k.y) * 19349663ULL;
  h ^= static_cast<std::uint64_t>(k.z) * 83492791ULL;
  return static_cast<std::size_t>(h);
}

SpatialIndex::SpatialIndex(std::vector<Vec3> positions, double cell)
    : positions_(std::move(positions)), cell_(cell) {
  if (!(cell > 0.0)) throw std::invalid_argument("spatial index cell must be positive");
  for (std::size_t i = 0; i < positions_.size(); ++i) {
    const Key k = key_of(positions_[i]);
    grid_[k].push_back(static_cast<std::uint32_t>(i));
    if (i == 0) {
      lo_ = hi_ = k;
    } else {
      lo_ = {std::min(lo_.x, k.x), std::min(lo_.y, k.y), std::min(lo_.z, k.z)};
      hi_ = {std::max(hi_.x, k.x), std::max(hi_.y, k.y), std::max(hi_.z, k.z)};
    }
  }
}

SpatialIndex SpatialIndex::build(const PointCloud& cloud, double cell) {
  return SpatialIndex(positions_of(cloud), cell);
}

SpatialIndex::Key SpatialIndex::key_of(const Vec3& p) const {
  return {static_cast<std::int64_t>(std::floor(p[0] / cell_)),
          static_cast<std::int64_t>(std::floor(p[1] / cell_)),
          static_cast<std::int64_t>(std::floor(p[2] / cell_))};
}

const std::vector<std::uint32_t>* SpatialIndex::bucket(const Key& k) const {
  const auto it = grid_.find(k);
  return it == grid_.end() ? nullptr : &it->second;
}

namespace {

struct Candidate {
  double d2;
  std::size_t index;
  bool operator<(const Candidate& o) const {
    return d2 < o.d2 || (d2 == o.d2 && index < o.index);
  }
};

std::vector<std::size_t> indices_of(const std::vector<Candidate>& c) {
  std::vector<std::size_t> out;
  out.reserve(c.size());
  for (const auto& x : c) out.push_back(x.index);
  return out;
}

}  // namespace

std::vector<std::size_t> SpatialIndex::radius_query(const Vec3& q, double radius) const {
  if (positions_.empty() || radius < 0.0) return {};
  const double r2 = radius * radius;
  // Cell range covering the query ball, clipped to occupied extent.
  const Key a = key_of({q[0] - radius, q[1] - radius, q[2] - radius});
  const Key b = key_of({q[0] + radius, q[1] + radius, q[2] + radius});
  const Key from{std::max(a.x, lo_.x), std::max(a.y, lo_.y), std::max(a.z, lo_.z)};
  const Key to{std::min(b.x, hi_.x), std::min(b.y, hi_.y), std::min(b.z, hi_.z)};
  std::vector<Candidate> found;
  for (std::int64_t x = from.x; x <= to.x; ++x)
    for (std::int64_t y = from.y; y <= to.y; ++y)
      for (std::int64_t z = from.z; z <= to.z; ++z) {
        const auto* cell = bucket({x, y, z});
        if (!cell) continue;
        for (std::uint32_t i : *cell) {
          const double d2 = squared_distance(positions_[i], q);
          if (d2 <= r2) found.push_back({d2, i});
        }
      }
  std::sort(found.begin(), found.end());
  return indices_of(found);
}

std::vector<std::size_t> SpatialIndex::knn_query(const Vec3& q, std::size_t k) const {
  if (positions_.empty() || k == 0) return {};
  const Key c = key_of(q);
  // Rings beyond this reach contain no occupied cell.
  const std::int64_t max_ring =
      std::max({std::abs(c.x - lo_.x), std::abs(c.x - hi_.x), std::abs(c.y - lo_.y),
                std::abs(c.y - hi_.y), std::abs(c.z - lo_.z), std::abs(c.z - hi_.z)});
  std::vector<Candidate> found;
  auto visit = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    const auto* cell = bucket({x, y, z});
    if (!cell) return;
    for (std::uint32_t i : *cell) found.push_back({squared_distance(positions_[i], q), i});
  };
  for (std::int64_t ring = 0; ring <= max_ring; ++ring) {
    for (std::int64_t dx = -ring; dx <= ring; ++dx)
      for (std::int64_t dy = -ring; dy <= ring; ++dy)
        for (std::int64_t dz = -ring; dz <= ring; ++dz) {
          if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
          visit(c.x + dx, c.y + dy, c.z + dz);
        }
    if (found.size() >= k) {
      std::nth_element(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(k - 1),
                       found.end());
      // Unvisited points lie at least ring * cell away from q; a strict bound keeps
      // index tie-breaking exact.
      const double bound = static_cast<double>(ring) * cell_;
      if (found[k - 1].d2 < bound * bound) break;
    }
  }
  std::sort(found.begin(), found.end());
  if (found.size() > k) found.resize(k);
  return indices_of(found);
}

std::vector<std::size_t> SpatialIndex::neighbors(const Vec3& q, const NeighborhoodSpec& spec) const {
  if (!spec.valid()) throw std::invalid_argument("invalid neighborhood spec");
  return spec.mode == NeighborhoodMode::Radius ? radius_query(q, spec.radius)
                                               : knn_query(q, spec.k);
}

std::vector<std::size_t> farthest_point_sampling(std::span<const Vec3> positions, std::size_t m,
                                                 std::size_t start) {
  const std::size_t n = positions.size();
  if (m < 1 || m > n)
    throw std::invalid_argument("farthest point sampling needs 1 <= m <= N (m=" +
                                std::to_string(m) + ", N=" + std::to_string(n) + ")");
  if (start >= n) throw std::invalid_argument("farthest point sampling start index out of range");
  std::vector<std::size_t> selected;
  selected.reserve(m);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::size_t current = start;
  for (std::size_t s = 0; s < m; ++s) {
    selected.push_back(current);
    min_d2[current] = -1.0;
    if (s + 1 == m) break;
    std::size_t best = n;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (min_d2[i] < 0.0) continue;
      min_d2[i] = std::min(min_d2[i], squared_distance(positions[i], positions[current]));
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    current = best;
  }
  return selected;
}

std::vector<std::size_t> farthest_point_sampling(const PointCloud& cloud, std::size_t m,
                                                 std::size_t start) {
  const auto pos = positions_of(cloud);
  return farthest_point_sampling(std::span<const Vec3>(pos), m, start);
}

}  // namespace mufasa::sampling
