#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "mufasa/cloud.hpp"

namespace mufasa::sampling {

enum class NeighborhoodMode { Radius, Knn };

struct NeighborhoodSpec {
  NeighborhoodMode mode = NeighborhoodMode::Radius;
  double radius = 1.0;
  std::size_t k = 8;
  std::size_t min_neighbors = 3;

  bool valid() const;
};

/// Uniform voxel hash grid. Queries are exact: they return what a full scan would,
/// ordered by ascending distance, then ascending index.
class SpatialIndex {
 public:
  SpatialIndex() = default;
  SpatialIndex(std::vector<Vec3> positions, double cell);

  static SpatialIndex build(const PointCloud& cloud, double cell);

  /// All points with |p - q| <= radius.
  std::vector<std::size_t> radius_query(const Vec3& q, double radius) const;
  /// The k nearest points (fewer if the index holds fewer), ties to the lower index.
  std::vector<std::size_t> knn_query(const Vec3& q, std::size_t k) const;
  std::vector<std::size_t> neighbors(const Vec3& q, const NeighborhoodSpec& spec) const;

  std::size_t size() const { return positions_.size(); }
  const std::vector<Vec3>& positions() const { return positions_; }
  double cell() const { return cell_; }

 private:
  struct Key {
    std::int64_t x, y, z;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };

  Key key_of(const Vec3& p) const;
  const std::vector<std::uint32_t>* bucket(const Key& k) const;

  std::vector<Vec3> positions_;
  double cell_ = 1.0;
  std::unordered_map<Key, std::vector<std::uint32_t>, KeyHash> grid_;
  Key lo_{0, 0, 0};
  Key hi_{-1, -1, -1};
};

double squared_distance(const Vec3& a, const Vec3& b);

/// Greedy max-min selection starting at `start`; ties go to the lowest index.
/// Throws std::invalid_argument unless 1 <= m <= N and start < N.
std::vector<std::size_t> farthest_point_sampling(std::span<const Vec3> positions, std::size_t m,
                                                 std::size_t start = 0);
std::vector<std::size_t> farthest_point_sampling(const PointCloud& cloud, std::size_t m,
                                                 std::size_t start = 0);

std::vector<Vec3> positions_of(const PointCloud& cloud);

}  // namespace mufasa::sampling
