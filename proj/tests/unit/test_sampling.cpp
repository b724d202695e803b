#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mufasa/sampling.hpp"
#include "support.hpp"

using namespace mufasa;
using namespace mufasa::sampling;

namespace {

// O(N) scans, the reference for every index query.
std::vector<std::size_t> scan_radius(const std::vector<Vec3>& pts, const Vec3& q, double r) {
  std::vector<std::pair<double, std::size_t>> hits;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double dx = pts[i][0] - q[0], dy = pts[i][1] - q[1], dz = pts[i][2] - q[2];
    const double d2 = dx * dx + dy * dy + dz * dz;
    if (d2 <= r * r) hits.emplace_back(d2, i);
  }
  std::sort(hits.begin(), hits.end());
  std::vector<std::size_t> out;
  for (auto& h : hits) out.push_back(h.second);
  return out;
}

std::vector<std::size_t> scan_knn(const std::vector<Vec3>& pts, const Vec3& q, std::size_t k) {
  auto all = scan_radius(pts, q, 1e300);
  all.resize(std::min(k, all.size()));
  return all;
}

double dist(const Vec3& a, const Vec3& b) { return std::sqrt(squared_distance(a, b)); }

}  // namespace

TEST_CASE("empty and single point index") {
  const auto idx = SpatialIndex::build(PointCloud{}, 1.0);
  CHECK(idx.radius_query({0, 0, 0}, 5.0).empty());
  CHECK(idx.knn_query({0, 0, 0}, 3).empty());
  PointCloud one;
  one.points.push_back({2, 3, 4, 0, 0});
  const auto i1 = SpatialIndex::build(one, 0.5);
  CHECK(i1.radius_query({2, 3, 4}, 0.0) == std::vector<std::size_t>{0});
}

TEST_CASE("radius boundary is inclusive") {
  PointCloud c;
  for (double d : {0.5, 1.0, 1.5}) c.points.push_back({d, 0, 0, 0, 0});
  const auto idx = SpatialIndex::build(c, 0.3);
  CHECK(idx.radius_query({0, 0, 0}, 1.0) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("knn collinear") {
  PointCloud c;
  for (double d : {0.0, 1.0, 2.0}) c.points.push_back({d, 0, 0, 0, 0});
  const auto idx = SpatialIndex::build(c, 0.7);
  CHECK(idx.knn_query({0, 0, 0}, 2) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("knn ties go to the lower index") {
  PointCloud c;
  c.points.push_back({1, 0, 0, 0, 0});
  c.points.push_back({-1, 0, 0, 0, 0});
  c.points.push_back({0, 1, 0, 0, 0});
  const auto idx = SpatialIndex::build(c, 0.4);
  CHECK(idx.knn_query({0, 0, 0}, 2) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("index equals scan on random clouds") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto cloud = testing_support::random_cloud(500, seed, 5.0);
    const auto pts = positions_of(cloud);
    const double cell = 0.3 + 0.4 * static_cast<double>(seed);
    const auto idx = SpatialIndex::build(cloud, cell);
    std::mt19937_64 rng(seed + 50);
    std::uniform_real_distribution<double> u(-6, 6);
    std::uniform_real_distribution<double> ur(0.1, 3.0);
    for (int q = 0; q < 50; ++q) {
      const Vec3 p{u(rng), u(rng), u(rng) * 0.3};
      const double r = ur(rng);
      CHECK(idx.radius_query(p, r) == scan_radius(pts, p, r));
      const std::size_t k = 1 + static_cast<std::size_t>(q % 17);
      CHECK(idx.knn_query(p, k) == scan_knn(pts, p, k));
      NeighborhoodSpec knn{NeighborhoodMode::Knn, 1.0, k, 1};
      CHECK(idx.neighbors(p, knn) == scan_knn(pts, p, k));
    }
    // far away queries exercise the ring expansion
    CHECK(idx.knn_query({100, 0, 0}, 5) == scan_knn(pts, {100, 0, 0}, 5));
  }
}

TEST_CASE("fps collinear example and full selection") {
  std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {10, 0, 0}};
  CHECK(farthest_point_sampling(pts, 2, 0) == std::vector<std::size_t>{0, 3});
  auto all = farthest_point_sampling(pts, 4, 0);
  std::sort(all.begin(), all.end());
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3});
  CHECK_THROWS(farthest_point_sampling(pts, 5, 0));
  CHECK_THROWS(farthest_point_sampling(pts, 0, 0));
  CHECK_THROWS(farthest_point_sampling(pts, 2, 4));
}

TEST_CASE("fps determinism and coverage") {
  const auto pts = positions_of(testing_support::random_cloud(300, 9));
  const auto a = farthest_point_sampling(pts, 24, 5);
  CHECK(a == farthest_point_sampling(pts, 24, 5));
  CHECK(a.front() == 5);
  // r_cover: max-min distance of the last pick.
  double r_cover = 1e300;
  for (std::size_t i = 0; i + 1 < a.size(); ++i) r_cover = std::min(r_cover, dist(pts[a.back()], pts[a[i]]));
  for (const auto& p : pts) {
    double best = 1e300;
    for (std::size_t s : a) best = std::min(best, dist(p, pts[s]));
    CHECK(best <= r_cover + 1e-12);
  }
}

TEST_CASE("fps spreads better than random subsets") {
  const auto pts = positions_of(testing_support::random_cloud(200, 21));
  auto min_pair = [&](const std::vector<std::size_t>& s) {
    double m = 1e300;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = i + 1; j < s.size(); ++j) m = std::min(m, dist(pts[s[i]], pts[s[j]]));
    return m;
  };
  const double fps = min_pair(farthest_point_sampling(pts, 16, 0));
  std::mt19937_64 rng(4);
  std::vector<std::size_t> ids(pts.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<double> rand_scores;
  for (int t = 0; t < 1000; ++t) {
    std::shuffle(ids.begin(), ids.end(), rng);
    rand_scores.push_back(min_pair({ids.begin(), ids.begin() + 16}));
  }
  std::nth_element(rand_scores.begin(), rand_scores.begin() + 500, rand_scores.end());
  CHECK(fps >= rand_scores[500]);
}
