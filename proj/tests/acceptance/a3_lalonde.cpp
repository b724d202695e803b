#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <random>

#include "acceptance.hpp"
#include "mufasa/lalonde.hpp"

namespace acceptance {

using namespace mufasa;
using namespace mufasa::lalonde;

namespace {

// Brute-force covariance then Eigen's self-adjoint solver, sharing nothing with the library path.
std::array<double, 3> descriptor_oracle(const std::vector<Vec3>& pts, bool normalize) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += Eigen::Vector3d(p[0], p[1], p[2]);
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) {
    const Eigen::Vector3d d = Eigen::Vector3d(p[0], p[1], p[2]) - mean;
    m += d * d.transpose();
  }
  m /= static_cast<double>(pts.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m);
  const Eigen::Vector3d ev = es.eigenvalues().cwiseMax(0.0);
  double x1 = ev[2], x2 = ev[1], x3 = ev[0];
  const double s = x1 + x2 + x3;
  if (normalize && s > 0) x1 /= s, x2 /= s, x3 /= s;
  return {x1, x1 - x2, x2 - x3};
}

std::vector<Vec3> random_nbhd(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.05, 2.0);
  const double sx = u(rng), sy = u(rng), sz = u(rng);
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back({g(rng) * sx, g(rng) * sy, g(rng) * sz});
  return pts;
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  return Eigen::Quaterniond(g(rng), g(rng), g(rng), g(rng)).normalized().toRotationMatrix();
}

double max_diff(const LalondeDescriptor& a, const LalondeDescriptor& b) {
  return std::max({std::abs(a.l_scatter - b.l_scatter), std::abs(a.l_linear - b.l_linear),
                   std::abs(a.l_surface - b.l_surface)});
}

enum Shape { kLine = 0, kPlane = 1, kScatter = 2 };

// A randomly oriented line segment, square patch or solid cube, 60 points, plus N(0, 0.02) noise.
PointCloud make_cluster(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.02);
  const Eigen::Matrix3d r = random_rotation(rng);
  const Eigen::Vector3d centre(10 * u(rng), 10 * u(rng), u(rng));
  PointCloud cloud;
  for (int i = 0; i < 60; ++i) {
    Eigen::Vector3d p(u(rng), shape == kLine ? 0.0 : u(rng), shape == kScatter ? u(rng) : 0.0);
    p = r * p + centre + Eigen::Vector3d(noise(rng), noise(rng), noise(rng));
    cloud.points.push_back({p[0], p[1], p[2], 0.0, 0.0});
  }
  return cloud;
}

// Mean of the per-point descriptors over 10-point neighborhoods.
Eigen::Vector3d pooled(const PointCloud& cloud) {
  DescriptorOptions opt;
  opt.neighborhood.mode = sampling::NeighborhoodMode::Knn;
  opt.neighborhood.k = 10;
  const auto index = sampling::SpatialIndex::build(cloud, 0.5);
  std::vector<std::size_t> ids(cloud.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (const auto& d : descriptors_for(cloud, index, ids, opt)) sum += Eigen::Vector3d(d.l_scatter, d.l_linear, d.l_surface);
  return sum / static_cast<double>(cloud.size());
}

}  // namespace

Outcome run_a3() {
  Checks c;
  std::mt19937_64 rng(3);

  double oracle_err = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto pts = random_nbhd(rng, 5 + t % 30);
    for (bool norm : {true, false}) {
      const auto got = descriptor_of(pts, norm);
      const auto want = descriptor_oracle(pts, norm);
      const double e = std::max({std::abs(got.l_scatter - want[0]), std::abs(got.l_linear - want[1]),
                                 std::abs(got.l_surface - want[2])});
      oracle_err = std::max(oracle_err, e);
      c.expect(e <= 1e-9, "oracle neighborhood " + std::to_string(t) + " err " + fmt(e));
    }
  }

  double move_err = 0.0, turn_err = 0.0, scale_err = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto pts = random_nbhd(rng, 5 + t % 30);
    const Eigen::Matrix3d r = random_rotation(rng);
    std::uniform_real_distribution<double> off(-50.0, 50.0), mag(0.01, 100.0);
    const double dx = off(rng), dy = off(rng), dz = off(rng), s = mag(rng);
    std::vector<Vec3> moved, turned, scaled;
    for (const auto& p : pts) {
      moved.push_back({p[0] + dx, p[1] + dy, p[2] + dz});
      const Eigen::Vector3d v = r * Eigen::Vector3d(p[0], p[1], p[2]);
      turned.push_back({v[0], v[1], v[2]});
      scaled.push_back({p[0] * s, p[1] * s, p[2] * s});
    }
    for (bool norm : {true, false}) {
      const auto base = descriptor_of(pts, norm);
      const double em = max_diff(base, descriptor_of(moved, norm));
      const double er = max_diff(base, descriptor_of(turned, norm));
      move_err = std::max(move_err, em);
      turn_err = std::max(turn_err, er);
      c.expect(em <= 1e-8, "translation " + std::to_string(t) + " err " + fmt(em));
      c.expect(er <= 1e-8, "rotation " + std::to_string(t) + " err " + fmt(er));
    }
    const double es = max_diff(descriptor_of(pts, true), descriptor_of(scaled, true));
    scale_err = std::max(scale_err, es);
    c.expect(es <= 1e-8, "scale " + std::to_string(t) + " err " + fmt(es));
  }
  c.note("oracle_err", fmt(oracle_err));
  c.note("translate_err", fmt(move_err));
  c.note("rotate_err", fmt(turn_err));
  c.note("scale_err", fmt(scale_err));

  // One-vs-rest least squares on [1, pooled descriptor], fit on 300 clusters, scored on 1000 fresh ones.
  std::mt19937_64 train_rng(30), test_rng(31);
  const int ntrain = 300, ntest = 1000;
  Eigen::MatrixXd x(ntrain, 4), y = Eigen::MatrixXd::Zero(ntrain, 3);
  for (int i = 0; i < ntrain; ++i) {
    const Shape s = static_cast<Shape>(i % 3);
    x.row(i) << 1.0, pooled(make_cluster(s, train_rng)).transpose();
    y(i, s) = 1.0;
  }
  const Eigen::MatrixXd w = x.colPivHouseholderQr().solve(y);
  int correct = 0;
  for (int i = 0; i < ntest; ++i) {
    const Shape s = static_cast<Shape>(std::uniform_int_distribution<int>(0, 2)(test_rng));
    Eigen::RowVector4d f;
    f << 1.0, pooled(make_cluster(s, test_rng)).transpose();
    Eigen::Index best;
    (f * w).maxCoeff(&best);
    correct += best == s;
  }
  const double acc = static_cast<double>(correct) / ntest;
  c.expect(acc >= 0.95, "shape accuracy " + fmt(acc));
  c.note("shape_accuracy", fmt(acc, "%.3f"));
  return c.outcome();
}

}  // namespace acceptance
