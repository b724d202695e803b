#include "mufasa/scene.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace mufasa {

std::array<double, 3> default_dims(ObjectClass c) {
  switch (c) {
    case ObjectClass::Car: return {4.0, 1.8, 1.6};
    case ObjectClass::Pedestrian: return {0.6, 0.6, 1.7};
    case ObjectClass::Cyclist: return {1.8, 0.6, 1.7};
    case ObjectClass::Truck: return {8.0, 2.6, 3.0};
  }
  throw std::invalid_argument("unknown class");
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  if (!(hi > lo)) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double normal(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

struct ClassRadar {
  double rcs_mean;
  double speed_max;
};

ClassRadar class_radar(ObjectClass c) {
  switch (c) {
    case ObjectClass::Car: return {10.0, 12.0};
    case ObjectClass::Pedestrian: return {-5.0, 1.5};
    case ObjectClass::Cyclist: return {0.0, 6.0};
    case ObjectClass::Truck: return {15.0, 10.0};
  }
  return {0.0, 0.0};
}

double radial_velocity(const Vec3& p, double vx, double vy) {
  const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
  return r > 0.0 ? (vx * p[0] + vy * p[1]) / r : 0.0;
}

// Points on the box faces that face the sensor, weighted by projected width.
void sample_visible_faces(const BoundingBox3D& box, int n, double noise, Rng& rng,
                          std::vector<Vec3>& out) {
  const auto corners = box.bev_corners();
  struct Face {
    std::array<double, 2> a, b;
    double weight;
  };
  std::vector<Face> faces;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& a = corners[i];
    const auto& b = corners[(i + 1) % 4];
    const double ex = b[0] - a[0];
    const double ey = b[1] - a[1];
    const double len = std::hypot(ex, ey);
    // Outward normal of a counter-clockwise polygon edge.
    const double nx = ey / len;
    const double ny = -ex / len;
    const double mx = 0.5 * (a[0] + b[0]);
    const double my = 0.5 * (a[1] + b[1]);
    const double mr = std::hypot(mx, my);
    const double facing = -(nx * mx + ny * my) / mr;
    if (facing > 0.0) faces.push_back({a, b, len * facing});
  }
  if (faces.empty()) return;
  std::vector<double> weights;
  for (const auto& f : faces) weights.push_back(f.weight);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  const double z0 = box.cz - 0.5 * box.h;
  for (int i = 0; i < n; ++i) {
    const Face& f = faces[pick(rng)];
    const double t = uniform(rng, 0.0, 1.0);
    Vec3 p = {f.a[0] + t * (f.b[0] - f.a[0]), f.a[1] + t * (f.b[1] - f.a[1]),
              z0 + uniform(rng, 0.0, box.h)};
    for (double& c : p) c += normal(rng, noise);
    out.push_back(p);
  }
}

// Gaussian cluster in the box frame, truncated to the box by rejection.
void sample_cluster(const BoundingBox3D& box, int n, const Vec3& sigma, double noise, Rng& rng,
                    std::vector<Vec3>& out) {
  const double c = std::cos(box.yaw);
  const double s = std::sin(box.yaw);
  for (int i = 0; i < n; ++i) {
    Vec3 local{};
    for (int attempt = 0; attempt < 64; ++attempt) {
      local = {normal(rng, sigma[0]), normal(rng, sigma[1]), normal(rng, sigma[2])};
      if (std::abs(local[0]) <= 0.5 * box.l && std::abs(local[1]) <= 0.5 * box.w &&
          std::abs(local[2]) <= 0.5 * box.h)
        break;
      local = {std::clamp(local[0], -0.5 * box.l, 0.5 * box.l),
               std::clamp(local[1], -0.5 * box.w, 0.5 * box.w),
               std::clamp(local[2], -0.5 * box.h, 0.5 * box.h)};
    }
    Vec3 p = {box.cx + c * local[0] - s * local[1], box.cy + s * local[0] + c * local[1],
              box.cz + local[2]};
    for (double& v : p) v += normal(rng, noise);
    out.push_back(p);
  }
}

double circumradius(const BoundingBox3D& b) { return 0.5 * std::hypot(b.l, b.w); }

}  // namespace

Frame generate_scene(const SceneSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Frame frame;
  frame.cloud.frame_id = "synthetic-" + std::to_string(seed);

  for (ObjectClass cls : kAllClasses) {
    const int ci = static_cast<int>(cls);
    const auto dims = default_dims(cls);
    const Interval band = spec.lateral_band[ci];
    for (int k = 0; k < spec.counts[ci]; ++k) {
      bool placed = false;
      for (int attempt = 0; attempt < spec.max_retries && !placed; ++attempt) {
        BoundingBox3D box;
        box.class_id = cls;
        box.l = dims[0] * (1.0 + uniform(rng, -spec.size_jitter, spec.size_jitter));
        box.w = dims[1] * (1.0 + uniform(rng, -spec.size_jitter, spec.size_jitter));
        box.h = dims[2] * (1.0 + uniform(rng, -spec.size_jitter, spec.size_jitter));
        box.yaw = wrap_angle(uniform(rng, spec.yaw_range.lo, spec.yaw_range.hi));
        box.cx = uniform(rng, spec.x_range.lo, spec.x_range.hi);
        const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
        box.cy = side * uniform(rng, band.lo, band.hi);
        box.cz = spec.ground_z + 0.5 * box.h;
        const double r = circumradius(box);
        if (box.cx - r < spec.x_range.lo || box.cx + r > spec.x_range.hi ||
            box.cy - r < spec.y_range.lo || box.cy + r > spec.y_range.hi)
          continue;
        bool clear = true;
        for (const auto& other : frame.gt_boxes) {
          const double d = std::hypot(box.cx - other.cx, box.cy - other.cy);
          if (d < r + circumradius(other) + spec.min_gap) {
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        frame.gt_boxes.push_back(box);
        placed = true;
      }
      if (!placed)
        throw std::runtime_error("infeasible placement for " + std::string(class_name(cls)) +
                                 " after " + std::to_string(spec.max_retries) + " retries");
    }
  }

  for (const auto& box : frame.gt_boxes) {
    const int ci = static_cast<int>(box.class_id);
    const IntRange pr = spec.points_per_object[ci];
    const int n = std::uniform_int_distribution<int>(pr.lo, std::max(pr.lo, pr.hi))(rng);
    const ClassRadar radar = class_radar(box.class_id);
    const double speed = uniform(rng, 0.0, radar.speed_max);
    const double vx = speed * std::cos(box.yaw);
    const double vy = speed * std::sin(box.yaw);
    std::vector<Vec3> pts;
    switch (box.class_id) {
      case ObjectClass::Car:
      case ObjectClass::Truck:
        sample_visible_faces(box, n, spec.noise_sigma, rng, pts);
        break;
      case ObjectClass::Pedestrian: {
        const double s = spec.pedestrian_sigma;
        sample_cluster(box, n, {s, s, s}, spec.noise_sigma, rng, pts);
        break;
      }
      case ObjectClass::Cyclist:
        sample_cluster(box, n, {box.l / 3.0, box.w / 10.0, box.h / 10.0}, spec.noise_sigma, rng,
                       pts);
        break;
    }
    for (const auto& p : pts) {
      frame.cloud.points.push_back({p[0], p[1], p[2], radar.rcs_mean + normal(rng, 2.0),
                                    radial_velocity(p, vx, vy) + normal(rng, 0.05)});
    }
  }

  for (int i = 0; i < spec.clutter_points; ++i) {
    const double x = uniform(rng, spec.x_range.lo, spec.x_range.hi);
    const double y = uniform(rng, spec.y_range.lo, spec.y_range.hi);
    const double z = uniform(rng, spec.ground_z, spec.ground_z + 2.0);
    frame.cloud.points.push_back({x, y, z, -10.0 + normal(rng, 3.0), normal(rng, 0.1)});
  }
  return frame;
}

bool AugmentSpec::valid() const {
  return rotation_range >= 0.0 && flip_y >= 0.0 && flip_y <= 1.0 && scale_range.lo > 0.0 &&
         scale_range.lo <= 1.0 && scale_range.hi >= 1.0;
}

Frame transform_frame(const Frame& frame, bool flip, double angle, double scale) {
  Frame out = frame;
  const bool rotate = angle != 0.0;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  auto apply = [&](double& x, double& y, double& z) {
    if (flip) y = -y;
    if (rotate) {
      const double nx = c * x - s * y;
      const double ny = s * x + c * y;
      x = nx;
      y = ny;
    }
    if (scale != 1.0) {
      x *= scale;
      y *= scale;
      z *= scale;
    }
  };
  for (auto& p : out.cloud.points) apply(p.x, p.y, p.z);
  for (auto& b : out.gt_boxes) {
    apply(b.cx, b.cy, b.cz);
    double yaw = b.yaw;
    if (flip) yaw = -yaw;
    if (rotate) yaw += angle;
    b.yaw = wrap_angle(yaw);
    if (scale != 1.0) {
      b.l *= scale;
      b.w *= scale;
      b.h *= scale;
    }
  }
  return out;
}

Frame augment(const Frame& frame, const AugmentSpec& spec, std::uint64_t seed) {
  if (!spec.valid()) throw std::invalid_argument("invalid augmentation spec");
  Rng rng(seed);
  const double u_flip = uniform(rng, 0.0, 1.0);
  const double angle = uniform(rng, -spec.rotation_range, spec.rotation_range);
  const double scale = uniform(rng, spec.scale_range.lo, spec.scale_range.hi);
  return transform_frame(frame, u_flip < spec.flip_y, angle, scale);
}

}  // namespace mufasa
