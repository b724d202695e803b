#pragma once

#include <array>
#include <cstdint>
#include <numbers>

#include "mufasa/cloud.hpp"

namespace mufasa {

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Synthetic radar scene recipe. Every field has a default; see README for the config keys.
struct SceneSpec {
  std::array<int, kNumClasses> counts = {2, 1, 1, 0};
  std::array<IntRange, kNumClasses> points_per_object = {
      IntRange{40, 120}, IntRange{5, 20}, IntRange{15, 40}, IntRange{60, 160}};
  /// Lateral |y| band per class; cars keep to the centre, vulnerable road users to the sides.
  std::array<Interval, kNumClasses> lateral_band = {
      Interval{0.0, 6.0}, Interval{3.0, 14.0}, Interval{2.0, 14.0}, Interval{0.0, 8.0}};
  Interval x_range{4.0, 30.0};
  Interval y_range{-14.0, 14.0};
  Interval yaw_range{-std::numbers::pi / 2.0, std::numbers::pi / 2.0};
  double ground_z = -1.5;
  double noise_sigma = 0.03;
  double size_jitter = 0.1;  ///< relative dimension jitter around the class default
  double min_gap = 1.0;      ///< BEV clearance between object circumcircles, m
  int clutter_points = 8;
  int max_retries = 200;
  double pedestrian_sigma = 0.15;
};

/// Nominal object dimensions (l, w, h) per class.
std::array<double, 3> default_dims(ObjectClass c);

/// Deterministic for fixed (spec, seed). Throws std::runtime_error on infeasible placement.
Frame generate_scene(const SceneSpec& spec, std::uint64_t seed);

struct AugmentSpec {
  double rotation_range = 0.0;  ///< uniform angle in [-range, range]
  double flip_y = 0.0;          ///< probability of mirroring y
  Interval scale_range{1.0, 1.0};

  bool valid() const;
};

/// Applies mirror (y -> -y), then rotation about the sensor z axis, then uniform scaling.
Frame transform_frame(const Frame& frame, bool flip, double angle, double scale);

Frame augment(const Frame& frame, const AugmentSpec& spec, std::uint64_t seed);

}  // namespace mufasa
