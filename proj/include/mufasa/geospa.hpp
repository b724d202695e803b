#pragma once

#include <span>
#include <string>
#include <vector>

#include "mufasa/cloud.hpp"
#include "mufasa/lalonde.hpp"
#include "mufasa/nn/mlp.hpp"

namespace mufasa::geospa {

inline constexpr std::size_t kPointFeatureDim = 8;  // x, y, z, rcs, v_r, offset from centroid
inline constexpr std::size_t kDescriptorDim = 3;

struct GeoSpaConfig {
  std::size_t hidden = 64;
  std::size_t d_pw = 64;
  std::size_t d_lalonde = 16;
  bool use_rcs = true;
  bool use_doppler = true;
  std::string prefix = "geospa";

  nn::MlpSpec pointwise_spec() const { return {{kPointFeatureDim, hidden, d_pw}}; }
  nn::MlpSpec lift_spec() const { return {{kDescriptorDim, hidden, d_lalonde}}; }
  std::size_t d_sp() const { return d_pw + d_lalonde; }
};

void init_geospa(nn::Parameters& params, const GeoSpaConfig& config, nn::Rng& rng);

/// [S, 8] rows (x, y, z, rcs, v_r, x - cx, y - cy, z - cz) about the subset centroid.
nn::Tensor decorate_subset(std::span<const RadarPoint> subset, const GeoSpaConfig& config);

/// Per-descriptor rows (l_scatter, l_linear, l_surface).
nn::Tensor descriptor_rows(std::span<const lalonde::LalondeDescriptor> descs);

struct PointwiseOutput {
  nn::Var per_point;  ///< [S, d_pw]
  nn::Var pooled;     ///< [d_pw]
};

PointwiseOutput pointwise_encode(nn::Tape& t, const nn::Parameters& params,
                                 const GeoSpaConfig& config, nn::Var decorated);

nn::Var lalonde_lift(nn::Tape& t, const nn::Parameters& params, const GeoSpaConfig& config,
                     nn::Var descriptors);

/// [S, d_pw + d_L], f_pw in the leading d_pw columns.
nn::Var geospa_fuse(nn::Tape& t, nn::Var f_pw, nn::Var f_lalonde);

struct PointFeatureSet {
  nn::Var f_pw;
  nn::Var f_lalonde;
  nn::Var f_sp;
  nn::Var pooled;  ///< channel max of f_sp over the subset
};

/// Runs the module on a subset. With `use_lalonde` off the lifted half is a zero constant of
/// the same shape and the lift parameters are not touched.
PointFeatureSet geospa_forward(nn::Tape& t, const nn::Parameters& params,
                               const GeoSpaConfig& config, std::span<const RadarPoint> subset,
                               std::span<const lalonde::LalondeDescriptor> descs,
                               bool use_lalonde = true);

struct RoiFeature {
  nn::Var vector;  ///< [d_sp]
  bool empty = true;
  std::vector<std::size_t> members;
};

/// GeoSPA on the points inside `box`, expressed in the box frame (origin at the centre,
/// x along the heading). Empty boxes give a zero vector.
RoiFeature geospa_in_roi(nn::Tape& t, const nn::Parameters& params, const GeoSpaConfig& config,
                         const PointCloud& cloud, std::span<const lalonde::LalondeDescriptor> descs,
                         const BoundingBox3D& box, bool use_lalonde = true);

/// Position of p in the frame of `box`; rcs and v_r are carried over.
RadarPoint to_box_frame(const RadarPoint& p, const BoundingBox3D& box);

}  // namespace mufasa::geospa
