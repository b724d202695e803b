#include "mufasa/geospa.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mufasa::geospa {

void init_geospa(nn::Parameters& params, const GeoSpaConfig& config, nn::Rng& rng) {
  nn::init_mlp(params, config.prefix + ".pw", config.pointwise_spec(), rng);
  nn::init_mlp(params, config.prefix + ".lift", config.lift_spec(), rng);
}

nn::Tensor decorate_subset(std::span<const RadarPoint> subset, const GeoSpaConfig& config) {
  std::vector<Vec3> pos;
  for (const auto& p : subset) pos.push_back(p.position());
  std::sort(pos.begin(), pos.end());
  Vec3 c{0, 0, 0};
  for (const auto& p : pos)
    for (int k = 0; k < 3; ++k) c[k] += p[k];
  if (!pos.empty())
    for (double& v : c) v /= static_cast<double>(pos.size());
  nn::Tensor out({subset.size(), kPointFeatureDim});
  for (std::size_t i = 0; i < subset.size(); ++i) {
    const auto& p = subset[i];
    const double row[kPointFeatureDim] = {p.x, p.y, p.z, config.use_rcs ? p.rcs : 0.0,
                                          config.use_doppler ? p.v_r : 0.0,
                                          p.x - c[0], p.y - c[1], p.z - c[2]};
    std::copy(row, row + kPointFeatureDim, out.data() + i * kPointFeatureDim);
  }
  return out;
}

nn::Tensor descriptor_rows(std::span<const lalonde::LalondeDescriptor> descs) {
  nn::Tensor out({descs.size(), kDescriptorDim});
  for (std::size_t i = 0; i < descs.size(); ++i) {
    out.at(i, 0) = descs[i].l_scatter;
    out.at(i, 1) = descs[i].l_linear;
    out.at(i, 2) = descs[i].l_surface;
  }
  return out;
}

PointwiseOutput pointwise_encode(nn::Tape& t, const nn::Parameters& params,
                                 const GeoSpaConfig& config, nn::Var decorated) {
  if (t.shape(decorated).at(0) == 0) throw std::invalid_argument("geospa: empty subset");
  const nn::Var h = nn::mlp_forward(t, params, config.prefix + ".pw", config.pointwise_spec(), decorated);
  return {h, nn::maxpool_rows(t, h)};
}

nn::Var lalonde_lift(nn::Tape& t, const nn::Parameters& params, const GeoSpaConfig& config,
                     nn::Var descriptors) {
  return nn::mlp_forward(t, params, config.prefix + ".lift", config.lift_spec(), descriptors);
}

nn::Var geospa_fuse(nn::Tape& t, nn::Var f_pw, nn::Var f_lalonde) {
  if (t.shape(f_pw).at(0) != t.shape(f_lalonde).at(0))
    throw std::invalid_argument("geospa: point-wise and Lalonde features cover different points");
  const std::array<nn::Var, 2> parts{f_pw, f_lalonde};
  return nn::concat_cols(t, parts);
}

PointFeatureSet geospa_forward(nn::Tape& t, const nn::Parameters& params,
                               const GeoSpaConfig& config, std::span<const RadarPoint> subset,
                               std::span<const lalonde::LalondeDescriptor> descs,
                               bool use_lalonde) {
  if (descs.size() != subset.size())
    throw std::invalid_argument("geospa: " + std::to_string(descs.size()) + " descriptors for " +
                                std::to_string(subset.size()) + " points");
  const auto pw = pointwise_encode(t, params, config, t.constant(decorate_subset(subset, config)));
  const nn::Var fl = use_lalonde
                         ? lalonde_lift(t, params, config, t.constant(descriptor_rows(descs)))
                         : t.constant(nn::Tensor({subset.size(), config.d_lalonde}));
  const nn::Var sp = geospa_fuse(t, pw.per_point, fl);
  return {pw.per_point, fl, sp, nn::maxpool_rows(t, sp)};
}

RadarPoint to_box_frame(const RadarPoint& p, const BoundingBox3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double dx = p.x - box.cx, dy = p.y - box.cy;
  return {c * dx + s * dy, -s * dx + c * dy, p.z - box.cz, p.rcs, p.v_r};
}

RoiFeature geospa_in_roi(nn::Tape& t, const nn::Parameters& params, const GeoSpaConfig& config,
                         const PointCloud& cloud, std::span<const lalonde::LalondeDescriptor> descs,
                         const BoundingBox3D& box, bool use_lalonde) {
  if (descs.size() != cloud.size())
    throw std::invalid_argument("geospa: ROI needs one descriptor per cloud point");
  RoiFeature out;
  std::vector<RadarPoint> local;
  std::vector<lalonde::LalondeDescriptor> local_descs;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (box.contains(cloud.points[i].position())) {
      out.members.push_back(i);
      local.push_back(to_box_frame(cloud.points[i], box));
      local_descs.push_back(descs[i]);
    }
  if (local.empty()) {
    out.vector = t.constant(nn::Tensor({config.d_sp()}));
    return out;
  }
  out.empty = false;
  out.vector = geospa_forward(t, params, config, local, local_descs, use_lalonde).pooled;
  return out;
}

}  // namespace mufasa::geospa
