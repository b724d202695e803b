#include "mufasa/projection.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

namespace mufasa::projection {

namespace {

std::size_t cells_along(double lo, double hi, double cell) {
  // The epsilon keeps exact multiples such as 51.2 / 0.16 from rounding up to an extra cell.
  return static_cast<std::size_t>(std::max(1.0, std::ceil((hi - lo) / cell - 1e-9)));
}

}  // namespace

std::size_t GridSpec::height() const { return cells_along(min0, max0, cell0); }
std::size_t GridSpec::width() const { return cells_along(min1, max1, cell1); }

bool GridSpec::valid() const {
  return std::isfinite(min0) && std::isfinite(max0) && std::isfinite(min1) && std::isfinite(max1) &&
         max0 > min0 && max1 > min1 && cell0 > 0 && cell1 > 0;
}

GridSpec GridSpec::bev_default() { return GridSpec{}; }

GridSpec GridSpec::cylinder_default() {
  GridSpec g;
  g.view = View::Cylinder;
  g.min0 = -std::numbers::pi;
  g.max0 = std::numbers::pi;
  g.cell0 = 2.0 * std::numbers::pi / 320.0;
  g.min1 = -3.0;
  g.max1 = 2.0;
  g.cell1 = 0.2;
  return g;
}

CylindricalPoint to_cylindrical(const RadarPoint& p) {
  const double theta = (p.x == 0.0 && p.y == 0.0) ? 0.0 : std::atan2(p.y, p.x);
  // atan2 returns -pi for (-x, -0.0); fold it into the half-open range.
  return {std::hypot(p.x, p.y), theta == -std::numbers::pi ? std::numbers::pi : theta, p.z};
}

std::array<double, 2> planar_coords(const RadarPoint& p, View view) {
  if (view == View::Bev) return {p.x, p.y};
  const auto c = to_cylindrical(p);
  return {c.theta, c.z_prime};
}

std::int64_t pillar_of(const std::array<double, 2>& a, const GridSpec& grid) {
  const std::size_t H = grid.height(), W = grid.width();
  const bool wraps = grid.view == View::Cylinder;
  const bool in0 = a[0] >= grid.min0 && (a[0] < grid.max0 || (wraps && a[0] == grid.max0));
  const bool in1 = a[1] >= grid.min1 && a[1] < grid.max1;
  if (!in0 || !in1) return -1;
  const auto r = std::min(static_cast<std::size_t>(std::floor((a[0] - grid.min0) / grid.cell0)), H - 1);
  const auto c = std::min(static_cast<std::size_t>(std::floor((a[1] - grid.min1) / grid.cell1)), W - 1);
  return static_cast<std::int64_t>(r * W + c);
}

std::size_t PillarAssignment::assigned() const {
  return static_cast<std::size_t>(std::count_if(pillar.begin(), pillar.end(), [](auto m) { return m >= 0; }));
}

PillarAssignment assign_pillars(const PointCloud& cloud, const GridSpec& grid) {
  if (!grid.valid()) throw std::invalid_argument("projection: invalid grid spec");
  PillarAssignment out;
  out.height = grid.height();
  out.width = grid.width();
  out.pillar.reserve(cloud.size());
  for (const auto& p : cloud.points) out.pillar.push_back(pillar_of(planar_coords(p, grid.view), grid));
  return out;
}

std::array<double, 2> pillar_center(std::int64_t pillar, const GridSpec& grid) {
  const std::size_t W = grid.width();
  const auto r = static_cast<std::size_t>(pillar) / W;
  const auto c = static_cast<std::size_t>(pillar) % W;
  return {grid.min0 + (static_cast<double>(r) + 0.5) * grid.cell0,
          grid.min1 + (static_cast<double>(c) + 0.5) * grid.cell1};
}

PillarBatch decorate_pillars(const PointCloud& cloud, const PillarAssignment& assign,
                             const GridSpec& grid, const PillarOptions& options) {
  if (assign.pillar.size() != cloud.size())
    throw std::invalid_argument("projection: assignment does not match cloud size");
  std::map<std::int64_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (assign.pillar[i] >= 0) {
      auto& m = members[assign.pillar[i]];
      if (m.size() < options.max_points) m.push_back(i);
    }

  PillarBatch batch;
  std::vector<double> rows;
  for (const auto& [cell, idx] : members) {
    const std::size_t seg = batch.cells.size();
    batch.cells.push_back(cell);
    // Mean over the members in coordinate order, so it does not depend on input order.
    std::vector<Vec3> pos;
    for (std::size_t i : idx) pos.push_back(cloud.points[i].position());
    std::sort(pos.begin(), pos.end());
    Vec3 mean{0, 0, 0};
    for (const auto& p : pos)
      for (int k = 0; k < 3; ++k) mean[k] += p[k];
    for (double& m : mean) m /= static_cast<double>(pos.size());
    const auto centre = pillar_center(cell, grid);
    for (std::size_t i : idx) {
      const auto& p = cloud.points[i];
      const auto a = planar_coords(p, grid.view);
      rows.insert(rows.end(), {p.x, p.y, p.z, options.use_rcs ? p.rcs : 0.0,
                               options.use_doppler ? p.v_r : 0.0, p.x - mean[0], p.y - mean[1],
                               p.z - mean[2], a[0] - centre[0], a[1] - centre[1]});
      batch.point.push_back(i);
      batch.segment.push_back(seg);
    }
  }
  batch.features = nn::Tensor({batch.point.size(), kPillarFeatureDim}, std::move(rows));
  return batch;
}

nn::Var encode_pillars(nn::Tape& t, const nn::Parameters& params, const std::string& prefix,
                       const nn::MlpSpec& encoder, const PillarBatch& batch, const GridSpec& grid) {
  if (encoder.input_dim() != kPillarFeatureDim)
    throw std::invalid_argument(prefix + ": pillar encoder expects " +
                                std::to_string(kPillarFeatureDim) + " inputs, spec has " +
                                std::to_string(encoder.input_dim()));
  const std::size_t C = encoder.output_dim();
  if (batch.point.empty()) return t.constant(nn::Tensor({C, grid.height(), grid.width()}));
  const nn::Var h = nn::mlp_forward(t, params, prefix, encoder, t.constant(batch.features));
  const nn::Var pooled = nn::segment_max(t, h, batch.segment, batch.cells.size());
  return nn::scatter_to_grid(t, pooled, batch.cells, grid.height(), grid.width());
}

PseudoImage encode_pillars(const PointCloud& cloud, const PillarAssignment& assign,
                           const GridSpec& grid, const nn::Parameters& params,
                           const std::string& prefix, const nn::MlpSpec& encoder,
                           const PillarOptions& options) {
  nn::Tape t;
  const auto batch = decorate_pillars(cloud, assign, grid, options);
  return {t.value(encode_pillars(t, params, prefix, encoder, batch, grid))};
}

nn::Var gather_to_points(nn::Tape& t, nn::Var img, const PillarAssignment& assign) {
  const auto& s = t.shape(img);
  if (s.size() != 3 || s[1] != assign.height || s[2] != assign.width)
    throw std::invalid_argument("projection: image " + nn::shape_string(s) +
                                " does not match the assignment grid");
  return nn::gather_from_grid(t, img, assign.pillar);
}

nn::Tensor gather_to_points(const PseudoImage& img, const PillarAssignment& assign) {
  nn::Tape t;
  return t.value(gather_to_points(t, t.constant(img.data), assign));
}

nn::Var scatter_max(nn::Tape& t, nn::Var rows, std::span<const std::int64_t> cells,
                    std::size_t height, std::size_t width) {
  const auto& s = t.shape(rows);
  if (s.size() != 2 || s[0] != cells.size())
    throw std::invalid_argument("projection: scatter_max needs one cell per row");
  std::vector<std::int64_t> unique;
  for (auto c : cells)
    if (c >= 0) unique.push_back(c);
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  if (unique.empty()) return t.constant(nn::Tensor({s[1], height, width}));
  std::vector<std::size_t> keep, segment;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i] >= 0) {
      keep.push_back(i);
      segment.push_back(static_cast<std::size_t>(
          std::lower_bound(unique.begin(), unique.end(), cells[i]) - unique.begin()));
    }
  const nn::Var kept = nn::gather_rows(t, rows, keep);
  const nn::Var pooled = nn::segment_max(t, kept, segment, unique.size());
  return nn::scatter_to_grid(t, pooled, unique, height, width);
}

void init_view_cnn(nn::Parameters& params, const std::string& prefix, std::size_t channels,
                   std::size_t depth, nn::Rng& rng) {
  for (std::size_t i = 0; i < depth; ++i)
    nn::init_conv(params, prefix + ".conv" + std::to_string(i), channels, channels, 3, rng);
}

nn::Var view_cnn_forward(nn::Tape& t, const nn::Parameters& params, const std::string& prefix,
                         std::size_t depth, nn::Var img) {
  nn::Var h = img;
  for (std::size_t i = 0; i < depth; ++i)
    h = nn::relu(t, nn::conv_forward(t, params, prefix + ".conv" + std::to_string(i), h));
  return h;
}

}  // namespace mufasa::projection
