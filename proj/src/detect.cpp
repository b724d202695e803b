#include "mufasa/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <tuple>
#include <unordered_map>

namespace mufasa::detect {

namespace {

double cross(const std::array<double, 2>& o, const std::array<double, 2>& a,
             const std::array<double, 2>& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

Polygon corners_of(const BoundingBox3D& b) {
  const auto c = b.bev_corners();
  return Polygon(c.begin(), c.end());
}

auto box_key(const BoundingBox3D& b) {
  return std::make_tuple(b.cx, b.cy, b.cz, b.l, b.w, b.h, b.yaw);
}

}  // namespace

Polygon clip_convex(const Polygon& subject, const Polygon& clip) {
  Polygon out = subject;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const auto& a = clip[e];
    const auto& b = clip[(e + 1) % clip.size()];
    Polygon in;
    in.swap(out);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const auto& p = in[i];
      const auto& q = in[(i + 1) % in.size()];
      const double dp = cross(a, b, p), dq = cross(a, b, q);
      if (dp >= 0) out.push_back(p);
      if ((dp >= 0) != (dq >= 0)) {
        const double s = dp / (dp - dq);
        out.push_back({p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])});
      }
    }
  }
  return out;
}

double polygon_area(const Polygon& poly) {
  double a = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    a += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * std::abs(a);
}

double bev_intersection(const BoundingBox3D& a, const BoundingBox3D& b) {
  const double reach = 0.5 * (std::hypot(a.l, a.w) + std::hypot(b.l, b.w));
  if (std::hypot(a.cx - b.cx, a.cy - b.cy) > reach) return 0.0;
  const double area = polygon_area(clip_convex(corners_of(a), corners_of(b)));
  return area < 1e-12 ? 0.0 : area;
}

double iou3d(const BoundingBox3D& a_in, const BoundingBox3D& b_in, bool bev_only) {
  // A fixed argument order makes the result exactly symmetric.
  const bool swap = box_key(b_in) < box_key(a_in);
  const BoundingBox3D& a = swap ? b_in : a_in;
  const BoundingBox3D& b = swap ? a_in : b_in;
  if (box_key(a) == box_key(b)) return 1.0;
  const double inter_bev = bev_intersection(a, b);
  if (inter_bev == 0.0) return 0.0;
  double inter, uni;
  if (bev_only) {
    inter = inter_bev;
    uni = a.l * a.w + b.l * b.w - inter;
  } else {
    const double lo = std::max(a.cz - 0.5 * a.h, b.cz - 0.5 * b.h);
    const double hi = std::min(a.cz + 0.5 * a.h, b.cz + 0.5 * b.h);
    if (hi <= lo) return 0.0;
    inter = inter_bev * (hi - lo);
    uni = a.volume() + b.volume() - inter;
  }
  return std::clamp(inter / uni, 0.0, 1.0);
}

double bev_iou(const BoundingBox3D& a, const BoundingBox3D& b) { return iou3d(a, b, true); }

std::vector<std::size_t> nms(std::span<const Detection> dets, double iou_thresh) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool keep = true;
    for (std::size_t k : kept)
      if (bev_iou(dets[i].box, dets[k].box) > iou_thresh) {
        keep = false;
        break;
      }
    if (keep) kept.push_back(i);
  }
  return kept;
}

bool RegionSpec::contains(const BoundingBox3D& b) const {
  return b.cx >= x_min && b.cx <= x_max && b.cy >= y_min && b.cy <= y_max;
}

std::vector<PrPoint> pr_curve(std::span<const FrameResult> frames, ObjectClass cls,
                              const RegionSpec& region, double iou_thresh, bool bev_only) {
  std::vector<std::vector<std::size_t>> gts(frames.size());
  std::size_t total_gt = 0;
  struct Item {
    double score;
    std::size_t frame, index;
  };
  std::vector<Item> items;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t g = 0; g < frames[f].gts.size(); ++g)
      if (frames[f].gts[g].class_id == cls && region.contains(frames[f].gts[g])) gts[f].push_back(g);
    total_gt += gts[f].size();
    for (std::size_t d = 0; d < frames[f].dets.size(); ++d) {
      const auto& det = frames[f].dets[d];
      if (det.box.class_id == cls && region.contains(det.box)) items.push_back({det.score, f, d});
    }
  }
  if (total_gt == 0) return {};
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) {
    return std::tie(b.score, a.frame, a.index) < std::tie(a.score, b.frame, b.index);
  });

  std::vector<std::vector<bool>> used(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) used[f].assign(gts[f].size(), false);
  std::vector<PrPoint> curve;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    const auto& det = frames[it.frame].dets[it.index];
    double best = -1.0;
    std::size_t best_g = 0;
    for (std::size_t k = 0; k < gts[it.frame].size(); ++k) {
      if (used[it.frame][k]) continue;
      const double iou = iou3d(det.box, frames[it.frame].gts[gts[it.frame][k]], bev_only);
      if (iou >= iou_thresh && iou > best) best = iou, best_g = k;
    }
    if (best >= 0.0) {
      used[it.frame][best_g] = true;
      ++tp;
    }
    if (i + 1 == items.size() || items[i + 1].score != it.score)
      curve.push_back({static_cast<double>(tp) / static_cast<double>(total_gt),
                       static_cast<double>(tp) / static_cast<double>(i + 1)});
  }
  return curve;
}

double interpolated_ap40(std::span<const PrPoint> curve) {
  double sum = 0.0;
  for (int k = 1; k <= 40; ++k) {
    const double r = k / 40.0;
    double best = 0.0;
    for (const auto& p : curve)
      if (p.recall >= r) best = std::max(best, p.precision);
    sum += best;
  }
  return sum / 40.0;
}

ApResult average_precision(std::span<const FrameResult> frames, ObjectClass cls,
                           const RegionSpec& region, double iou_thresh, bool bev_only) {
  ApResult r;
  for (const auto& f : frames) {
    for (const auto& g : f.gts) r.num_gt += (g.class_id == cls && region.contains(g));
    for (const auto& d : f.dets) r.num_det += (d.box.class_id == cls && region.contains(d.box));
  }
  if (r.num_gt > 0) r.ap = interpolated_ap40(pr_curve(frames, cls, region, iou_thresh, bev_only));
  return r;
}

const RegionResult& EvalResult::region(const std::string& name) const {
  for (const auto& r : regions)
    if (r.region == name) return r;
  throw std::out_of_range("no evaluation region '" + name + "'");
}

EvalResult evaluate(std::span<const FrameResult> frames, std::span<const RegionSpec> regions,
                    const ClassThresholds& thresholds, bool bev_only) {
  EvalResult out;
  for (const auto& region : regions) {
    RegionResult rr;
    rr.region = region.name;
    double sum = 0;
    int n = 0;
    for (ObjectClass c : kAllClasses) {
      const int ci = static_cast<int>(c);
      rr.per_class[ci] = average_precision(frames, c, region, thresholds[ci], bev_only);
      if (rr.per_class[ci].defined()) sum += rr.per_class[ci].ap, ++n;
    }
    if (n) rr.map = sum / n;
    out.regions.push_back(std::move(rr));
  }
  return out;
}

std::string report_csv(const EvalResult& result) {
  std::ostringstream os;
  os << "region,class,ap,num_gt,num_det\n";
  char buf[64];
  for (const auto& r : result.regions)
    for (ObjectClass c : kAllClasses) {
      const auto& a = r.per_class[static_cast<int>(c)];
      if (a.defined())
        std::snprintf(buf, sizeof buf, "%.6f", a.ap);
      else
        std::snprintf(buf, sizeof buf, "nan");
      os << r.region << ',' << class_name(c) << ',' << buf << ',' << a.num_gt << ',' << a.num_det << '\n';
    }
  return os.str();
}

void write_report_csv(const EvalResult& result, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << report_csv(result);
}

void write_detections(std::span<const Detection> dets, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  char buf[32];
  for (const auto& d : dets) {
    std::snprintf(buf, sizeof buf, " %.6f", d.score);
    out << format_label(d.box) << buf << '\n';
  }
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<Detection> out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cut = line.find_last_of(' ');
    if (cut == std::string::npos) throw std::runtime_error(path.string() + ": bad detection row " + std::to_string(row));
    Detection d;
    d.box = parse_label(std::string_view(line).substr(0, cut));
    d.score = std::stod(line.substr(cut + 1));
    out.push_back(d);
  }
  return out;
}

BoundingBox3D AnchorSet::anchor(ObjectClass c, double x, double y) const {
  const auto& d = dims[static_cast<int>(c)];
  return {x, y, ground_z + 0.5 * d[2], d[0], d[1], d[2], 0.0, c};
}

void init_head(nn::Parameters& params, const HeadConfig& config, std::size_t in_channels,
               nn::Rng& rng) {
  nn::init_conv(params, config.prefix, in_channels, kHeadChannels, 1, rng);
  // Objectness starts near a 1% prior so the focal loss is not swamped by negatives.
  params.at(config.prefix + ".bias")[kObjOffset] = -std::log(99.0);
}

nn::Var head_forward(nn::Tape& t, const nn::Parameters& params, const HeadConfig& config,
                     nn::Var feat) {
  return nn::conv_forward(t, params, config.prefix, feat);
}

nn::Var head_at_cells(nn::Tape& t, const nn::Parameters& params, const HeadConfig& config,
                      nn::Var feat, std::span<const std::int64_t> cells) {
  const auto& w_value = nn::param_at(params, config.prefix + ".weight");
  if (w_value.rank() != 4 || w_value.dim(1) != t.shape(feat).at(0))
    throw std::invalid_argument("head: feature channels do not match the head weights");
  const nn::Var w = t.parameter(config.prefix + ".weight", w_value);
  const nn::Var b = t.parameter(config.prefix + ".bias", nn::param_at(params, config.prefix + ".bias"));
  const nn::Var rows = nn::gather_from_grid(t, feat, cells);
  return nn::linear(t, rows, nn::reshape(t, w, {w_value.dim(0), w_value.dim(1)}), b);
}

double canonical_yaw(double yaw) {
  double y = wrap_angle(yaw);
  if (y > std::numbers::pi / 2) y -= std::numbers::pi;
  if (y <= -std::numbers::pi / 2) y += std::numbers::pi;
  return y;
}

std::array<double, kRegDim> encode_box(const BoundingBox3D& box, double x, double y,
                                       const AnchorSet& anchors) {
  const auto a = anchors.anchor(box.class_id, x, y);
  const double diag = std::hypot(a.l, a.w);
  return {(box.cx - x) / diag, (box.cy - y) / diag, (box.cz - a.cz) / a.h,
          std::log(box.l / a.l), std::log(box.w / a.w), std::log(box.h / a.h),
          std::sin(box.yaw), std::cos(box.yaw)};
}

BoundingBox3D decode_box(std::span<const double> reg, double x, double y, ObjectClass cls,
                         const AnchorSet& anchors) {
  const auto a = anchors.anchor(cls, x, y);
  const double diag = std::hypot(a.l, a.w);
  BoundingBox3D b;
  b.class_id = cls;
  b.cx = x + reg[0] * diag;
  b.cy = y + reg[1] * diag;
  b.cz = a.cz + reg[2] * a.h;
  b.l = a.l * std::exp(reg[3]);
  b.w = a.w * std::exp(reg[4]);
  b.h = a.h * std::exp(reg[5]);
  b.yaw = (reg[6] == 0.0 && reg[7] == 0.0) ? 0.0 : wrap_angle(std::atan2(reg[6], reg[7]));
  return b;
}

std::vector<Detection> decode_cells(const nn::Tensor& head_out, std::span<const std::int64_t> cells,
                                    const projection::GridSpec& grid, const HeadConfig& config) {
  if (head_out.rank() != 2 || head_out.dim(1) != kHeadChannels || head_out.dim(0) != cells.size())
    throw std::invalid_argument("head: output " + nn::shape_string(head_out.shape()) +
                                " does not match " + std::to_string(cells.size()) + " cells");
  std::vector<Detection> out;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const double* row = head_out.data() + k * kHeadChannels;
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumClasses; ++c)
      if (row[c] > row[best]) best = c;
    double z = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) z += std::exp(row[c] - row[best]);
    const double p = 1.0 / z;
    const auto centre = projection::pillar_center(cells[k], grid);
    Detection d;
    d.box = decode_box({row + kRegOffset, kRegDim}, centre[0], centre[1],
                       static_cast<ObjectClass>(best), config.anchors);
    d.score = nn::sigmoid(row[kObjOffset]) * p;
    out.push_back(d);
  }
  return out;
}

HeadTargets assign_targets(std::span<const Vec3> points, std::span<const std::int64_t> point_cells,
                           std::span<const std::int64_t> cells, std::span<const BoundingBox3D> gts,
                           const projection::GridSpec& grid, const HeadConfig& config) {
  if (points.size() != point_cells.size())
    throw std::invalid_argument("head targets: one cell per point required");
  const std::size_t K = cells.size();
  HeadTargets t;
  t.objectness.assign(K, 0.0);
  t.label.assign(K, 0);
  t.positive.assign(K, 0.0);
  t.matched_box.assign(K, -1);
  t.reg = nn::Tensor({K, kRegDim});
  std::unordered_map<std::int64_t, std::size_t> row_of;
  for (std::size_t k = 0; k < K; ++k) row_of.emplace(cells[k], k);
  std::vector<std::vector<int>> counts(K, std::vector<int>(gts.size(), 0));
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto it = row_of.find(point_cells[i]);
    if (it == row_of.end()) continue;
    for (std::size_t g = 0; g < gts.size(); ++g)
      if (gts[g].contains(points[i], config.positive_margin)) ++counts[it->second][g];
  }
  for (std::size_t k = 0; k < K; ++k) {
    int best = 0;
    int best_g = -1;
    for (std::size_t g = 0; g < gts.size(); ++g)
      if (counts[k][g] > best) best = counts[k][g], best_g = static_cast<int>(g);
    if (best_g < 0) continue;
    BoundingBox3D box = gts[best_g];
    box.yaw = canonical_yaw(box.yaw);
    const auto centre = projection::pillar_center(cells[k], grid);
    const auto enc = encode_box(box, centre[0], centre[1], config.anchors);
    std::copy(enc.begin(), enc.end(), t.reg.data() + k * kRegDim);
    t.objectness[k] = 1.0;
    t.positive[k] = 1.0;
    t.label[k] = static_cast<int>(box.class_id);
    t.matched_box[k] = best_g;
    ++t.num_positive;
  }
  return t;
}

HeadLoss head_loss(nn::Tape& t, nn::Var head_out, const HeadTargets& targets,
                   const HeadConfig& config) {
  const std::size_t K = targets.objectness.size();
  if (t.shape(head_out) != nn::Shape{K, kHeadChannels})
    throw std::invalid_argument("head loss: output does not match targets");
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, targets.num_positive));
  const std::vector<double> ones(K, 1.0);
  const nn::Var obj = nn::reshape(t, nn::slice_cols(t, head_out, kObjOffset, kObjOffset + 1), {K});
  const nn::Var cls = nn::slice_cols(t, head_out, 0, kNumClasses);
  const nn::Var reg = nn::slice_cols(t, head_out, kRegOffset, kRegOffset + kRegDim);
  HeadLoss l;
  l.objectness = nn::scale(t, nn::sigmoid_focal_loss(t, obj, targets.objectness, ones, config.focal_alpha, config.focal_gamma), norm);
  l.classification = nn::scale(t, nn::softmax_cross_entropy(t, cls, targets.label, targets.positive), norm);
  l.regression = nn::scale(t, nn::smooth_l1(t, reg, targets.reg, targets.positive, config.reg_beta), norm);
  l.total = nn::add(t, nn::add(t, l.objectness, l.classification), l.regression);
  return l;
}

}  // namespace mufasa::detect
