#include "mufasa/pipeline/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "mufasa/sampling.hpp"

namespace mufasa::pipeline {

namespace {

nn::MlpSpec pillar_spec(const PipelineConfig& c) {
  return {{projection::kPillarFeatureDim, c.model.pillar_hidden, c.model.channels}};
}

nn::MlpSpec refine_spec(const PipelineConfig& c) {
  return {{c.roi_geospa().d_sp() + kNumClasses, c.roi.hidden, 1 + kRoiResidualDim}};
}

projection::PillarOptions pillar_options(const PipelineConfig& c) {
  return {c.model.max_points_per_pillar, c.model.use_rcs, c.model.use_doppler};
}

// Every grid op below reports itself by module when it throws.
template <class F>
auto attributed(const char* module, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string(module) + ": " + e.what());
  }
}

}  // namespace

nn::Parameters init_model(const PipelineConfig& config, std::uint64_t seed) {
  config.validate();
  nn::Rng rng(seed);
  nn::Parameters p;
  const std::size_t C = config.model.channels;
  nn::init_mlp(p, "pillar.bev", pillar_spec(config), rng);
  nn::init_mlp(p, "pillar.cyl", pillar_spec(config), rng);
  projection::init_view_cnn(p, "cnn.bev", C, config.model.cnn_depth, rng);
  projection::init_view_cnn(p, "cnn.cyl", C, config.model.cnn_depth, rng);
  geospa::init_geospa(p, config.geospa, rng);
  demva::init_memory(p, demva::bev_memory(config.demva, C), rng, config.demva.mode);
  demva::init_memory(p, demva::cyl_memory(config.demva, C), rng, config.demva.mode);
  nn::init_mlp(p, config.fusion.prefix, demva::fusion_spec(config.fusion, config.geospa.d_sp(), C, C), rng);
  detect::init_head(p, config.head, config.fusion.d_fused, rng);
  geospa::init_geospa(p, config.roi_geospa(), rng);
  nn::init_mlp(p, "roi.refine", refine_spec(config), rng);
  // The refinement starts as the identity: zero residual, neutral confidence.
  auto& last = p.at("roi.refine.l1.weight");
  last = nn::Tensor(last.shape());
  return p;
}

FrameContext prepare_frame(const PointCloud& cloud, const PipelineConfig& config) {
  FrameContext ctx;
  ctx.cloud = cloud;
  if (cloud.empty()) return ctx;
  const std::size_t m = std::min(config.model.fps_points, cloud.size());
  ctx.subset = sampling::farthest_point_sampling(cloud, m);
  for (std::size_t i : ctx.subset) ctx.subset_points.push_back(cloud.points[i]);

  const auto index = sampling::SpatialIndex::build(cloud, config.descriptors.neighborhood.radius);
  std::vector<std::size_t> all(cloud.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  ctx.cloud_descs = lalonde::descriptors_for(cloud, index, all, config.descriptors);
  for (std::size_t i : ctx.subset) ctx.subset_descs.push_back(ctx.cloud_descs[i]);

  ctx.bev_assign = projection::assign_pillars(cloud, config.bev_grid);
  ctx.cyl_assign = projection::assign_pillars(cloud, config.cyl_grid);
  ctx.bev_pillars = projection::decorate_pillars(cloud, ctx.bev_assign, config.bev_grid, pillar_options(config));
  ctx.cyl_pillars = projection::decorate_pillars(cloud, ctx.cyl_assign, config.cyl_grid, pillar_options(config));
  for (std::size_t i : ctx.subset) ctx.subset_cells.push_back(ctx.bev_assign.pillar[i]);
  for (auto c : ctx.subset_cells)
    if (c >= 0) ctx.head_cells.push_back(c);
  std::sort(ctx.head_cells.begin(), ctx.head_cells.end());
  ctx.head_cells.erase(std::unique(ctx.head_cells.begin(), ctx.head_cells.end()), ctx.head_cells.end());
  return ctx;
}

StageOne stage_one(nn::Tape& t, const nn::Parameters& params, const PipelineConfig& config,
                   const FrameContext& ctx, ForwardTrace* trace) {
  StageOne out;
  if (ctx.subset.empty() || ctx.head_cells.empty()) return out;
  const std::size_t depth = config.model.cnn_depth;

  const nn::Var bev = attributed("projection", [&] {
    return projection::encode_pillars(t, params, "pillar.bev", pillar_spec(config), ctx.bev_pillars, config.bev_grid);
  });
  const nn::Var cyl = attributed("projection", [&] {
    return projection::encode_pillars(t, params, "pillar.cyl", pillar_spec(config), ctx.cyl_pillars, config.cyl_grid);
  });
  const nn::Var bev_c = attributed("projection", [&] { return projection::view_cnn_forward(t, params, "cnn.bev", depth, bev); });
  const nn::Var cyl_c = attributed("projection", [&] { return projection::view_cnn_forward(t, params, "cnn.cyl", depth, cyl); });
  const auto [bev_a, cyl_a] = attributed("demva", [&] {
    return demva::demva_fuse(t, params, config.demva_effective(), bev_c, cyl_c);
  });
  const auto gs = attributed("geospa", [&] {
    return geospa::geospa_forward(t, params, config.geospa, ctx.subset_points, ctx.subset_descs,
                                  config.toggles.geospa_stage1);
  });
  const nn::Var fused = attributed("demva", [&] {
    return demva::multiview_to_points(t, params, config.fusion, bev_a, cyl_a, ctx.bev_assign,
                                      ctx.cyl_assign, ctx.subset, gs.f_sp);
  });
  const nn::Var bev_final = attributed("projection", [&] {
    return projection::scatter_max(t, fused, ctx.subset_cells, config.bev_grid.height(), config.bev_grid.width());
  });
  out.head_out = attributed("detect", [&] {
    return detect::head_at_cells(t, params, config.head, bev_final, ctx.head_cells);
  });
  if (trace) {
    trace->bev_pseudo = t.value(bev);
    trace->cyl_pseudo = t.value(cyl);
    trace->bev_cnn = t.value(bev_c);
    trace->cyl_cnn = t.value(cyl_c);
    trace->bev_attended = t.value(bev_a);
    trace->cyl_attended = t.value(cyl_a);
    trace->f_sp = t.value(gs.f_sp);
    trace->fused_points = t.value(fused);
    trace->bev_final = t.value(bev_final);
    trace->head_out = t.value(out.head_out);
  }
  return out;
}

std::vector<detect::Detection> postprocess(std::vector<detect::Detection> dets,
                                           const detect::HeadConfig& head, std::size_t cap) {
  std::vector<detect::Detection> kept_in;
  for (auto& d : dets)
    if (d.score >= head.score_threshold) kept_in.push_back(d);
  std::vector<detect::Detection> out;
  for (std::size_t i : detect::nms(kept_in, head.nms_iou)) {
    if (out.size() == cap) break;
    out.push_back(kept_in[i]);
  }
  return out;
}

std::array<double, kRoiResidualDim> encode_residual(const BoundingBox3D& p, const BoundingBox3D& g) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  const double dx = g.cx - p.cx, dy = g.cy - p.cy;
  return {(c * dx + s * dy) / p.l, (-s * dx + c * dy) / p.w, (g.cz - p.cz) / p.h,
          std::log(g.l / p.l), std::log(g.w / p.w), std::log(g.h / p.h),
          detect::canonical_yaw(g.yaw - p.yaw)};
}

BoundingBox3D apply_residual(const BoundingBox3D& p, std::span<const double> r) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  const double lx = r[0] * p.l, ly = r[1] * p.w;
  BoundingBox3D b = p;
  b.cx = p.cx + c * lx - s * ly;
  b.cy = p.cy + s * lx + c * ly;
  b.cz = p.cz + r[2] * p.h;
  b.l = p.l * std::exp(r[3]);
  b.w = p.w * std::exp(r[4]);
  b.h = p.h * std::exp(r[5]);
  b.yaw = wrap_angle(p.yaw + r[6]);
  return b;
}

RoiOutputs roi_stage(nn::Tape& t, const nn::Parameters& params, const PipelineConfig& config,
                     const FrameContext& ctx, std::span<const BoundingBox3D> proposals) {
  const auto gcfg = config.roi_geospa();
  const auto spec = refine_spec(config);
  RoiOutputs out;
  for (const auto& p : proposals) {
    BoundingBox3D grown = p;
    grown.l += 2 * config.roi.margin;
    grown.w += 2 * config.roi.margin;
    grown.h += 2 * config.roi.margin;
    const auto rf = attributed("geospa", [&] {
      return geospa::geospa_in_roi(t, params, gcfg, ctx.cloud, ctx.cloud_descs, grown, true);
    });
    nn::Tensor onehot({1, static_cast<std::size_t>(kNumClasses)});
    onehot[static_cast<std::size_t>(p.class_id)] = 1.0;
    const nn::Var parts[] = {nn::reshape(t, rf.vector, {1, gcfg.d_sp()}), t.constant(onehot)};
    const nn::Var y = nn::mlp_forward(t, params, "roi.refine", spec, nn::concat_cols(t, parts));
    out.conf.push_back(nn::reshape(t, nn::slice_cols(t, y, 0, 1), {1}));
    out.residual.push_back(nn::slice_cols(t, y, 1, 1 + kRoiResidualDim));
  }
  return out;
}

ForwardResult forward_frame(const PointCloud& cloud, const nn::Parameters& params,
                            const PipelineConfig& config, ForwardTrace* trace) {
  ForwardResult r;
  const FrameContext ctx = prepare_frame(cloud, config);
  nn::Tape t;
  const StageOne s1 = stage_one(t, params, config, ctx, trace);
  if (!s1.head_out.valid()) return r;
  r.pre_nms = detect::decode_cells(t.value(s1.head_out), ctx.head_cells, config.bev_grid, config.head);
  r.stage1 = postprocess(r.pre_nms, config.head, config.head.max_detections);
  if (!config.toggles.geospa_roi || r.stage1.empty()) {
    r.detections = r.stage1;
    return r;
  }
  const std::size_t k = std::min(config.roi.top_k, r.stage1.size());
  std::vector<BoundingBox3D> proposals;
  for (std::size_t i = 0; i < k; ++i) proposals.push_back(r.stage1[i].box);
  nn::Tape u;
  const auto ro = roi_stage(u, params, config, ctx, proposals);
  std::vector<detect::Detection> refined;
  for (std::size_t i = 0; i < k; ++i) {
    const auto& res = u.value(ro.residual[i]);
    detect::Detection d;
    d.box = apply_residual(proposals[i], res.values());
    d.score = std::sqrt(r.stage1[i].score * nn::sigmoid(u.value(ro.conf[i]).item()));
    refined.push_back(d);
  }
  for (std::size_t i : detect::nms(refined, config.head.nms_iou)) r.detections.push_back(refined[i]);
  return r;
}

namespace {

double binary_entropy(double y) {
  double h = 0;
  if (y > 0) h -= y * std::log(y);
  if (y < 1) h -= (1 - y) * std::log(1 - y);
  return h;
}

std::vector<BoundingBox3D> jittered(std::span<const BoundingBox3D> gts, std::size_t per_gt,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<BoundingBox3D> out;
  for (const auto& g : gts)
    for (std::size_t k = 0; k < per_gt; ++k) {
      BoundingBox3D b = g;
      const double c = std::cos(g.yaw), s = std::sin(g.yaw);
      const double lx = 0.2 * g.l * u(rng), ly = 0.2 * g.w * u(rng);
      b.cx += c * lx - s * ly;
      b.cy += s * lx + c * ly;
      b.cz += 0.1 * g.h * u(rng);
      b.l *= std::exp(0.15 * u(rng));
      b.w *= std::exp(0.15 * u(rng));
      b.h *= std::exp(0.15 * u(rng));
      b.yaw = wrap_angle(b.yaw + 0.3 * u(rng));
      out.push_back(b);
    }
  return out;
}

std::vector<BoundingBox3D> stage_one_proposals(const nn::Tape& t, const StageOne& s1, const FrameContext& ctx,
                                               const PipelineConfig& config) {
  const auto pre = detect::decode_cells(t.value(s1.head_out), ctx.head_cells, config.bev_grid, config.head);
  std::vector<BoundingBox3D> out;
  for (const auto& d : postprocess(pre, config.head, config.roi.top_k)) out.push_back(d.box);
  return out;
}

// Stage-one loss plus, when proposals are given, the refinement loss.
FrameLoss loss_on_tape(nn::Tape& t, const StageOne& s1, const FrameContext& ctx, const Frame& frame,
                       const nn::Parameters& params, const PipelineConfig& config,
                       std::span<const BoundingBox3D> proposals, bool want_grads) {
  FrameLoss out;
  std::vector<Vec3> positions;
  for (const auto& p : ctx.subset_points) positions.push_back(p.position());
  const auto targets = detect::assign_targets(positions, ctx.subset_cells, ctx.head_cells,
                                              frame.gt_boxes, config.bev_grid, config.head);
  out.positives = targets.num_positive;
  const auto hl = detect::head_loss(t, s1.head_out, targets, config.head);
  nn::Var total = hl.total;
  out.head = t.value(hl.total).item();

  if (config.toggles.geospa_roi && !proposals.empty()) {
    const auto ro = roi_stage(t, params, config, ctx, proposals);
    const std::vector<double> one{1.0};
    nn::Var conf_sum = t.constant(nn::Tensor::scalar(0.0));
    nn::Var reg_sum = t.constant(nn::Tensor::scalar(0.0));
    std::size_t matched = 0;
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      double best_bev = 0.0, best_iou = 0.0;
      int best = -1;
      for (std::size_t g = 0; g < frame.gt_boxes.size(); ++g) {
        const double b = detect::bev_iou(proposals[i], frame.gt_boxes[g]);
        if (b > best_bev) best_bev = b, best = static_cast<int>(g);
      }
      if (best >= 0) best_iou = detect::iou3d(proposals[i], frame.gt_boxes[best]);
      const double y = std::clamp((best_iou - config.roi.iou_lo) / (config.roi.iou_hi - config.roi.iou_lo), 0.0, 1.0);
      // Cross-entropy minus the label entropy: a soft label can be fitted to zero loss.
      const nn::Var ce = nn::bce_with_logits(t, ro.conf[i], std::vector<double>{y}, one);
      conf_sum = nn::add(t, conf_sum, nn::add(t, ce, t.constant(nn::Tensor::scalar(-binary_entropy(y)))));
      if (best >= 0 && best_bev >= config.roi.match_iou) {
        const auto enc = encode_residual(proposals[i], frame.gt_boxes[best]);
        const nn::Tensor target({1, kRoiResidualDim}, std::vector<double>(enc.begin(), enc.end()));
        reg_sum = nn::add(t, reg_sum, nn::smooth_l1(t, ro.residual[i], target, one, config.head.reg_beta));
        ++matched;
      }
    }
    const nn::Var roi = nn::add(t, nn::scale(t, conf_sum, 1.0 / static_cast<double>(proposals.size())),
                                nn::scale(t, reg_sum, 1.0 / static_cast<double>(std::max<std::size_t>(1, matched))));
    out.roi = t.value(roi).item();
    total = nn::add(t, total, nn::scale(t, roi, config.roi.weight));
  }
  out.total = t.value(total).item();
  if (want_grads && std::isfinite(out.total)) {
    t.backward(total);
    out.grads = t.gradients();
  }
  return out;
}

}  // namespace

FrameLoss frame_loss(const Frame& frame, const nn::Parameters& params, const PipelineConfig& config,
                     std::uint64_t jitter_seed, bool want_grads) {
  const FrameContext ctx = prepare_frame(frame.cloud, config);
  nn::Tape t;
  const StageOne s1 = stage_one(t, params, config, ctx);
  if (!s1.head_out.valid()) return {};
  std::vector<BoundingBox3D> proposals;
  if (config.toggles.geospa_roi) {
    proposals = stage_one_proposals(t, s1, ctx, config);
    for (const auto& b : jittered(frame.gt_boxes, config.roi.jitter_per_gt, jitter_seed)) proposals.push_back(b);
  }
  return loss_on_tape(t, s1, ctx, frame, params, config, proposals, want_grads);
}

std::vector<BoundingBox3D> training_proposals(const Frame& frame, const nn::Parameters& params,
                                              const PipelineConfig& config, std::uint64_t jitter_seed) {
  if (!config.toggles.geospa_roi) return {};
  const FrameContext ctx = prepare_frame(frame.cloud, config);
  nn::Tape t;
  const StageOne s1 = stage_one(t, params, config, ctx);
  if (!s1.head_out.valid()) return {};
  auto proposals = stage_one_proposals(t, s1, ctx, config);
  for (const auto& b : jittered(frame.gt_boxes, config.roi.jitter_per_gt, jitter_seed)) proposals.push_back(b);
  return proposals;
}

FrameLoss frame_loss_with(const Frame& frame, const nn::Parameters& params, const PipelineConfig& config,
                          std::span<const BoundingBox3D> proposals, bool want_grads) {
  const FrameContext ctx = prepare_frame(frame.cloud, config);
  nn::Tape t;
  const StageOne s1 = stage_one(t, params, config, ctx);
  if (!s1.head_out.valid()) return {};
  return loss_on_tape(t, s1, ctx, frame, params, config, proposals, want_grads);
}

}  // namespace mufasa::pipeline
