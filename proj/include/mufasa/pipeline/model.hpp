#pragma once

#include <cstdint>
#include <vector>

#include "mufasa/pipeline/config.hpp"

namespace mufasa::pipeline {

/// Every parameter of every module, including those a toggle currently bypasses.
nn::Parameters init_model(const PipelineConfig& config, std::uint64_t seed);

/// Parameter-independent work for one cloud: sampling, descriptors, pillar assignment.
struct FrameContext {
  PointCloud cloud;
  std::vector<std::size_t> subset;                   ///< FPS indices into cloud
  std::vector<RadarPoint> subset_points;
  std::vector<lalonde::LalondeDescriptor> subset_descs;
  std::vector<lalonde::LalondeDescriptor> cloud_descs;
  projection::PillarAssignment bev_assign;
  projection::PillarAssignment cyl_assign;
  projection::PillarBatch bev_pillars;
  projection::PillarBatch cyl_pillars;
  std::vector<std::int64_t> subset_cells;            ///< final BEV cell of each subset point
  std::vector<std::int64_t> head_cells;              ///< occupied cells, ascending
};

FrameContext prepare_frame(const PointCloud& cloud, const PipelineConfig& config);

/// Intermediate values of one forward pass, for inspection and bypass tests.
struct ForwardTrace {
  nn::Tensor bev_pseudo, cyl_pseudo;
  nn::Tensor bev_cnn, cyl_cnn;
  nn::Tensor bev_attended, cyl_attended;
  nn::Tensor f_sp;
  nn::Tensor fused_points;
  nn::Tensor bev_final;
  nn::Tensor head_out;
};

struct StageOne {
  nn::Var head_out;  ///< [K, 13] at ctx.head_cells; invalid when no cell is occupied
};

StageOne stage_one(nn::Tape& t, const nn::Parameters& params, const PipelineConfig& config,
                   const FrameContext& ctx, ForwardTrace* trace = nullptr);

/// Score filter, NMS and the detection cap on decoded stage-one boxes.
std::vector<detect::Detection> postprocess(std::vector<detect::Detection> dets,
                                           const detect::HeadConfig& head, std::size_t cap);

// ---- second stage ----

inline constexpr std::size_t kRoiResidualDim = 7;  // dx, dy, dz, log l, log w, log h, dyaw

struct RoiOutputs {
  std::vector<nn::Var> conf;      ///< [1] logit per proposal
  std::vector<nn::Var> residual;  ///< [1, 7] per proposal
};

RoiOutputs roi_stage(nn::Tape& t, const nn::Parameters& params, const PipelineConfig& config,
                     const FrameContext& ctx, std::span<const BoundingBox3D> proposals);

/// Residual of `target` relative to `proposal` in the proposal frame.
std::array<double, kRoiResidualDim> encode_residual(const BoundingBox3D& proposal,
                                                    const BoundingBox3D& target);
BoundingBox3D apply_residual(const BoundingBox3D& proposal, std::span<const double> residual);

struct ForwardResult {
  std::vector<detect::Detection> pre_nms;  ///< every decoded stage-one box
  std::vector<detect::Detection> stage1;   ///< after stage-one post-processing
  std::vector<detect::Detection> detections;
};

/// Deterministic given (cloud, params, config).
ForwardResult forward_frame(const PointCloud& cloud, const nn::Parameters& params,
                            const PipelineConfig& config, ForwardTrace* trace = nullptr);

// ---- losses ----

struct FrameLoss {
  double total = 0.0;
  double head = 0.0;
  double roi = 0.0;
  std::size_t positives = 0;
  nn::Parameters grads;  ///< filled only when requested
};

/// Loss of one labelled frame. ROI proposals are the top stage-one detections (treated as
/// constants) plus jittered copies of the ground truth driven by `jitter_seed`.
FrameLoss frame_loss(const Frame& frame, const nn::Parameters& params, const PipelineConfig& config,
                     std::uint64_t jitter_seed, bool want_grads);

/// The proposal set frame_loss would use at these parameters.
std::vector<BoundingBox3D> training_proposals(const Frame& frame, const nn::Parameters& params,
                                              const PipelineConfig& config, std::uint64_t jitter_seed);

/// frame_loss with an explicit proposal set, so the loss is a smooth function of the parameters.
FrameLoss frame_loss_with(const Frame& frame, const nn::Parameters& params, const PipelineConfig& config,
                          std::span<const BoundingBox3D> proposals, bool want_grads);

}  // namespace mufasa::pipeline
