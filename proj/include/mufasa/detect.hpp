#pragma once

#include <array>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mufasa/cloud.hpp"
#include "mufasa/nn/mlp.hpp"
#include "mufasa/projection.hpp"

namespace mufasa::detect {

struct Detection {
  BoundingBox3D box;
  double score = 0.0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

// ---- geometry ----

using Polygon = std::vector<std::array<double, 2>>;

/// Sutherland-Hodgman clip of a convex polygon against a convex CCW clip polygon.
Polygon clip_convex(const Polygon& subject, const Polygon& clip);
double polygon_area(const Polygon& poly);

double bev_intersection(const BoundingBox3D& a, const BoundingBox3D& b);
/// Rotated 3-D IoU; `bev_only` treats the vertical overlap as complete.
double iou3d(const BoundingBox3D& a, const BoundingBox3D& b, bool bev_only = false);
double bev_iou(const BoundingBox3D& a, const BoundingBox3D& b);

/// Greedy suppression by rotated BEV IoU, class-agnostic. Returns kept input indices in
/// descending score order (ties: lower index first). A box is dropped when IoU > thresh.
std::vector<std::size_t> nms(std::span<const Detection> dets, double iou_thresh);

// ---- evaluation ----

struct RegionSpec {
  std::string name = "all_area";
  double x_min = -std::numeric_limits<double>::infinity();
  double x_max = std::numeric_limits<double>::infinity();
  double y_min = -std::numeric_limits<double>::infinity();
  double y_max = std::numeric_limits<double>::infinity();

  /// Membership by box centre, bounds inclusive.
  bool contains(const BoundingBox3D& b) const;
  static RegionSpec all_area() { return {}; }
  static RegionSpec driving_corridor() { return {"driving_corridor", 0.0, 25.0, -4.0, 4.0}; }
};

using ClassThresholds = std::array<double, kNumClasses>;
inline constexpr ClassThresholds kDefaultThresholds{0.5, 0.25, 0.25, 0.5};

struct FrameResult {
  std::vector<Detection> dets;
  std::vector<BoundingBox3D> gts;
};

struct PrPoint {
  double recall;
  double precision;
};

struct ApResult {
  double ap = std::numeric_limits<double>::quiet_NaN();
  std::size_t num_gt = 0;
  std::size_t num_det = 0;
  bool defined() const { return num_gt > 0; }
};

/// Greedy per-frame matching in descending score order; PR points at each distinct score.
std::vector<PrPoint> pr_curve(std::span<const FrameResult> frames, ObjectClass cls,
                              const RegionSpec& region, double iou_thresh, bool bev_only = false);
/// Mean over r = 1/40 .. 40/40 of the best precision at recall >= r.
double interpolated_ap40(std::span<const PrPoint> curve);
ApResult average_precision(std::span<const FrameResult> frames, ObjectClass cls,
                           const RegionSpec& region, double iou_thresh, bool bev_only = false);

struct RegionResult {
  std::string region;
  std::array<ApResult, kNumClasses> per_class{};
  /// Mean over classes with ground truth in the region; NaN if none.
  double map = std::numeric_limits<double>::quiet_NaN();
};

struct EvalResult {
  std::vector<RegionResult> regions;
  const RegionResult& region(const std::string& name) const;
};

EvalResult evaluate(std::span<const FrameResult> frames, std::span<const RegionSpec> regions,
                    const ClassThresholds& thresholds = kDefaultThresholds, bool bev_only = false);

/// Columns `region,class,ap,num_gt,num_det`; undefined APs are written as `nan`.
void write_report_csv(const EvalResult& result, const std::filesystem::path& path);
std::string report_csv(const EvalResult& result);

/// Label lines with a trailing score column.
void write_detections(std::span<const Detection> dets, const std::filesystem::path& path);
std::vector<Detection> read_detections(const std::filesystem::path& path);

// ---- head ----

inline constexpr std::size_t kRegDim = 8;  // dx, dy, dz, log l, log w, log h, sin yaw, cos yaw
inline constexpr std::size_t kHeadChannels = kNumClasses + kRegDim + 1;
inline constexpr std::size_t kRegOffset = kNumClasses;
inline constexpr std::size_t kObjOffset = kNumClasses + kRegDim;

struct AnchorSet {
  std::array<std::array<double, 3>, kNumClasses> dims{{{4.0, 1.8, 1.6},
                                                       {0.6, 0.6, 1.7},
                                                       {1.8, 0.6, 1.7},
                                                       {8.0, 2.6, 3.0}}};
  double ground_z = -1.5;  ///< anchor bottoms rest here

  BoundingBox3D anchor(ObjectClass c, double x, double y) const;
};

struct HeadConfig {
  AnchorSet anchors;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double reg_beta = 1.0 / 9.0;
  double positive_margin = 0.25;  ///< gt boxes are grown by this when labelling cells
  double score_threshold = 0.05;
  double nms_iou = 0.1;
  std::size_t max_detections = 50;
  std::string prefix = "head";
};

void init_head(nn::Parameters& params, const HeadConfig& config, std::size_t in_channels,
               nn::Rng& rng);
/// 1x1 convolution over the whole map -> [13, H, W].
nn::Var head_forward(nn::Tape& t, const nn::Parameters& params, const HeadConfig& config,
                     nn::Var feat);
/// The same 1x1 head evaluated only at `cells` -> [K, 13].
nn::Var head_at_cells(nn::Tape& t, const nn::Parameters& params, const HeadConfig& config,
                      nn::Var feat, std::span<const std::int64_t> cells);

/// Yaw folded into (-pi/2, pi/2]; boxes are symmetric under a half turn.
double canonical_yaw(double yaw);

std::array<double, kRegDim> encode_box(const BoundingBox3D& box, double x, double y,
                                       const AnchorSet& anchors);
BoundingBox3D decode_box(std::span<const double> reg, double x, double y, ObjectClass cls,
                         const AnchorSet& anchors);

/// Scored boxes for each row of head output [K, 13] at the given BEV cells.
std::vector<Detection> decode_cells(const nn::Tensor& head_out, std::span<const std::int64_t> cells,
                                    const projection::GridSpec& grid, const HeadConfig& config);

struct HeadTargets {
  std::vector<double> objectness;        ///< per cell, 0 or 1
  std::vector<int> label;                ///< class of the matched box, 0 for negatives
  std::vector<double> positive;          ///< 1 for positive cells
  nn::Tensor reg;                        ///< [K, 8]
  std::vector<int> matched_box;          ///< index into gts or -1
  std::size_t num_positive = 0;
};

/// A cell is positive when one of its points lies in a gt box grown by the margin; the box
/// holding most of the cell's points wins.
HeadTargets assign_targets(std::span<const Vec3> points, std::span<const std::int64_t> point_cells,
                           std::span<const std::int64_t> cells, std::span<const BoundingBox3D> gts,
                           const projection::GridSpec& grid, const HeadConfig& config);

struct HeadLoss {
  nn::Var total;
  nn::Var objectness;
  nn::Var classification;
  nn::Var regression;
};

/// Focal objectness over all cells plus cross-entropy and smooth-L1 on positives, each divided
/// by max(1, positives).
HeadLoss head_loss(nn::Tape& t, nn::Var head_out, const HeadTargets& targets,
                   const HeadConfig& config);

}  // namespace mufasa::detect
