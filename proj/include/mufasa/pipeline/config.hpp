#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mufasa/demva.hpp"
#include "mufasa/detect.hpp"
#include "mufasa/geospa.hpp"
#include "mufasa/lalonde.hpp"
#include "mufasa/nn/adam.hpp"
#include "mufasa/projection.hpp"
#include "mufasa/scene.hpp"

namespace mufasa::pipeline {

struct Toggles {
  bool geospa_stage1 = true;
  bool geospa_roi = true;
  bool demva_bev = true;
  bool demva_cyl = true;

  /// "s1 roi bev cyl" as four 0/1 digits, e.g. "1011".
  std::string code() const;
  static Toggles from_code(const std::string& code);
  friend bool operator==(const Toggles&, const Toggles&) = default;
};

struct ModelConfig {
  std::size_t fps_points = 512;
  std::size_t channels = 16;       ///< pillar encoder output and view CNN width
  std::size_t pillar_hidden = 32;
  std::size_t cnn_depth = 2;
  std::size_t max_points_per_pillar = projection::kDefaultMaxPointsPerPillar;
  bool use_rcs = true;
  bool use_doppler = true;
};

struct RoiConfig {
  std::size_t top_k = 16;
  std::size_t hidden = 32;
  std::size_t d_pw = 32;
  std::size_t d_lalonde = 16;
  double margin = 0.5;       ///< proposals are grown by this on every side before pooling
  double match_iou = 0.3;    ///< BEV IoU for a proposal to get a regression target
  double iou_lo = 0.25;      ///< soft confidence label rises linearly from here
  double iou_hi = 0.75;      ///< ... to 1 here
  std::size_t jitter_per_gt = 1;
  double weight = 1.0;
};

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 4;
  std::size_t threads = 1;
  std::uint64_t seed = 1;
  nn::AdamConfig adam{};
  AugmentSpec augment{};
  std::size_t checkpoint_every = 0;  ///< epochs; 0 writes only the final checkpoint
};

struct DataConfig {
  SceneSpec scene{};
  std::size_t train_frames = 20;
  std::size_t eval_frames = 20;
  std::uint64_t seed = 1000;  ///< frame i of the training set uses seed + i
};

struct EvalConfig {
  bool bev_only = false;
  detect::ClassThresholds thresholds = detect::kDefaultThresholds;
  detect::RegionSpec corridor = detect::RegionSpec::driving_corridor();
};

struct PipelineConfig {
  Toggles toggles;
  projection::GridSpec bev_grid;
  projection::GridSpec cyl_grid;
  ModelConfig model;
  geospa::GeoSpaConfig geospa;
  lalonde::DescriptorOptions descriptors;
  demva::DemvaConfig demva;
  demva::FusionConfig fusion;
  detect::HeadConfig head;
  RoiConfig roi;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  std::string run_dir = "runs/default";

  /// Desk-scale defaults: 32 m BEV square at 1 m, 96 azimuth bins, small widths.
  static PipelineConfig desk();
  /// Larger-scale schedule: lr 0.03, weight decay 0.01, batch 8, 80 epochs.
  static PipelineConfig full();

  demva::DemvaConfig demva_effective() const;
  geospa::GeoSpaConfig roi_geospa() const;
  /// Throws std::invalid_argument naming the first inconsistent key.
  void validate() const;
};

/// Every key accepted by config files and `--set`, in canonical order.
std::vector<std::string> config_keys();
std::string get_value(const PipelineConfig& config, const std::string& key);
/// Throws std::invalid_argument on unknown keys or unparsable values.
void set_value(PipelineConfig& config, const std::string& key, const std::string& value);
/// "key=value"
void apply_override(PipelineConfig& config, const std::string& assignment);

/// Canonical TOML text of every key; parse_config(to_toml(c)) == c.
std::string to_toml(const PipelineConfig& config);
PipelineConfig parse_config(const std::string& toml_text, PipelineConfig base = PipelineConfig::desk());
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = PipelineConfig::desk());

/// FNV-1a over the canonical text, excluding run_dir and train.threads (they do not change
/// results). 16 hex digits.
std::string config_hash(const PipelineConfig& config);

}  // namespace mufasa::pipeline
