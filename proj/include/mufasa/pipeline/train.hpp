#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mufasa/pipeline/model.hpp"

namespace mufasa::pipeline {

/// Frame i comes from generate_scene(spec, seed + i).
std::vector<Frame> synthetic_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t seed);
/// Training frames use data.seed, evaluation frames a disjoint seed range after them.
std::vector<Frame> training_frames(const PipelineConfig& config);
std::vector<Frame> evaluation_frames(const PipelineConfig& config);

/// Frames stored as <stem>.csv clouds with <stem>.txt labels, sorted by stem.
void write_dataset(std::span<const Frame> frames, const std::filesystem::path& dir);
std::vector<Frame> read_dataset(const std::filesystem::path& dir);

struct RunReport {
  std::string config_hash;
  double initial_loss = 0.0;              ///< mean loss over the dataset before any update
  std::vector<double> epoch_losses;       ///< mean training loss of each epoch
  double final_loss = 0.0;                ///< mean loss over the dataset after training
  detect::EvalResult eval;                ///< filled by the caller when evaluation runs
  double wall_seconds = 0.0;
};

struct TrainResult {
  nn::Parameters params;
  RunReport report;
};

/// Called after every epoch with (epoch index, mean loss).
using EpochCallback = std::function<void(std::size_t, double)>;

/// Seeded shuffle per epoch, optional augmentation, Adam over every parameter the active
/// modules touch. Frames of a batch may run on train.threads threads; gradients are summed
/// in batch order. Throws std::runtime_error naming epoch and batch on a non-finite loss.
/// Writes checkpoints under `checkpoint_dir` when it is non-empty.
TrainResult train(std::span<const Frame> dataset, const PipelineConfig& config,
                  nn::Parameters params, const EpochCallback& on_epoch = {},
                  const std::filesystem::path& checkpoint_dir = {});
/// Initializes from train.seed and trains.
TrainResult train(std::span<const Frame> dataset, const PipelineConfig& config,
                  const EpochCallback& on_epoch = {}, const std::filesystem::path& checkpoint_dir = {});

/// Mean frame loss without augmentation or parameter updates.
double dataset_loss(std::span<const Frame> dataset, const nn::Parameters& params,
                    const PipelineConfig& config);

std::vector<detect::FrameResult> run_inference(std::span<const Frame> frames, const nn::Parameters& params,
                                               const PipelineConfig& config);
/// all_area and the configured corridor.
detect::EvalResult evaluate_model(std::span<const Frame> frames, const nn::Parameters& params,
                                  const PipelineConfig& config);

/// losses.csv (epoch,loss with epoch 0 the initial loss), report.csv, summary.txt, config.toml.
void write_run(const RunReport& report, const PipelineConfig& config, const std::filesystem::path& dir);

// ---- ablation ----

struct AblationRow {
  std::string table;  ///< modules | geospa_stage | demva_branch
  std::string label;
  Toggles toggles;
};

/// The module grid, the GeoSPA stage grid and the DEMVA branch grid.
std::vector<AblationRow> ablation_rows();

struct AblationRun {
  Toggles toggles;
  std::uint64_t seed = 0;
  double map_all = 0.0;
  double map_corridor = 0.0;
  double final_loss = 0.0;
  std::string config_hash;
};

struct AblationReport {
  std::vector<AblationRun> runs;  ///< one per (distinct toggle set, seed)
  std::vector<std::uint64_t> seeds;
  /// Median all-area and corridor mAP over seeds for a toggle set.
  std::pair<double, double> median(const Toggles& toggles) const;
};

using AblationCallback = std::function<void(const AblationRun&)>;

AblationReport ablation_suite(const PipelineConfig& base, std::span<const Frame> train_set,
                              std::span<const Frame> eval_set, std::span<const std::uint64_t> seeds,
                              const AblationCallback& on_run = {});

/// Columns table,row,geospa_stage1,geospa_roi,demva_bev,demva_cyl,map_all_area,map_driving_corridor
/// with medians over seeds, one line per table row.
std::string ablation_csv(const AblationReport& report);
/// Columns toggles,seed,map_all_area,map_driving_corridor,final_loss,config_hash.
std::string ablation_runs_csv(const AblationReport& report);

}  // namespace mufasa::pipeline
