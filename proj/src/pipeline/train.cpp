#include "mufasa/pipeline/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "mufasa/nn/checkpoint.hpp"

namespace mufasa::pipeline {

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` threads; the lowest-index exception wins.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < n; i += step) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < threads; ++k) pool.emplace_back(run, k, threads);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t h = a * 0x9E3779B97F4A7C15ull ^ (b + 0x632BE59BD9B4E019ull);
  h ^= h >> 29;
  h *= 0xBF58476D1CE4E5B9ull;
  h ^= c + (h >> 31);
  h *= 0x94D049BB133111EBull;
  return h ^ (h >> 32);
}

bool augment_active(const AugmentSpec& s) {
  return s.rotation_range > 0 || s.flip_y > 0 || s.scale_range.lo != 1.0 || s.scale_range.hi != 1.0;
}

}  // namespace

std::vector<Frame> synthetic_dataset(const SceneSpec& spec, std::size_t count, std::uint64_t seed) {
  std::vector<Frame> frames;
  for (std::size_t i = 0; i < count; ++i) {
    Frame f = generate_scene(spec, seed + i);
    char id[32];
    std::snprintf(id, sizeof id, "frame_%04zu", i);
    f.cloud.frame_id = id;
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<Frame> training_frames(const PipelineConfig& config) {
  return synthetic_dataset(config.data.scene, config.data.train_frames, config.data.seed);
}

std::vector<Frame> evaluation_frames(const PipelineConfig& config) {
  return synthetic_dataset(config.data.scene, config.data.eval_frames, config.data.seed + 1000000);
}

void write_dataset(std::span<const Frame> frames, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "frame_%04zu", i);
    write_cloud(frames[i].cloud, dir / (std::string(stem) + ".csv"), CloudFormat::Csv);
    write_labels(frames[i].gt_boxes, dir / (std::string(stem) + ".txt"));
  }
}

std::vector<Frame> read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("dataset: no directory " + dir.string());
  std::vector<std::filesystem::path> clouds;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (ext == ".csv" || ext == ".bin") clouds.push_back(e.path());
  }
  std::sort(clouds.begin(), clouds.end());
  std::vector<Frame> frames;
  for (const auto& p : clouds) {
    Frame f;
    f.cloud = read_cloud(p, format_from_path(p));
    f.cloud.frame_id = p.stem().string();
    auto labels = p;
    labels.replace_extension(".txt");
    if (std::filesystem::exists(labels)) f.gt_boxes = read_labels(labels);
    frames.push_back(std::move(f));
  }
  if (frames.empty()) throw std::runtime_error("dataset: no clouds in " + dir.string());
  return frames;
}

double dataset_loss(std::span<const Frame> dataset, const nn::Parameters& params,
                    const PipelineConfig& config) {
  std::vector<double> losses(dataset.size());
  parallel_for(dataset.size(), config.train.threads, [&](std::size_t i) {
    losses[i] = frame_loss(dataset[i], params, config, mix(config.train.seed, i, 0xE7A1), false).total;
  });
  double s = 0;
  for (double l : losses) s += l;
  return dataset.empty() ? 0.0 : s / static_cast<double>(dataset.size());
}

TrainResult train(std::span<const Frame> dataset, const PipelineConfig& config, nn::Parameters params,
                  const EpochCallback& on_epoch, const std::filesystem::path& checkpoint_dir) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const auto start = std::chrono::steady_clock::now();
  TrainResult out;
  out.report.config_hash = config_hash(config);
  out.report.initial_loss = dataset_loss(dataset, params, config);
  if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);

  nn::AdamState adam{config.train.adam, 0, {}, {}};
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t B = config.train.batch_size;
  const bool aug = augment_active(config.train.augment);

  for (std::size_t epoch = 0; epoch < config.train.epochs; ++epoch) {
    std::mt19937_64 rng(mix(config.train.seed, epoch, 0x5EED));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0;
    for (std::size_t b0 = 0, batch = 0; b0 < order.size(); b0 += B, ++batch) {
      const std::size_t n = std::min(B, order.size() - b0);
      std::vector<FrameLoss> res(n);
      parallel_for(n, config.train.threads, [&](std::size_t j) {
        const std::size_t idx = order[b0 + j];
        const std::uint64_t s = mix(config.train.seed, epoch, idx);
        if (aug) {
          res[j] = frame_loss(augment(dataset[idx], config.train.augment, s), params, config, s, true);
        } else {
          res[j] = frame_loss(dataset[idx], params, config, s, true);
        }
      });
      nn::Parameters grads;
      double batch_loss = 0;
      for (std::size_t j = 0; j < n; ++j) {
        batch_loss += res[j].total;
        for (auto& [name, g] : res[j].grads) {
          auto it = grads.find(name);
          if (it == grads.end()) {
            grads.emplace(name, std::move(g));
          } else {
            for (std::size_t k = 0; k < g.size(); ++k) it->second[k] += g[k];
          }
        }
      }
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: non-finite loss in epoch " + std::to_string(epoch + 1) +
                                 ", batch " + std::to_string(batch));
      for (auto& [name, g] : grads)
        for (double& v : g.values()) v /= static_cast<double>(n);
      nn::adam_step(adam, params, grads);
      epoch_sum += batch_loss;
    }
    const double mean = epoch_sum / static_cast<double>(dataset.size());
    out.report.epoch_losses.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
    if (!checkpoint_dir.empty() && config.train.checkpoint_every > 0 &&
        (epoch + 1) % config.train.checkpoint_every == 0) {
      char name[40];
      std::snprintf(name, sizeof name, "epoch_%04zu.ckpt", epoch + 1);
      nn::save_checkpoint(params, checkpoint_dir / name);
    }
  }
  out.report.final_loss = dataset_loss(dataset, params, config);
  if (!checkpoint_dir.empty()) nn::save_checkpoint(params, checkpoint_dir / "model.ckpt");
  out.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.params = std::move(params);
  return out;
}

TrainResult train(std::span<const Frame> dataset, const PipelineConfig& config,
                  const EpochCallback& on_epoch, const std::filesystem::path& checkpoint_dir) {
  return train(dataset, config, init_model(config, config.train.seed), on_epoch, checkpoint_dir);
}

std::vector<detect::FrameResult> run_inference(std::span<const Frame> frames, const nn::Parameters& params,
                                               const PipelineConfig& config) {
  std::vector<detect::FrameResult> out(frames.size());
  parallel_for(frames.size(), config.train.threads, [&](std::size_t i) {
    out[i].dets = forward_frame(frames[i].cloud, params, config).detections;
    out[i].gts = frames[i].gt_boxes;
  });
  return out;
}

detect::EvalResult evaluate_model(std::span<const Frame> frames, const nn::Parameters& params,
                                  const PipelineConfig& config) {
  const auto results = run_inference(frames, params, config);
  const std::vector<detect::RegionSpec> regions{detect::RegionSpec::all_area(), config.eval.corridor};
  return detect::evaluate(results, regions, config.eval.thresholds, config.eval.bev_only);
}

void write_run(const RunReport& report, const PipelineConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "losses.csv");
    char buf[64];
    out << "epoch,loss\n";
    std::snprintf(buf, sizeof buf, "0,%.9g\n", report.initial_loss);
    out << buf;
    for (std::size_t e = 0; e < report.epoch_losses.size(); ++e) {
      std::snprintf(buf, sizeof buf, "%zu,%.9g\n", e + 1, report.epoch_losses[e]);
      out << buf;
    }
  }
  if (!report.eval.regions.empty()) detect::write_report_csv(report.eval, dir / "report.csv");
  {
    std::ofstream out(dir / "config.toml");
    out << to_toml(config);
  }
  std::ofstream out(dir / "summary.txt");
  char buf[128];
  out << "config_hash " << report.config_hash << '\n';
  std::snprintf(buf, sizeof buf, "initial_loss %.9g\nfinal_loss %.9g\nepochs %zu\nwall_seconds %.3f\n",
                report.initial_loss, report.final_loss, report.epoch_losses.size(), report.wall_seconds);
  out << buf;
  for (const auto& r : report.eval.regions) {
    std::snprintf(buf, sizeof buf, "map_%s %.6f\n", r.region.c_str(), r.map);
    out << buf;
  }
}

std::vector<AblationRow> ablation_rows() {
  auto row = [](const char* table, const char* label, const char* code) {
    return AblationRow{table, label, Toggles::from_code(code)};
  };
  return {row("modules", "baseline", "0000"),       row("modules", "D", "0011"),
          row("modules", "G", "1100"),              row("modules", "G+D", "1111"),
          row("geospa_stage", "none", "0011"),      row("geospa_stage", "stage1", "1011"),
          row("geospa_stage", "stage2", "0111"),    row("geospa_stage", "both", "1111"),
          row("demva_branch", "none", "1100"),      row("demva_branch", "bev", "1110"),
          row("demva_branch", "cyl", "1101"),       row("demva_branch", "both", "1111")};
}

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::pair<double, double> AblationReport::median(const Toggles& toggles) const {
  std::vector<double> a, c;
  for (const auto& r : runs)
    if (r.toggles == toggles) a.push_back(r.map_all), c.push_back(r.map_corridor);
  return {median_of(a), median_of(c)};
}

AblationReport ablation_suite(const PipelineConfig& base, std::span<const Frame> train_set,
                              std::span<const Frame> eval_set, std::span<const std::uint64_t> seeds,
                              const AblationCallback& on_run) {
  AblationReport report;
  report.seeds.assign(seeds.begin(), seeds.end());
  std::vector<std::string> done;
  for (const auto& row : ablation_rows()) {
    const std::string code = row.toggles.code();
    if (std::find(done.begin(), done.end(), code) != done.end()) continue;
    done.push_back(code);
    for (std::uint64_t seed : seeds) {
      PipelineConfig cfg = base;
      cfg.toggles = row.toggles;
      cfg.train.seed = seed;
      const auto tr = train(train_set, cfg);
      const auto ev = evaluate_model(eval_set, tr.params, cfg);
      AblationRun run{row.toggles, seed, ev.regions[0].map, ev.regions[1].map, tr.report.final_loss,
                      config_hash(cfg)};
      if (on_run) on_run(run);
      report.runs.push_back(run);
    }
  }
  return report;
}

std::string ablation_csv(const AblationReport& report) {
  std::ostringstream os;
  os << "table,row,geospa_stage1,geospa_roi,demva_bev,demva_cyl,map_all_area,map_driving_corridor\n";
  char buf[96];
  for (const auto& row : ablation_rows()) {
    const auto [a, c] = report.median(row.toggles);
    const auto& t = row.toggles;
    std::snprintf(buf, sizeof buf, ",%d,%d,%d,%d,%.6f,%.6f\n", t.geospa_stage1, t.geospa_roi,
                  t.demva_bev, t.demva_cyl, a, c);
    os << row.table << ',' << row.label << buf;
  }
  return os.str();
}

std::string ablation_runs_csv(const AblationReport& report) {
  std::ostringstream os;
  os << "toggles,seed,map_all_area,map_driving_corridor,final_loss,config_hash\n";
  char buf[128];
  for (const auto& r : report.runs) {
    std::snprintf(buf, sizeof buf, ",%llu,%.6f,%.6f,%.9g,", static_cast<unsigned long long>(r.seed),
                  r.map_all, r.map_corridor, r.final_loss);
    os << r.toggles.code() << buf << r.config_hash << '\n';
  }
  return os.str();
}

}  // namespace mufasa::pipeline
