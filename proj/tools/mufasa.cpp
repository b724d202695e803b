// Command-line front end: generate | features | train | eval | infer | ablate | plot | config
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mufasa/lalonde.hpp"
#include "mufasa/nn/checkpoint.hpp"
#include "mufasa/pipeline/plot.hpp"
#include "mufasa/pipeline/train.hpp"
#include "mufasa/sampling.hpp"

namespace fs = std::filesystem;
using namespace mufasa;
using namespace mufasa::pipeline;

namespace {

struct ConfigArgs {
  std::string file;
  std::string preset = "desk";
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.file, "TOML config file");
  cmd->add_option("--preset", a.preset, "desk or full")->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--set", a.sets, "key=value override (repeatable)");
}

PipelineConfig resolve(const ConfigArgs& a) {
  PipelineConfig c = a.preset == "full" ? PipelineConfig::full() : PipelineConfig::desk();
  if (!a.file.empty()) c = load_config(a.file, c);
  for (const auto& s : a.sets) apply_override(c, s);
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Frame> frames_from(const std::string& dir, const PipelineConfig& c, bool eval) {
  if (!dir.empty()) return read_dataset(dir);
  return eval ? evaluation_frames(c) : training_frames(c);
}

void print_eval(const detect::EvalResult& r) {
  for (const auto& reg : r.regions) std::printf("mAP %-16s %.4f\n", reg.region.c_str(), reg.map);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radar 3-D object detection: synthetic data, training, evaluation and ablations"};
  app.require_subcommand(1);

  // generate
  ConfigArgs gen_cfg;
  std::string gen_out;
  std::size_t gen_frames = 0;
  std::uint64_t gen_seed = 0;
  bool gen_binary = false;
  auto* gen = app.add_subcommand("generate", "Write synthetic frames (cloud + labels)");
  add_config_options(gen, gen_cfg);
  gen->add_option("-o,--out", gen_out, "Output directory")->required();
  gen->add_option("-n,--frames", gen_frames, "Frame count (default data.train_frames)");
  gen->add_option("--seed", gen_seed, "First scene seed (default data.seed)");
  gen->add_flag("--binary", gen_binary, "Binary clouds instead of CSV");

  // features
  ConfigArgs feat_cfg;
  std::string feat_cloud, feat_out, feat_hist;
  std::size_t feat_bins = 10;
  auto* feat = app.add_subcommand("features", "Per-point Lalonde descriptors of one cloud");
  add_config_options(feat, feat_cfg);
  feat->add_option("--cloud", feat_cloud, "Cloud file (.csv or .bin)")->required()->check(CLI::ExistingFile);
  feat->add_option("-o,--out", feat_out, "Descriptor CSV")->required();
  feat->add_option("--hist", feat_hist, "Histogram CSV");
  feat->add_option("--bins", feat_bins, "Histogram bins")->check(CLI::PositiveNumber);

  // train
  ConfigArgs train_cfg;
  std::string train_data, train_eval_data, train_run;
  auto* tr = app.add_subcommand("train", "Train and evaluate; writes a run directory");
  add_config_options(tr, train_cfg);
  tr->add_option("--data", train_data, "Training frames directory (default: synthetic)");
  tr->add_option("--eval-data", train_eval_data, "Evaluation frames directory (default: synthetic held-out)");
  tr->add_option("--run-dir", train_run, "Output directory (default run_dir)");

  // eval
  ConfigArgs eval_cfg;
  std::string eval_ckpt, eval_data, eval_out;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_config_options(ev, eval_cfg);
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", eval_data, "Frames directory (default: synthetic held-out)");
  ev->add_option("-o,--out", eval_out, "Report CSV")->required();

  // infer
  ConfigArgs inf_cfg;
  std::string inf_ckpt, inf_cloud, inf_out;
  auto* inf = app.add_subcommand("infer", "Detect objects in one cloud");
  add_config_options(inf, inf_cfg);
  inf->add_option("--checkpoint", inf_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  inf->add_option("--cloud", inf_cloud, "Cloud file")->required()->check(CLI::ExistingFile);
  inf->add_option("-o,--out", inf_out, "Detections file (label format + score)")->required();

  // ablate
  ConfigArgs abl_cfg;
  std::string abl_out;
  std::vector<std::uint64_t> abl_seeds{1, 2, 3};
  auto* abl = app.add_subcommand("ablate", "Module, GeoSPA-stage and DEMVA-branch grids");
  add_config_options(abl, abl_cfg);
  abl->add_option("-o,--out", abl_out, "Output directory")->required();
  abl->add_option("--seeds", abl_seeds, "Training seeds")->delimiter(',');

  // plot
  std::string plot_losses, plot_ablation, plot_out;
  auto* plot = app.add_subcommand("plot", "SVG from losses.csv or ablation.csv");
  plot->add_option("--losses", plot_losses, "losses.csv of a run")->check(CLI::ExistingFile);
  plot->add_option("--ablation", plot_ablation, "ablation.csv")->check(CLI::ExistingFile);
  plot->add_option("-o,--out", plot_out, "SVG file")->required();

  // config
  ConfigArgs show_cfg;
  bool show_keys = false;
  auto* show = app.add_subcommand("config", "Print the resolved config as TOML");
  add_config_options(show, show_cfg);
  show->add_flag("--keys", show_keys, "List keys only");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto c = resolve(gen_cfg);
      const std::size_t n = gen_frames ? gen_frames : c.data.train_frames;
      const std::uint64_t seed = gen->count("--seed") ? gen_seed : c.data.seed;
      const auto frames = synthetic_dataset(c.data.scene, n, seed);
      if (gen_binary) {
        fs::create_directories(gen_out);
        for (std::size_t i = 0; i < frames.size(); ++i) {
          const fs::path stem = fs::path(gen_out) / frames[i].cloud.frame_id;
          write_cloud(frames[i].cloud, stem.string() + ".bin", CloudFormat::Binary);
          write_labels(frames[i].gt_boxes, stem.string() + ".txt");
        }
      } else {
        write_dataset(frames, gen_out);
      }
      std::printf("wrote %zu frames to %s\n", frames.size(), gen_out.c_str());
    } else if (*feat) {
      const auto c = resolve(feat_cfg);
      const auto cloud = read_cloud(feat_cloud, format_from_path(feat_cloud));
      const auto index = sampling::SpatialIndex::build(cloud, c.descriptors.neighborhood.radius);
      std::vector<std::size_t> all(cloud.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      const auto descs = lalonde::descriptors_for(cloud, index, all, c.descriptors);
      std::ostringstream os;
      os << "index,l_scatter,l_linear,l_surface\n";
      char buf[96];
      for (std::size_t i = 0; i < descs.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", i, descs[i].l_scatter, descs[i].l_linear,
                      descs[i].l_surface);
        os << buf;
      }
      write_text(feat_out, os.str());
      if (!feat_hist.empty()) {
        const auto h = lalonde::histogram(descs, feat_bins);
        std::ostringstream hs;
        hs << "bin,scatter,linear,surface\n";
        for (std::size_t b = 0; b < h.bin_count; ++b) {
          std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g\n", b, h.empty ? 0.0 : h.scatter[b],
                        h.empty ? 0.0 : h.linear[b], h.empty ? 0.0 : h.surface[b]);
          hs << buf;
        }
        write_text(feat_hist, hs.str());
      }
      std::printf("%zu descriptors\n", descs.size());
    } else if (*tr) {
      auto c = resolve(train_cfg);
      if (!train_run.empty()) c.run_dir = train_run;
      const auto train_set = frames_from(train_data, c, false);
      const auto eval_set = frames_from(train_eval_data, c, true);
      std::printf("config %s, %zu training frames\n", config_hash(c).c_str(), train_set.size());
      auto result = train(train_set, c, [](std::size_t e, double loss) {
        std::printf("epoch %zu loss %.6f\n", e + 1, loss);
        std::fflush(stdout);
      }, c.run_dir);
      result.report.eval = evaluate_model(eval_set, result.params, c);
      write_run(result.report, c, c.run_dir);
      std::printf("initial loss %.6f final loss %.6f (%.1f s)\n", result.report.initial_loss,
                  result.report.final_loss, result.report.wall_seconds);
      print_eval(result.report.eval);
    } else if (*ev) {
      const auto c = resolve(eval_cfg);
      const auto params = nn::load_checkpoint(eval_ckpt);
      const auto r = evaluate_model(frames_from(eval_data, c, true), params, c);
      detect::write_report_csv(r, eval_out);
      print_eval(r);
    } else if (*inf) {
      const auto c = resolve(inf_cfg);
      const auto params = nn::load_checkpoint(inf_ckpt);
      const auto cloud = read_cloud(inf_cloud, format_from_path(inf_cloud));
      const auto dets = forward_frame(cloud, params, c).detections;
      if (fs::path(inf_out).has_parent_path()) fs::create_directories(fs::path(inf_out).parent_path());
      detect::write_detections(dets, inf_out);
      std::printf("%zu detections\n", dets.size());
    } else if (*abl) {
      const auto c = resolve(abl_cfg);
      const auto train_set = training_frames(c);
      const auto eval_set = evaluation_frames(c);
      const auto rep = ablation_suite(c, train_set, eval_set, abl_seeds, [](const AblationRun& r) {
        std::printf("%s seed %llu mAP all %.4f corridor %.4f\n", r.toggles.code().c_str(),
                    static_cast<unsigned long long>(r.seed), r.map_all, r.map_corridor);
        std::fflush(stdout);
      });
      write_text(fs::path(abl_out) / "ablation.csv", ablation_csv(rep));
      write_text(fs::path(abl_out) / "ablation_runs.csv", ablation_runs_csv(rep));
      write_text(fs::path(abl_out) / "config.toml", to_toml(c));
      std::printf("%s", ablation_csv(rep).c_str());
    } else if (*plot) {
      if (plot_losses.empty() == plot_ablation.empty())
        throw std::invalid_argument("plot: give exactly one of --losses or --ablation");
      if (!plot_losses.empty()) {
        const auto cols = read_csv_columns(read_text(plot_losses));
        if (cols.size() < 2) throw std::runtime_error("plot: losses.csv needs epoch,loss columns");
        Series s{"loss", {}};
        for (std::size_t i = 0; i < cols[0].second.size(); ++i)
          s.points.emplace_back(std::stod(cols[0].second[i]), std::stod(cols[1].second[i]));
        write_text(plot_out, line_chart_svg({s}, "Training loss", "epoch", "loss", true));
      } else {
        const auto cols = read_csv_columns(read_text(plot_ablation));
        if (cols.size() < 8) throw std::runtime_error("plot: unexpected ablation.csv layout");
        std::vector<std::string> labels;
        Series all{"all_area", {}}, corridor{"driving_corridor", {}};
        for (std::size_t i = 0; i < cols[0].second.size(); ++i) {
          labels.push_back(cols[0].second[i] + ":" + cols[1].second[i]);
          all.points.emplace_back(i, std::stod(cols[6].second[i]));
          corridor.points.emplace_back(i, std::stod(cols[7].second[i]));
        }
        write_text(plot_out, bar_chart_svg(labels, {all, corridor}, "Ablation mAP (median over seeds)"));
      }
      std::printf("wrote %s\n", plot_out.c_str());
    } else if (*show) {
      const auto c = resolve(show_cfg);
      if (show_keys) {
        for (const auto& k : config_keys()) std::printf("%s\n", k.c_str());
      } else {
        std::printf("%s", to_toml(c).c_str());
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
