#include "mufasa/pipeline/config.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace mufasa::pipeline {

std::string Toggles::code() const {
  std::string s;
  for (bool b : {geospa_stage1, geospa_roi, demva_bev, demva_cyl}) s += b ? '1' : '0';
  return s;
}

Toggles Toggles::from_code(const std::string& code) {
  if (code.size() != 4 || code.find_first_not_of("01") != std::string::npos)
    throw std::invalid_argument("toggle code must be four 0/1 digits, got '" + code + "'");
  return {code[0] == '1', code[1] == '1', code[2] == '1', code[3] == '1'};
}

PipelineConfig PipelineConfig::desk() {
  PipelineConfig c;
  c.bev_grid = {projection::View::Bev, 0.0, 32.0, -16.0, 16.0, 1.0, 1.0};
  c.cyl_grid = {projection::View::Cylinder, -std::numbers::pi, std::numbers::pi, -3.0, 2.0,
                2.0 * std::numbers::pi / 96.0, 0.5};
  c.geospa.hidden = 32;
  c.geospa.d_pw = 32;
  c.geospa.d_lalonde = 16;
  c.demva.slots = 16;
  c.fusion.hidden = 64;
  c.fusion.d_fused = 32;
  return c;
}

PipelineConfig PipelineConfig::full() {
  PipelineConfig c = desk();
  c.train.adam.lr = 0.03;
  c.train.adam.weight_decay = 0.01;
  c.train.batch_size = 8;
  c.train.epochs = 80;
  return c;
}

demva::DemvaConfig PipelineConfig::demva_effective() const {
  demva::DemvaConfig d = demva;
  d.bev = toggles.demva_bev;
  d.cyl = toggles.demva_cyl;
  return d;
}

geospa::GeoSpaConfig PipelineConfig::roi_geospa() const {
  geospa::GeoSpaConfig g = geospa;
  g.hidden = roi.hidden;
  g.d_pw = roi.d_pw;
  g.d_lalonde = roi.d_lalonde;
  g.prefix = "roi.geospa";
  return g;
}

void PipelineConfig::validate() const {
  auto need = [](bool ok, const char* key) {
    if (!ok) throw std::invalid_argument(std::string("config: invalid value for ") + key);
  };
  need(bev_grid.valid() && bev_grid.view == projection::View::Bev, "grid.bev");
  need(cyl_grid.valid() && cyl_grid.view == projection::View::Cylinder, "grid.cyl");
  need(model.fps_points > 0, "model.fps_points");
  need(model.channels > 0, "model.channels");
  need(model.pillar_hidden > 0, "model.pillar_hidden");
  need(model.max_points_per_pillar > 0, "model.max_points_per_pillar");
  need(geospa.hidden > 0 && geospa.d_pw > 0 && geospa.d_lalonde > 0, "geospa");
  need(descriptors.neighborhood.valid(), "geospa.neighborhood");
  need(demva.slots > 0, "demva.slots");
  need(fusion.hidden > 0 && fusion.d_fused > 0, "fusion");
  need(head.nms_iou >= 0 && head.nms_iou <= 1, "head.nms_iou");
  need(head.max_detections > 0, "head.max_detections");
  need(roi.top_k > 0 && roi.hidden > 0 && roi.d_pw > 0 && roi.d_lalonde > 0, "roi");
  need(roi.iou_hi > roi.iou_lo, "roi.iou_hi");
  need(train.batch_size > 0, "train.batch_size");
  need(train.threads > 0, "train.threads");
  need(train.adam.lr >= 0 && std::isfinite(train.adam.lr), "train.lr");
  need(train.augment.valid(), "train.augment");
  need(data.train_frames > 0, "data.train_frames");
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("config: " + key + " expects a number, got '" + v + "'");
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw std::invalid_argument("config: " + key + " expects a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: " + key + " expects true/false, got '" + v + "'");
}

std::string unquote(std::string v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
    v = v.substr(1, v.size() - 2);
  return v;
}

struct Entry {
  std::string key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
  bool quoted = false;
};

template <class F>
Entry dbl(std::string key, F field) {
  return {key, [field](const PipelineConfig& c) { return fmt_double(field(const_cast<PipelineConfig&>(c))); },
          [field, key](PipelineConfig& c, const std::string& v) { field(c) = parse_double(key, v); }};
}

template <class F>
Entry uint(std::string key, F field) {
  return {key, [field](const PipelineConfig& c) { return std::to_string(field(const_cast<PipelineConfig&>(c))); },
          [field, key](PipelineConfig& c, const std::string& v) {
            field(c) = static_cast<std::remove_reference_t<decltype(field(c))>>(parse_uint(key, v));
          }};
}

template <class F>
Entry sint(std::string key, F field) {
  return {key, [field](const PipelineConfig& c) { return std::to_string(field(const_cast<PipelineConfig&>(c))); },
          [field, key](PipelineConfig& c, const std::string& v) {
            try {
              std::size_t used = 0;
              const int x = std::stoi(v, &used);
              if (used == v.size()) {
                field(c) = x;
                return;
              }
            } catch (const std::exception&) {
            }
            throw std::invalid_argument("config: " + key + " expects an integer, got '" + v + "'");
          }};
}

template <class F>
Entry flag(std::string key, F field) {
  return {key, [field](const PipelineConfig& c) { return std::string(field(const_cast<PipelineConfig&>(c)) ? "true" : "false"); },
          [field, key](PipelineConfig& c, const std::string& v) { field(c) = parse_bool(key, v); }};
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    e.push_back(flag("toggles.geospa_stage1", [](PipelineConfig& c) -> bool& { return c.toggles.geospa_stage1; }));
    e.push_back(flag("toggles.geospa_roi", [](PipelineConfig& c) -> bool& { return c.toggles.geospa_roi; }));
    e.push_back(flag("toggles.demva_bev", [](PipelineConfig& c) -> bool& { return c.toggles.demva_bev; }));
    e.push_back(flag("toggles.demva_cyl", [](PipelineConfig& c) -> bool& { return c.toggles.demva_cyl; }));

    for (const char* view : {"bev", "cyl"}) {
      const std::string v = view;
      auto grid = [v](PipelineConfig& c) -> projection::GridSpec& { return v == "bev" ? c.bev_grid : c.cyl_grid; };
      e.push_back(dbl("grid." + v + ".min0", [grid](PipelineConfig& c) -> double& { return grid(c).min0; }));
      e.push_back(dbl("grid." + v + ".max0", [grid](PipelineConfig& c) -> double& { return grid(c).max0; }));
      e.push_back(dbl("grid." + v + ".min1", [grid](PipelineConfig& c) -> double& { return grid(c).min1; }));
      e.push_back(dbl("grid." + v + ".max1", [grid](PipelineConfig& c) -> double& { return grid(c).max1; }));
      e.push_back(dbl("grid." + v + ".cell0", [grid](PipelineConfig& c) -> double& { return grid(c).cell0; }));
      e.push_back(dbl("grid." + v + ".cell1", [grid](PipelineConfig& c) -> double& { return grid(c).cell1; }));
    }

    e.push_back(uint("model.fps_points", [](PipelineConfig& c) -> std::size_t& { return c.model.fps_points; }));
    e.push_back(uint("model.channels", [](PipelineConfig& c) -> std::size_t& { return c.model.channels; }));
    e.push_back(uint("model.pillar_hidden", [](PipelineConfig& c) -> std::size_t& { return c.model.pillar_hidden; }));
    e.push_back(uint("model.cnn_depth", [](PipelineConfig& c) -> std::size_t& { return c.model.cnn_depth; }));
    e.push_back(uint("model.max_points_per_pillar", [](PipelineConfig& c) -> std::size_t& { return c.model.max_points_per_pillar; }));
    e.push_back(flag("model.use_rcs", [](PipelineConfig& c) -> bool& { return c.model.use_rcs; }));
    e.push_back(flag("model.use_doppler", [](PipelineConfig& c) -> bool& { return c.model.use_doppler; }));

    e.push_back(uint("geospa.hidden", [](PipelineConfig& c) -> std::size_t& { return c.geospa.hidden; }));
    e.push_back(uint("geospa.d_pw", [](PipelineConfig& c) -> std::size_t& { return c.geospa.d_pw; }));
    e.push_back(uint("geospa.d_lalonde", [](PipelineConfig& c) -> std::size_t& { return c.geospa.d_lalonde; }));
    e.push_back(dbl("geospa.radius", [](PipelineConfig& c) -> double& { return c.descriptors.neighborhood.radius; }));
    e.push_back(uint("geospa.min_neighbors", [](PipelineConfig& c) -> std::size_t& { return c.descriptors.neighborhood.min_neighbors; }));
    e.push_back(flag("geospa.normalize", [](PipelineConfig& c) -> bool& { return c.descriptors.normalize; }));

    e.push_back(uint("demva.slots", [](PipelineConfig& c) -> std::size_t& { return c.demva.slots; }));
    e.push_back({"demva.fuse",
                 [](const PipelineConfig& c) { return std::string(c.demva.mode == demva::FuseMode::Add ? "add" : "concat"); },
                 [](PipelineConfig& c, const std::string& v) {
                   if (v == "add") c.demva.mode = demva::FuseMode::Add;
                   else if (v == "concat") c.demva.mode = demva::FuseMode::ConcatProject;
                   else throw std::invalid_argument("config: demva.fuse expects add|concat, got '" + v + "'");
                 },
                 true});
    e.push_back(uint("fusion.hidden", [](PipelineConfig& c) -> std::size_t& { return c.fusion.hidden; }));
    e.push_back(uint("fusion.d_fused", [](PipelineConfig& c) -> std::size_t& { return c.fusion.d_fused; }));

    for (ObjectClass cls : kAllClasses) {
      const int i = static_cast<int>(cls);
      std::string name(class_name(cls));
      for (auto& ch : name) ch = static_cast<char>(std::tolower(ch));
      for (int d = 0; d < 3; ++d) {
        static const char* dim[] = {"l", "w", "h"};
        e.push_back(dbl("head.anchor." + name + "." + dim[d],
                        [i, d](PipelineConfig& c) -> double& { return c.head.anchors.dims[i][d]; }));
      }
    }
    e.push_back(dbl("head.ground_z", [](PipelineConfig& c) -> double& { return c.head.anchors.ground_z; }));
    e.push_back(dbl("head.focal_alpha", [](PipelineConfig& c) -> double& { return c.head.focal_alpha; }));
    e.push_back(dbl("head.focal_gamma", [](PipelineConfig& c) -> double& { return c.head.focal_gamma; }));
    e.push_back(dbl("head.reg_beta", [](PipelineConfig& c) -> double& { return c.head.reg_beta; }));
    e.push_back(dbl("head.positive_margin", [](PipelineConfig& c) -> double& { return c.head.positive_margin; }));
    e.push_back(dbl("head.score_threshold", [](PipelineConfig& c) -> double& { return c.head.score_threshold; }));
    e.push_back(dbl("head.nms_iou", [](PipelineConfig& c) -> double& { return c.head.nms_iou; }));
    e.push_back(uint("head.max_detections", [](PipelineConfig& c) -> std::size_t& { return c.head.max_detections; }));

    e.push_back(uint("roi.top_k", [](PipelineConfig& c) -> std::size_t& { return c.roi.top_k; }));
    e.push_back(uint("roi.hidden", [](PipelineConfig& c) -> std::size_t& { return c.roi.hidden; }));
    e.push_back(uint("roi.d_pw", [](PipelineConfig& c) -> std::size_t& { return c.roi.d_pw; }));
    e.push_back(uint("roi.d_lalonde", [](PipelineConfig& c) -> std::size_t& { return c.roi.d_lalonde; }));
    e.push_back(dbl("roi.margin", [](PipelineConfig& c) -> double& { return c.roi.margin; }));
    e.push_back(dbl("roi.match_iou", [](PipelineConfig& c) -> double& { return c.roi.match_iou; }));
    e.push_back(dbl("roi.iou_lo", [](PipelineConfig& c) -> double& { return c.roi.iou_lo; }));
    e.push_back(dbl("roi.iou_hi", [](PipelineConfig& c) -> double& { return c.roi.iou_hi; }));
    e.push_back(uint("roi.jitter_per_gt", [](PipelineConfig& c) -> std::size_t& { return c.roi.jitter_per_gt; }));
    e.push_back(dbl("roi.weight", [](PipelineConfig& c) -> double& { return c.roi.weight; }));

    e.push_back(uint("train.epochs", [](PipelineConfig& c) -> std::size_t& { return c.train.epochs; }));
    e.push_back(uint("train.batch_size", [](PipelineConfig& c) -> std::size_t& { return c.train.batch_size; }));
    e.push_back(uint("train.threads", [](PipelineConfig& c) -> std::size_t& { return c.train.threads; }));
    e.push_back(uint("train.seed", [](PipelineConfig& c) -> std::uint64_t& { return c.train.seed; }));
    e.push_back(dbl("train.lr", [](PipelineConfig& c) -> double& { return c.train.adam.lr; }));
    e.push_back(dbl("train.beta1", [](PipelineConfig& c) -> double& { return c.train.adam.beta1; }));
    e.push_back(dbl("train.beta2", [](PipelineConfig& c) -> double& { return c.train.adam.beta2; }));
    e.push_back(dbl("train.eps", [](PipelineConfig& c) -> double& { return c.train.adam.eps; }));
    e.push_back(dbl("train.weight_decay", [](PipelineConfig& c) -> double& { return c.train.adam.weight_decay; }));
    e.push_back(flag("train.decoupled_decay", [](PipelineConfig& c) -> bool& { return c.train.adam.decoupled; }));
    e.push_back(dbl("train.augment.rotation", [](PipelineConfig& c) -> double& { return c.train.augment.rotation_range; }));
    e.push_back(dbl("train.augment.flip_y", [](PipelineConfig& c) -> double& { return c.train.augment.flip_y; }));
    e.push_back(dbl("train.augment.scale_lo", [](PipelineConfig& c) -> double& { return c.train.augment.scale_range.lo; }));
    e.push_back(dbl("train.augment.scale_hi", [](PipelineConfig& c) -> double& { return c.train.augment.scale_range.hi; }));
    e.push_back(uint("train.checkpoint_every", [](PipelineConfig& c) -> std::size_t& { return c.train.checkpoint_every; }));

    e.push_back(uint("data.train_frames", [](PipelineConfig& c) -> std::size_t& { return c.data.train_frames; }));
    e.push_back(uint("data.eval_frames", [](PipelineConfig& c) -> std::size_t& { return c.data.eval_frames; }));
    e.push_back(uint("data.seed", [](PipelineConfig& c) -> std::uint64_t& { return c.data.seed; }));
    for (ObjectClass cls : kAllClasses) {
      const int i = static_cast<int>(cls);
      std::string name(class_name(cls));
      for (auto& ch : name) ch = static_cast<char>(std::tolower(ch));
      e.push_back(sint("data.scene.count." + name, [i](PipelineConfig& c) -> int& { return c.data.scene.counts[i]; }));
    }
    e.push_back(dbl("data.scene.noise_sigma", [](PipelineConfig& c) -> double& { return c.data.scene.noise_sigma; }));
    e.push_back(sint("data.scene.clutter_points", [](PipelineConfig& c) -> int& { return c.data.scene.clutter_points; }));
    e.push_back(dbl("data.scene.x_min", [](PipelineConfig& c) -> double& { return c.data.scene.x_range.lo; }));
    e.push_back(dbl("data.scene.x_max", [](PipelineConfig& c) -> double& { return c.data.scene.x_range.hi; }));
    e.push_back(dbl("data.scene.y_min", [](PipelineConfig& c) -> double& { return c.data.scene.y_range.lo; }));
    e.push_back(dbl("data.scene.y_max", [](PipelineConfig& c) -> double& { return c.data.scene.y_range.hi; }));

    e.push_back(flag("eval.bev_only", [](PipelineConfig& c) -> bool& { return c.eval.bev_only; }));
    for (ObjectClass cls : kAllClasses) {
      const int i = static_cast<int>(cls);
      std::string name(class_name(cls));
      for (auto& ch : name) ch = static_cast<char>(std::tolower(ch));
      e.push_back(dbl("eval.iou." + name, [i](PipelineConfig& c) -> double& { return c.eval.thresholds[i]; }));
    }
    e.push_back(dbl("eval.corridor.x_min", [](PipelineConfig& c) -> double& { return c.eval.corridor.x_min; }));
    e.push_back(dbl("eval.corridor.x_max", [](PipelineConfig& c) -> double& { return c.eval.corridor.x_max; }));
    e.push_back(dbl("eval.corridor.y_min", [](PipelineConfig& c) -> double& { return c.eval.corridor.y_min; }));
    e.push_back(dbl("eval.corridor.y_max", [](PipelineConfig& c) -> double& { return c.eval.corridor.y_max; }));

    e.push_back({"run_dir", [](const PipelineConfig& c) { return c.run_dir; },
                 [](PipelineConfig& c, const std::string& v) { c.run_dir = v; }, true});
    return e;
  }();
  return entries;
}

const Entry& entry(const std::string& key) {
  static const std::map<std::string, const Entry*> index = [] {
    std::map<std::string, const Entry*> m;
    for (const auto& e : registry()) m.emplace(e.key, &e);
    return m;
  }();
  const auto it = index.find(key);
  if (it == index.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
  return *it->second;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : registry()) keys.push_back(e.key);
  return keys;
}

std::string get_value(const PipelineConfig& config, const std::string& key) {
  return entry(key).get(config);
}

void set_value(PipelineConfig& config, const std::string& key, const std::string& value) {
  entry(key).set(config, unquote(value));
}

void apply_override(PipelineConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("config: override must look like key=value, got '" + assignment + "'");
  set_value(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

std::string to_toml(const PipelineConfig& config) {
  // Flat dotted keys are valid TOML and keep one line per setting.
  std::ostringstream os;
  for (const auto& e : registry()) {
    const std::string v = e.get(config);
    os << e.key << " = " << (e.quoted ? "\"" + v + "\"" : v) << '\n';
  }
  return os.str();
}

PipelineConfig parse_config(const std::string& toml_text, PipelineConfig base) {
  std::istringstream in(toml_text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& err) {
    throw std::invalid_argument(std::string("config: ") + err.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const std::string key = item.fullname();
    if (item.inputs.size() != 1)
      throw std::invalid_argument("config: " + key + " expects a single value");
    set_value(base, key, item.inputs.front());
  }
  base.validate();
  return base;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string config_hash(const PipelineConfig& config) {
  PipelineConfig c = config;
  c.run_dir.clear();
  c.train.threads = 1;
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_toml(c)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mufasa::pipeline
