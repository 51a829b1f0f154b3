#pragma once

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "bevscan/net/model.hpp"
#include "bevscan/scene/dataset.hpp"
#include "bevscan/train/trainer.hpp"

namespace bevscan {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Everything one run needs, read from a plain `key = value` file. Lines
/// starting with '#' and blank lines are ignored; unknown keys are errors.
struct RunConfig {
  std::size_t grid_nx = 200, grid_nz = 200, grid_ny = 8;
  std::size_t image_h = 64, image_w = 112, cameras = 6;
  double camera_height = 1.5, camera_pitch = 0.0;
  std::size_t bev_channels = 32, ebc_inner = 32, ebc_state = 8, head_width = 32;
  std::size_t trunk_mid = 48, trunk_deep = 64;
  bool scan_forward = true, scan_forward_surround = true, scan_backward_surround = true;
  bool cioe_pv = true, cioe_bev = true;
  Modality modality = Modality::Camera;
  std::size_t min_vehicles = 4, max_vehicles = 12;
  std::size_t train_size = 2000, val_size = 200;
  double lr = 5e-3, weight_decay = 1e-2;  // batch-1 desk runs; 1e-2 diverges
  std::size_t steps = 2000, accumulation = 1, batch = 1;
  bool learned_weights = true;
  std::size_t checkpoint_every = 0;
  std::size_t export_sample = 0;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  static RunConfig parse(std::istream& in, const std::string& source = "<config>");
  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path);
    return parse(in, path);
  }

  /// BEVSCAN_SEED, when set, replaces the configured seed.
  void apply_environment() {
    if (const char* s = std::getenv("BEVSCAN_SEED")) {
      std::uint64_t v = 0;
      const std::string str(s);
      const auto [p, ec] = std::from_chars(str.data(), str.data() + str.size(), v);
      if (ec != std::errc() || p != str.data() + str.size()) throw ConfigError("BEVSCAN_SEED is not an integer: " + str);
      seed = v;
    }
  }

  /// Resolved key = value text that parses back to this config.
  std::string to_text() const;
  void write(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write config " + path);
    os << to_text();
  }

  BevGrid grid() const {
    BevGrid g;
    g.nx = grid_nx;
    g.nz = grid_nz;
    g.ny = grid_ny;
    return g;
  }

  ModelConfig model() const {
    auto c = ModelConfig::desk();
    c.grid = grid();
    c.image_h = image_h;
    c.image_w = image_w;
    c.point_channels = modality == Modality::Camera ? 0 : kRasterChannels;
    c.bev_channels = bev_channels;
    c.ebc.inner = ebc_inner;
    c.ebc.state = ebc_state;
    c.ebc.branches.clear();
    if (scan_forward) c.ebc.branches.push_back(ScanKind::Forward);
    if (scan_forward_surround) c.ebc.branches.push_back(ScanKind::ForwardSurround);
    if (scan_backward_surround) c.ebc.branches.push_back(ScanKind::BackwardSurround);
    c.trunk.mid = trunk_mid;
    c.trunk.deep = trunk_deep;
    c.head_width = head_width;
    c.cioe_pv = cioe_pv;
    c.cioe_bev = cioe_bev;
    return c;
  }

  DatasetSpec dataset(Split split) const {
    DatasetSpec d;
    d.split = split;
    d.size = split == Split::Train ? train_size : val_size;
    d.seed = seed;
    d.grid = grid();
    d.scenes.min_vehicles = min_vehicles;
    d.scenes.max_vehicles = max_vehicles;
    d.render.modality = modality;
    d.render.rig.cameras = cameras;
    d.render.rig.image_h = image_h;
    d.render.rig.image_w = image_w;
    d.render.rig.height = camera_height;
    d.render.rig.pitch = camera_pitch;
    return d;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.steps = steps;
    t.lr_max = lr;
    t.weight_decay = weight_decay;
    t.accumulation = accumulation;
    t.batch = batch;
    t.learned_weights = learned_weights;
    t.checkpoint_every = checkpoint_every;
    return t;
  }

 private:
  struct Field {
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
  };
  static const std::map<std::string, Field>& fields();
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename V>
V parse_number(const std::string& s) {
  V v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw std::invalid_argument("not a number: '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw std::invalid_argument("not a boolean: '" + s + "'");
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename V>
auto number_field(V RunConfig::*m) {
  return std::pair{std::function<void(RunConfig&, const std::string&)>(
                       [m](RunConfig& c, const std::string& s) { c.*m = parse_number<V>(s); }),
                   std::function<std::string(const RunConfig&)>([m](const RunConfig& c) {
                     if constexpr (std::is_floating_point_v<V>) return format_double(c.*m);
                     else return std::to_string(c.*m);
                   })};
}

inline auto bool_field(bool RunConfig::*m) {
  return std::pair{std::function<void(RunConfig&, const std::string&)>(
                       [m](RunConfig& c, const std::string& s) { c.*m = parse_bool(s); }),
                   std::function<std::string(const RunConfig&)>(
                       [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); })};
}

}  // namespace detail

inline const std::map<std::string, RunConfig::Field>& RunConfig::fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    auto num = [&](const char* k, auto m) {
      auto [s, g] = detail::number_field(m);
      t[k] = {s, g};
    };
    auto flag = [&](const char* k, bool RunConfig::*m) {
      auto [s, g] = detail::bool_field(m);
      t[k] = {s, g};
    };
    num("grid.nx", &RunConfig::grid_nx);
    num("grid.nz", &RunConfig::grid_nz);
    num("grid.ny", &RunConfig::grid_ny);
    num("camera.count", &RunConfig::cameras);
    num("camera.image_h", &RunConfig::image_h);
    num("camera.image_w", &RunConfig::image_w);
    num("camera.height", &RunConfig::camera_height);
    num("camera.pitch", &RunConfig::camera_pitch);
    num("model.bev_channels", &RunConfig::bev_channels);
    num("model.ebc_inner", &RunConfig::ebc_inner);
    num("model.ebc_state", &RunConfig::ebc_state);
    num("model.head_width", &RunConfig::head_width);
    num("model.trunk_mid", &RunConfig::trunk_mid);
    num("model.trunk_deep", &RunConfig::trunk_deep);
    flag("scan.forward", &RunConfig::scan_forward);
    flag("scan.forward_surround", &RunConfig::scan_forward_surround);
    flag("scan.backward_surround", &RunConfig::scan_backward_surround);
    flag("cioe.pv", &RunConfig::cioe_pv);
    flag("cioe.bev", &RunConfig::cioe_bev);
    t["modality"] = {[](RunConfig& c, const std::string& s) { c.modality = parse_modality(s); },
                     [](const RunConfig& c) { return std::string(to_string(c.modality)); }};
    num("data.min_vehicles", &RunConfig::min_vehicles);
    num("data.max_vehicles", &RunConfig::max_vehicles);
    num("data.train_size", &RunConfig::train_size);
    num("data.val_size", &RunConfig::val_size);
    num("train.lr", &RunConfig::lr);
    num("train.weight_decay", &RunConfig::weight_decay);
    num("train.steps", &RunConfig::steps);
    num("train.accumulation", &RunConfig::accumulation);
    num("train.batch", &RunConfig::batch);
    flag("train.learned_weights", &RunConfig::learned_weights);
    num("train.checkpoint_every", &RunConfig::checkpoint_every);
    num("export.sample", &RunConfig::export_sample);
    num("seed", &RunConfig::seed);
    t["output_dir"] = {[](RunConfig& c, const std::string& s) { c.output_dir = s; },
                       [](const RunConfig& c) { return c.output_dir; }};
    return t;
  }();
  return table;
}

inline RunConfig RunConfig::parse(std::istream& in, const std::string& source) {
  RunConfig c;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const auto body = detail::trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto where = source + ":" + std::to_string(no) + ": ";
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + body + "'");
    const auto key = detail::trim(body.substr(0, eq));
    const auto value = detail::trim(body.substr(eq + 1));
    const auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (value.empty()) throw ConfigError(where + "empty value for '" + key + "'");
    try {
      it->second.set(c, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  return c;
}

inline std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& [key, f] : fields()) s += key + " = " + f.get(*this) + "\n";
  return s;
}

}  // namespace bevscan
