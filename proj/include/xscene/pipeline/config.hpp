#pragma once

// Pipeline configuration: one JSON document holding every knob of every stage.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xscene/baselines/baselines.hpp"
#include "xscene/control/series.hpp"
#include "xscene/eval/dataset.hpp"
#include "xscene/eval/metrics.hpp"
#include "xscene/mapgen/scene_map.hpp"
#include "xscene/model/architecture.hpp"
#include "xscene/model/dual_autoencoder.hpp"
#include "xscene/sim/layout.hpp"
#include "xscene/sim/simulation.hpp"

namespace xscene::pipeline {

struct PipelineConfig {
  std::string scale = "desk";
  sim::SimConfig sim;
  sim::SceneLayout layout_a = sim::gate_scene_a();
  sim::SceneLayout layout_b = sim::gate_scene_b();
  mapgen::MapConfig map;
  int day_minutes = 720;  // 8:00 to 20:00
  std::vector<control::CorrelationPattern> patterns;
  std::vector<double> alphas = {1.0, 0.72, 0.31, 0.0};
  eval::DatasetSpec dataset;  // rho and alpha are set per grid cell
  model::ArchConfig arch;
  model::TrainConfig train;
  model::TimeDistanceConfig time;
  eval::VarianceConfig variance;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<std::string> methods = {"ours", "e2e", "e2e_dt", "linear"};
  std::size_t render_count = 2;     // test maps rendered per prediction set
  std::size_t gradcheck_seeds = 20;
  std::size_t jobs = 0;  // worker threads for grid cells; 0 = all cores. Never affects results.

  PipelineConfig() {
    for (double rho : {1.0, 0.84, 0.5}) {
      control::CorrelationPattern p;
      p.target_rho = rho;
      patterns.push_back(p);
    }
    train.batch_size = 2;
    train.epochs = 40;
  }

  void validate() const {
    require(scale == "desk" || scale == "paper" || scale == "custom", ErrorKind::config,
            "scale must be desk, paper or custom, got '" + scale + "'");
    sim.validate();
    layout_a.validate();
    layout_b.validate();
    map.validate();
    arch.validate();
    time.validate();
    require(arch.width == static_cast<std::size_t>(map.width), ErrorKind::config,
            "arch.width (" + std::to_string(arch.width) + ") must equal map.width (" + std::to_string(map.width) + ")");
    require(std::abs(sim.dt * map.frame_rate - 1.0) < 1e-9, ErrorKind::config, "sim.dt must equal 1 / map.frame_rate");
    require(day_minutes > 0, ErrorKind::config, "day_minutes must be positive");
    require(!patterns.empty(), ErrorKind::config, "at least one correlation pattern is required");
    for (std::size_t i = 0; i < patterns.size(); ++i)
      for (std::size_t j = i + 1; j < patterns.size(); ++j)
        require(cell_label(patterns[i].target_rho) != cell_label(patterns[j].target_rho), ErrorKind::config,
                "two patterns share target_rho " + cell_label(patterns[i].target_rho));
    require(!alphas.empty(), ErrorKind::config, "at least one alpha is required");
    for (double a : alphas) require(a >= 0.0 && a <= 1.0, ErrorKind::config, "alpha outside [0,1]");
    require(!seeds.empty(), ErrorKind::config, "at least one training seed is required");
    for (const auto& m : methods) baselines::method_from_string(m);
    require(variance.simulations >= 2 || variance.windows >= 2, ErrorKind::config,
            "variance needs at least two simulations or two windows");
    eval::DatasetSpec probe = dataset;
    probe.validate();
    require(static_cast<std::size_t>(day_minutes) >= 10 * dataset.train_count, ErrorKind::config,
            "day_minutes must give every training slot at least 10 minutes");
  }

  static std::string cell_label(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
  }
};

/// Width, cell size and network input size move together.
inline void apply_scale(PipelineConfig& c, const std::string& preset) {
  if (preset == "desk") {
    c.map.width = 64;
    c.map.cell_size = 1.6;
  } else if (preset == "paper") {
    c.map.width = 512;
    c.map.cell_size = 0.2;
  } else {
    fail(ErrorKind::config, "unknown scale preset '" + preset + "' (expected desk or paper)");
  }
  c.scale = preset;
  c.arch.width = static_cast<std::size_t>(c.map.width);
}

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = {{"scale", c.scale},
       {"sim", c.sim},
       {"layout_a", c.layout_a},
       {"layout_b", c.layout_b},
       {"map", c.map},
       {"day_minutes", c.day_minutes},
       {"patterns", c.patterns},
       {"alphas", c.alphas},
       {"dataset", c.dataset},
       {"arch", c.arch},
       {"train", c.train},
       {"time", c.time},
       {"variance", c.variance},
       {"seeds", c.seeds},
       {"methods", c.methods},
       {"render_count", c.render_count},
       {"gradcheck_seeds", c.gradcheck_seeds},
       {"jobs", c.jobs}};
}

/// Missing keys keep their defaults. A "scale" key applies its preset before
/// explicit map/arch keys are read, so those still override it.
inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
  static const std::vector<std::string> known = {"scale",  "sim",       "layout_a", "layout_b", "map",
                                                 "day_minutes", "patterns", "alphas", "dataset", "arch",
                                                 "train", "time",      "variance", "seeds",    "methods",
                                                 "render_count", "gradcheck_seeds", "jobs"};
  for (const auto& [key, _] : j.items())
    require(std::find(known.begin(), known.end(), key) != known.end(), ErrorKind::config,
            "unknown config key '" + key + "'");
  if (j.contains("scale")) {
    const auto s = j.at("scale").get<std::string>();
    if (s == "custom") c.scale = s;
    else apply_scale(c, s);
  }
  auto read = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  read("sim", c.sim);
  read("layout_a", c.layout_a);
  read("layout_b", c.layout_b);
  read("map", c.map);
  read("day_minutes", c.day_minutes);
  read("patterns", c.patterns);
  read("alphas", c.alphas);
  read("dataset", c.dataset);
  read("arch", c.arch);
  read("train", c.train);
  read("time", c.time);
  read("variance", c.variance);
  read("seeds", c.seeds);
  read("methods", c.methods);
  read("render_count", c.render_count);
  read("gradcheck_seeds", c.gradcheck_seeds);
  read("jobs", c.jobs);
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::missing, "cannot open config file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, path + ": " + e.what());
  }
  PipelineConfig c;
  try {
    c = j.get<PipelineConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, path + ": " + e.what());
  }
  return c;
}

/// A small grid that exercises every stage in well under a minute: 16x16
/// maps, a two-hour day with 12 training slots, two alphas, short training.
inline PipelineConfig smoke_config() {
  PipelineConfig c;
  c.scale = "custom";
  c.map.width = 16;
  c.map.cell_size = 6.4;
  c.arch.width = 16;
  c.arch.encoder_fc = {16};
  c.arch.decoder_fc = {16};
  c.day_minutes = 120;
  c.dataset.train_count = 12;
  c.dataset.test_count = 6;
  c.patterns.resize(1);
  c.patterns[0].target_rho = 1.0;
  c.alphas = {1.0, 0.0};
  c.train.epochs = 2;
  c.seeds = {1};
  c.variance.simulations = 2;
  c.variance.windows = 2;
  c.variance.sample_times = 2;
  c.render_count = 1;
  c.gradcheck_seeds = 1;
  return c;
}

}  // namespace xscene::pipeline
