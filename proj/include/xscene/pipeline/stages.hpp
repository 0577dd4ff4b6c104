#pragma once

// Pipeline stages. Directory layout under the workspace root:
//   control/rho_R/            series_a.csv series_b.csv control.json
//   frames/rho_R/             scene_{a,b}.frames            (simulate command only)
//   maps/rho_R/               maps_a.xms maps_b.xms        (per-minute map stacks)
//   variance/rho_R/           variance.json
//   datasets/rho_R_alpha_A/   train_{a,b}.xms test_{a,b}.xms dataset.json
//   models/rho_R_alpha_A/M_sS/  model.ckpt curve.csv
//   predictions/rho_R_alpha_A/M_sS/  pred_{a_to_b,b_to_a}.xms *.ppm [latent.json]
//   gradcheck/                gradcheck.json
//   report/                   metrics.csv curves.csv table.json table.txt latent.json
//   summary/                  summary.json summary.txt
// Each directory carries a manifest.json (see manifest.hpp).

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "xscene/baselines/baselines.hpp"
#include "xscene/eval/dataset.hpp"
#include "xscene/eval/metrics.hpp"
#include "xscene/eval/report.hpp"
#include "xscene/mapgen/render.hpp"
#include "xscene/model/dual_autoencoder.hpp"
#include "xscene/model/gradcheck.hpp"
#include "xscene/pipeline/config.hpp"
#include "xscene/pipeline/manifest.hpp"
#include "xscene/pipeline/parallel.hpp"
#include "xscene/pipeline/summary.hpp"
#include "xscene/sim/frame_io.hpp"

namespace xscene::pipeline {

using model::Direction;

inline constexpr Direction kDirections[] = {Direction::a_to_b, Direction::b_to_a};

inline std::string direction_tag(Direction d) { return d == Direction::a_to_b ? "a_to_b" : "b_to_a"; }

struct Context {
  PipelineConfig cfg;
  Workspace ws;
  std::function<void(const std::string&)> log;

  Context(PipelineConfig c, const fs::path& root) : cfg(std::move(c)), ws(root) {
    cfg.validate();
    log = [mutex = std::make_shared<std::mutex>()](const std::string& line) {
      std::lock_guard lock(*mutex);
      std::clog << line << std::endl;
    };
  }
};

// ---- naming ------------------------------------------------------------------

inline std::string rho_tag(double rho) { return "rho_" + PipelineConfig::cell_label(rho); }
inline std::string cell_tag(double rho, double alpha) {
  return rho_tag(rho) + "_alpha_" + PipelineConfig::cell_label(alpha);
}
inline std::string control_dir(double rho) { return "control/" + rho_tag(rho); }
inline std::string frames_dir(double rho) { return "frames/" + rho_tag(rho); }
inline std::string maps_dir(double rho) { return "maps/" + rho_tag(rho); }
inline std::string variance_dir(double rho) { return "variance/" + rho_tag(rho); }
inline std::string dataset_dir(double rho, double alpha) { return "datasets/" + cell_tag(rho, alpha); }
inline std::string run_tag(const std::string& method, std::uint64_t seed) {
  return method == "linear" ? method : method + "_s" + std::to_string(seed);
}
inline std::string model_dir(double rho, double alpha, const std::string& method, std::uint64_t seed) {
  return "models/" + cell_tag(rho, alpha) + "/" + run_tag(method, seed);
}
inline std::string prediction_dir(double rho, double alpha, const std::string& method, std::uint64_t seed) {
  return "predictions/" + cell_tag(rho, alpha) + "/" + run_tag(method, seed);
}
inline const char* kGradcheckDir = "gradcheck";
inline const char* kReportDir = "report";
inline const char* kSummaryDir = "summary";

inline std::vector<double> grid_rhos(const PipelineConfig& c) {
  std::vector<double> out;
  for (const auto& p : c.patterns) out.push_back(p.target_rho);
  return out;
}

inline const control::CorrelationPattern& pattern_for(const PipelineConfig& c, double rho) {
  for (const auto& p : c.patterns)
    if (PipelineConfig::cell_label(p.target_rho) == PipelineConfig::cell_label(rho)) return p;
  fail(ErrorKind::config, "no correlation pattern with target_rho " + PipelineConfig::cell_label(rho) + " in config");
}

inline void require_alpha(const PipelineConfig& c, double alpha) {
  for (double a : c.alphas)
    if (PipelineConfig::cell_label(a) == PipelineConfig::cell_label(alpha)) return;
  fail(ErrorKind::config, "alpha " + PipelineConfig::cell_label(alpha) + " is not part of the configured grid");
}

/// E2E cannot be trained without synchronized observations.
inline bool method_available(const PipelineConfig& c, const std::string& method, double alpha) {
  return method != "e2e" || eval::pairwise_count(alpha, c.dataset.train_count) > 0;
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::input, "cannot write " + p.string());
  out << text;
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::input, p.string() + ": " + e.what());
  }
}

// ---- control -----------------------------------------------------------------

inline StageOutcome stage_control(Context& ctx, double rho) {
  const auto& pattern = pattern_for(ctx.cfg, rho);
  const nlohmann::json params = {{"pattern", pattern}, {"day_minutes", ctx.cfg.day_minutes}};
  return ctx.ws.run(control_dir(rho), "control", params, {}, [&](const fs::path& d) {
    const auto pair = control::generate_pair(pattern, ctx.cfg.day_minutes);
    write_text(d / "series_a.csv", control::to_csv(pair.a));
    write_text(d / "series_b.csv", control::to_csv(pair.b));
    write_json(d / "control.json", {{"target_rho", pattern.target_rho},
                                    {"achieved_rho", pair.achieved_rho},
                                    {"blend_weight", pair.blend_weight}});
    ctx.log("control " + rho_tag(rho) + ": achieved rho " + std::to_string(pair.achieved_rho));
    return std::vector<std::string>{"series_a.csv", "series_b.csv", "control.json"};
  });
}

inline control::GeneratedPair load_control(const Workspace& ws, double rho) {
  const fs::path d = ws.dir(control_dir(rho));
  control::GeneratedPair p;
  p.a = control::from_csv(read_text(d / "series_a.csv"), SceneId::a);
  p.b = control::from_csv(read_text(d / "series_b.csv"), SceneId::b);
  const auto j = read_json(d / "control.json");
  p.achieved_rho = j.at("achieved_rho");
  p.blend_weight = j.at("blend_weight");
  return p;
}

/// Scene b runs with the next simulator seed so the two scenes never share
/// random draws.
inline sim::SimConfig scene_sim_config(const PipelineConfig& c, SceneId scene) {
  sim::SimConfig s = c.sim;
  if (scene == SceneId::b) s.rng_seed += 1;
  return s;
}

inline const sim::SceneLayout& scene_layout(const PipelineConfig& c, SceneId scene) {
  return scene == SceneId::a ? c.layout_a : c.layout_b;
}

// ---- frames (export only) ------------------------------------------------------

/// Writes the raw 10 Hz frame stream of one scene for `minutes` minutes (the
/// whole day when negative; 0 writes the header only). The map stage does not read these files: it replays the
/// same deterministic simulation and rasterizes it on the fly.
inline StageOutcome stage_frames(Context& ctx, double rho, SceneId scene, int minutes) {
  stage_control(ctx, rho);
  const int span = minutes >= 0 ? std::min(minutes, ctx.cfg.day_minutes) : ctx.cfg.day_minutes;
  const std::string name = "scene_" + std::string(to_string(scene)) + ".frames";
  const auto& layout = scene_layout(ctx.cfg, scene);
  const auto sim_cfg = scene_sim_config(ctx.cfg, scene);
  const nlohmann::json params = {{"scene", to_string(scene)}, {"minutes", span}, {"sim", sim_cfg}, {"layout", layout}};
  return ctx.ws.run(frames_dir(rho) + "/" + std::string(to_string(scene)), "simulate", params, {control_dir(rho)},
                    [&](const fs::path& d) {
                      const auto pair = load_control(ctx.ws, rho);
                      const auto& series = scene == SceneId::a ? pair.a : pair.b;
                      const double duration = 60.0 * span;
                      sim::FrameWriter writer((d / name).string(),
                                              {sim::layout_hash(layout), sim_cfg.rng_seed, sim_cfg.dt, duration});
                      sim::run_simulation(layout, series, sim_cfg, duration,
                                          [&](const sim::Frame& f) { writer.write(f); });
                      writer.close();
                      ctx.log("simulate " + rho_tag(rho) + " scene " + std::string(to_string(scene)) + ": " +
                              std::to_string(sim::frame_count(duration, sim_cfg.dt)) + " frames");
                      return std::vector<std::string>{name};
                    });
}

// ---- maps --------------------------------------------------------------------

inline StageOutcome stage_maps(Context& ctx, double rho) {
  const nlohmann::json params = {{"sim", ctx.cfg.sim},
                                 {"layout_a", ctx.cfg.layout_a},
                                 {"layout_b", ctx.cfg.layout_b},
                                 {"map", ctx.cfg.map}};
  return ctx.ws.run(maps_dir(rho), "build_maps", params, {control_dir(rho)}, [&](const fs::path& d) {
    const auto pair = load_control(ctx.ws, rho);
    for (SceneId s : {SceneId::a, SceneId::b}) {
      const auto maps = eval::simulate_maps(scene_layout(ctx.cfg, s), s == SceneId::a ? pair.a : pair.b,
                                            scene_sim_config(ctx.cfg, s), ctx.cfg.map);
      mapgen::write_map_stack((d / ("maps_" + std::string(to_string(s)) + ".xms")).string(), maps, ctx.cfg.map.window);
    }
    ctx.log("build_maps " + rho_tag(rho) + " done");
    return std::vector<std::string>{"maps_a.xms", "maps_b.xms"};
  });
}

// ---- variance ----------------------------------------------------------------

inline StageOutcome stage_variance(Context& ctx, double rho) {
  const nlohmann::json params = {{"sim", ctx.cfg.sim},
                                 {"layout_a", ctx.cfg.layout_a},
                                 {"layout_b", ctx.cfg.layout_b},
                                 {"map", ctx.cfg.map},
                                 {"variance", ctx.cfg.variance}};
  return ctx.ws.run(variance_dir(rho), "variance", params, {control_dir(rho)}, [&](const fs::path& d) {
    const auto pair = load_control(ctx.ws, rho);
    const auto v = eval::dataset_variance(ctx.cfg.layout_a, ctx.cfg.layout_b, pair, ctx.cfg.sim, ctx.cfg.map,
                                          ctx.cfg.variance);
    write_json(d / "variance.json", v);
    ctx.log("variance " + rho_tag(rho) + ": V_d " + std::to_string(v.v_d));
    return std::vector<std::string>{"variance.json"};
  });
}

inline double load_variance(const Workspace& ws, double rho) {
  return read_json(ws.dir(variance_dir(rho)) / "variance.json").at("v_d").get<double>();
}

// ---- datasets ----------------------------------------------------------------

inline eval::DatasetSpec dataset_spec(const PipelineConfig& c, double rho, double alpha) {
  eval::DatasetSpec s = c.dataset;
  s.rho = rho;
  s.alpha = alpha;
  return s;
}

inline StageOutcome stage_dataset(Context& ctx, double rho, double alpha) {
  const auto spec = dataset_spec(ctx.cfg, rho, alpha);
  return ctx.ws.run(dataset_dir(rho, alpha), "make_datasets", {{"spec", spec}}, {maps_dir(rho)},
                    [&](const fs::path& d) {
                      const fs::path md = ctx.ws.dir(maps_dir(rho));
                      const auto ds = eval::build_dataset(spec, mapgen::read_map_stack((md / "maps_a.xms").string()),
                                                          mapgen::read_map_stack((md / "maps_b.xms").string()));
                      const double w = ctx.cfg.map.window;
                      mapgen::write_map_stack((d / "train_a.xms").string(), ds.train_a, w);
                      mapgen::write_map_stack((d / "train_b.xms").string(), ds.train_b, w);
                      mapgen::write_map_stack((d / "test_a.xms").string(), ds.test_a, w);
                      mapgen::write_map_stack((d / "test_b.xms").string(), ds.test_b, w);
                      write_json(d / "dataset.json", {{"spec", spec},
                                                      {"paired", ds.paired},
                                                      {"pairwise", ds.pairwise()},
                                                      {"train_a", ds.train_a.size()},
                                                      {"train_b", ds.train_b.size()},
                                                      {"test_a", ds.test_a.size()},
                                                      {"test_b", ds.test_b.size()}});
                      ctx.log("make_datasets " + cell_tag(rho, alpha) + ": pairwise " + std::to_string(ds.pairwise()));
                      return std::vector<std::string>{"train_a.xms", "train_b.xms", "test_a.xms", "test_b.xms",
                                                      "dataset.json"};
                    });
}

inline eval::Dataset load_dataset(const Workspace& ws, double rho, double alpha) {
  const fs::path d = ws.dir(dataset_dir(rho, alpha));
  const auto j = read_json(d / "dataset.json");
  eval::Dataset ds;
  ds.spec = j.at("spec").get<eval::DatasetSpec>();
  ds.paired = j.at("paired").get<std::vector<bool>>();
  ds.train_a = mapgen::read_map_stack((d / "train_a.xms").string());
  ds.train_b = mapgen::read_map_stack((d / "train_b.xms").string());
  ds.test_a = mapgen::read_map_stack((d / "test_a.xms").string());
  ds.test_b = mapgen::read_map_stack((d / "test_b.xms").string());
  return ds;
}

// ---- training ----------------------------------------------------------------

inline std::string curve_csv(const std::vector<model::EpochLog>& curve) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,objective,recon_a,recon_b,latent\n";
  for (const auto& e : curve)
    out << e.epoch << ',' << e.objective << ',' << e.recon_a << ',' << e.recon_b << ',' << e.latent << '\n';
  return out.str();
}

inline std::string regressor_curves_csv(const baselines::E2EModel& m) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,a_to_b,b_to_a\n";
  for (std::size_t e = 0; e < m.a_to_b.curve.size(); ++e)
    out << e << ',' << m.a_to_b.curve[e].objective << ',' << m.b_to_a.curve.at(e).objective << '\n';
  return out.str();
}

inline StageOutcome stage_train(Context& ctx, double rho, double alpha, const std::string& method, std::uint64_t seed) {
  const auto m = baselines::method_from_string(method);
  require(m != baselines::Method::linear, ErrorKind::usage, "the linear baseline has no training stage");
  model::TrainConfig tc = ctx.cfg.train;
  tc.seed = seed;
  const nlohmann::json params = {{"method", method}, {"arch", ctx.cfg.arch}, {"train", tc}, {"time", ctx.cfg.time}};
  return ctx.ws.run(model_dir(rho, alpha, method, seed), "train", params, {dataset_dir(rho, alpha)},
                    [&](const fs::path& d) {
                      const auto ds = load_dataset(ctx.ws, rho, alpha);
                      const auto t0 = std::chrono::steady_clock::now();
                      if (m == baselines::Method::ours) {
                        auto trained = model::train(ds.train_a, ds.train_b, ctx.cfg.arch, tc, ctx.cfg.time);
                        model::save_model((d / "model.ckpt").string(), trained);
                        write_text(d / "curve.csv", curve_csv(trained.curve));
                      } else {
                        baselines::E2EModel trained;
                        if (m == baselines::Method::e2e) {
                          const auto pairs = ds.synchronized_pairs();
                          trained = baselines::train_e2e(ds.train_a, ds.train_b, pairs, ctx.cfg.arch, tc);
                        } else {
                          trained = baselines::train_e2e_dt(ds.train_a, ds.train_b, ctx.cfg.arch, tc, ctx.cfg.time);
                        }
                        baselines::save_e2e((d / "model.ckpt").string(), trained);
                        write_text(d / "curve.csv", regressor_curves_csv(trained));
                      }
                      const double secs =
                          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                      ctx.log("train " + cell_tag(rho, alpha) + " " + run_tag(method, seed) + ": " +
                              std::to_string(secs) + " s");
                      return std::vector<std::string>{"model.ckpt", "curve.csv"};
                    });
}

// ---- prediction --------------------------------------------------------------

struct LatentRecord {
  double rho = 0.0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double near = 0.0;  // mean ||Z_a - Z_b|| over test pairs with dis <= 2 min
  double far = 0.0;   // same over pairs with dis >= 60 min
  std::size_t near_pairs = 0;
  std::size_t far_pairs = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LatentRecord, rho, alpha, seed, near, far, near_pairs, far_pairs)

inline LatentRecord latent_distances(const model::TrainedModel& m, const eval::Dataset& ds) {
  LatentRecord r;
  std::vector<std::vector<double>> za, zb;
  for (const auto& s : ds.test_a) za.push_back(model::encode_map(s, m));
  for (const auto& s : ds.test_b) zb.push_back(model::encode_map(s, m));
  double near = 0.0, far = 0.0;
  for (std::size_t i = 0; i < za.size(); ++i)
    for (std::size_t j = 0; j < zb.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < za[i].size(); ++k) d2 += (za[i][k] - zb[j][k]) * (za[i][k] - zb[j][k]);
      const double gap = model::dis(ds.test_a[i].timestamp, ds.test_b[j].timestamp, m.time);
      if (gap <= 2.0) {
        near += std::sqrt(d2);
        ++r.near_pairs;
      } else if (gap >= 60.0) {
        far += std::sqrt(d2);
        ++r.far_pairs;
      }
    }
  r.near = r.near_pairs ? near / static_cast<double>(r.near_pairs) : 0.0;
  r.far = r.far_pairs ? far / static_cast<double>(r.far_pairs) : 0.0;
  return r;
}

inline StageOutcome stage_predict(Context& ctx, double rho, double alpha, const std::string& method,
                                  std::uint64_t seed) {
  const auto m = baselines::method_from_string(method);
  std::vector<std::string> upstream = {dataset_dir(rho, alpha)};
  if (m != baselines::Method::linear) upstream.push_back(model_dir(rho, alpha, method, seed));
  const nlohmann::json params = {{"method", method},
                                 {"seed", m == baselines::Method::linear ? 0 : seed},
                                 {"render_count", ctx.cfg.render_count},
                                 {"time", ctx.cfg.time}};
  return ctx.ws.run(
      prediction_dir(rho, alpha, method, seed), "predict", params, upstream, [&](const fs::path& d) {
        const auto ds = load_dataset(ctx.ws, rho, alpha);
        std::optional<model::TrainedModel> ours;
        std::optional<baselines::E2EModel> e2e;
        const fs::path ckpt = ctx.ws.dir(model_dir(rho, alpha, method, seed)) / "model.ckpt";
        if (m == baselines::Method::ours) ours = model::load_model(ckpt.string());
        if (m == baselines::Method::e2e || m == baselines::Method::e2e_dt) e2e = baselines::load_e2e(ckpt.string());

        std::vector<std::string> files;
        for (Direction dir : kDirections) {
          const auto& inputs = dir == Direction::a_to_b ? ds.test_a : ds.test_b;
          const auto& truth = dir == Direction::a_to_b ? ds.test_b : ds.test_a;
          const auto& history = dir == Direction::a_to_b ? ds.train_b : ds.train_a;
          std::vector<mapgen::SceneMap> preds;
          for (const auto& in : inputs) {
            if (ours) preds.push_back(model::predict_cross(in, dir, *ours));
            else if (e2e) preds.push_back(baselines::predict_e2e(in, dir, *e2e));
            else preds.push_back(baselines::predict_linear(history, in.timestamp, ctx.cfg.time));
          }
          const std::string tag = direction_tag(dir);
          mapgen::write_map_stack((d / ("pred_" + tag + ".xms")).string(), preds, ctx.cfg.map.window);
          files.push_back("pred_" + tag + ".xms");
          for (std::size_t k = 0; k < std::min(ctx.cfg.render_count, preds.size()); ++k) {
            const std::string stem = tag + "_" + std::to_string(k);
            mapgen::write_ppm((d / (stem + "_pred.ppm")).string(), mapgen::render(preds[k]));
            mapgen::write_ppm((d / (stem + "_truth.ppm")).string(), mapgen::render(truth[k]));
            mapgen::write_ppm((d / (stem + "_error.ppm")).string(), mapgen::render_error(preds[k], truth[k]));
            for (const char* kind : {"_pred.ppm", "_truth.ppm", "_error.ppm"}) files.push_back(stem + kind);
          }
        }
        if (ours) {
          auto rec = latent_distances(*ours, ds);
          rec.rho = rho;
          rec.alpha = alpha;
          rec.seed = seed;
          write_json(d / "latent.json", rec);
          files.push_back("latent.json");
        }
        return files;
      });
}

// ---- gradient check ----------------------------------------------------------

inline StageOutcome stage_gradcheck(Context& ctx) {
  return ctx.ws.run(kGradcheckDir, "gradcheck", {{"seeds", ctx.cfg.gradcheck_seeds}}, {}, [&](const fs::path& d) {
    const auto entries = model::gradient_check_suite(ctx.cfg.gradcheck_seeds);
    bool ok = true;
    double worst = 0.0;
    for (const auto& e : entries) {
      ok = ok && e.passed;
      worst = std::max(worst, e.worst);
    }
    write_json(d / "gradcheck.json", {{"passed", ok}, {"worst_relative_error", worst}, {"entries", entries}});
    ctx.log("gradcheck: " + std::string(ok ? "pass" : "FAIL") + ", worst relative error " + std::to_string(worst));
    return std::vector<std::string>{"gradcheck.json"};
  });
}

// ---- evaluation --------------------------------------------------------------

/// Every (cell, method, seed) prediction set the grid calls for.
struct PredictionJob {
  double rho;
  double alpha;
  std::string method;
  std::uint64_t seed;
};

inline std::vector<PredictionJob> prediction_jobs(const PipelineConfig& c) {
  std::vector<PredictionJob> out;
  for (double rho : grid_rhos(c))
    for (double alpha : c.alphas)
      for (const auto& m : c.methods) {
        if (!method_available(c, m, alpha)) continue;
        if (m == "linear") out.push_back({rho, alpha, m, 0});
        else
          for (auto s : c.seeds) out.push_back({rho, alpha, m, s});
      }
  return out;
}

inline eval::MetricsReport collect_report(const Workspace& ws, const PipelineConfig& c,
                                          std::vector<LatentRecord>* latents = nullptr) {
  eval::MetricsReport report;
  report.rhos = grid_rhos(c);
  report.alphas = c.alphas;
  report.methods = c.methods;
  for (double rho : report.rhos) {
    report.variance[rho] = load_variance(ws, rho);
    const auto pair = load_control(ws, rho);
    for (double alpha : c.alphas) {
      const auto ds = load_dataset(ws, rho, alpha);
      for (const auto& job : prediction_jobs(c)) {
        if (job.rho != rho || job.alpha != alpha) continue;
        const fs::path d = ws.dir(prediction_dir(rho, alpha, job.method, job.seed));
        for (Direction dir : kDirections) {
          const auto preds = mapgen::read_map_stack((d / ("pred_" + direction_tag(dir) + ".xms")).string());
          const auto& truth = dir == Direction::a_to_b ? ds.test_b : ds.test_a;
          const auto& target = dir == Direction::a_to_b ? pair.b : pair.a;
          require(preds.size() == truth.size(), ErrorKind::input, d.string() + ": prediction count mismatch");
          for (std::size_t i = 0; i < preds.size(); ++i) {
            const double minute = truth[i].timestamp - target.start_minute;
            report.rows.push_back({rho, alpha, job.method, job.seed, std::string(model::to_string(dir)), i,
                                   truth[i].timestamp, eval::prediction_error(preds[i], truth[i]),
                                   target.at(60.0 * minute).people});
          }
        }
        if (latents && job.method == "ours") latents->push_back(read_json(d / "latent.json").get<LatentRecord>());
      }
    }
  }
  return report;
}

inline StageOutcome stage_evaluate(Context& ctx) {
  const auto& c = ctx.cfg;
  std::vector<std::string> upstream;
  for (double rho : grid_rhos(c)) {
    upstream.push_back(control_dir(rho));
    upstream.push_back(variance_dir(rho));
    for (double alpha : c.alphas) upstream.push_back(dataset_dir(rho, alpha));
  }
  for (const auto& j : prediction_jobs(c)) upstream.push_back(prediction_dir(j.rho, j.alpha, j.method, j.seed));
  const nlohmann::json params = {{"rhos", grid_rhos(c)}, {"alphas", c.alphas}, {"methods", c.methods},
                                 {"seeds", c.seeds}};
  return ctx.ws.run(kReportDir, "evaluate", params, upstream, [&](const fs::path& d) {
    std::vector<LatentRecord> latents;
    const auto report = collect_report(ctx.ws, c, &latents);
    write_text(d / "metrics.csv", report.csv());
    write_text(d / "curves.csv", report.curves_csv());
    write_json(d / "table.json", report.table());
    write_text(d / "table.txt", report.text_table());
    write_json(d / "latent.json", latents);
    ctx.log("evaluate: " + std::to_string(report.rows.size()) + " rows");
    return std::vector<std::string>{"metrics.csv", "curves.csv", "table.json", "table.txt", "latent.json"};
  });
}

// ---- summary -----------------------------------------------------------------

inline StageOutcome stage_summary(Context& ctx) {
  return ctx.ws.run(kSummaryDir, "summary", nlohmann::json::object(), {kReportDir, kGradcheckDir},
                    [&](const fs::path& d) {
                      std::vector<LatentRecord> latents;
                      const auto report = collect_report(ctx.ws, ctx.cfg, &latents);
                      std::vector<LatentPair> lat;
                      for (const auto& l : latents) lat.push_back({l.rho, l.alpha, l.seed, l.near, l.far});
                      const auto grad = read_json(ctx.ws.dir(kGradcheckDir) / "gradcheck.json");
                      auto checks = assess_grid(report, lat);
                      checks.insert(checks.begin(),
                                    {"gradients", "analytic gradients match central differences",
                                     grad.at("passed").get<bool>(),
                                     "worst relative error " + std::to_string(grad.at("worst_relative_error").get<double>())});
                      write_json(d / "summary.json", checks);
                      write_text(d / "summary.txt", format_checks(checks));
                      ctx.log("summary: " + std::to_string(checks.size()) + " checks");
                      return std::vector<std::string>{"summary.json", "summary.txt"};
                    });
}

// ---- whole pipeline ----------------------------------------------------------

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
  std::size_t ran = 0;
  std::size_t skipped = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(StageTiming, stage, seconds, ran, skipped)

/// Runs every stage over the configured grid. Grid cells of a stage run on
/// `cfg.jobs` threads; results do not depend on the thread count. Timing goes
/// to timing.json at the workspace root, outside every manifest.
inline std::vector<StageTiming> reproduce(Context& ctx) {
  const auto& c = ctx.cfg;
  const auto rhos = grid_rhos(c);
  std::vector<StageTiming> timing;
  auto timed = [&](const std::string& name, std::size_t n, auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    std::atomic<std::size_t> ran{0}, skipped{0};
    parallel_for(n, c.jobs, [&](std::size_t i) { (fn(i) == StageOutcome::ran ? ran : skipped)++; });
    timing.push_back({name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), ran.load(),
                      skipped.load()});
  };

  std::vector<std::pair<double, double>> cells;
  for (double rho : rhos)
    for (double alpha : c.alphas) cells.emplace_back(rho, alpha);
  std::vector<PredictionJob> train_jobs;
  for (const auto& j : prediction_jobs(c))
    if (j.method != "linear") train_jobs.push_back(j);
  const auto predict_jobs = prediction_jobs(c);

  timed("gradcheck", 1, [&](std::size_t) { return stage_gradcheck(ctx); });
  timed("control", rhos.size(), [&](std::size_t i) { return stage_control(ctx, rhos[i]); });
  // Map building and variance estimation are the two simulation-heavy stages;
  // interleave them so both scenes' work spreads over the threads.
  timed("build_maps+variance", 2 * rhos.size(), [&](std::size_t i) {
    return i % 2 == 0 ? stage_maps(ctx, rhos[i / 2]) : stage_variance(ctx, rhos[i / 2]);
  });
  timed("make_datasets", cells.size(),
        [&](std::size_t i) { return stage_dataset(ctx, cells[i].first, cells[i].second); });
  timed("train", train_jobs.size(), [&](std::size_t i) {
    const auto& j = train_jobs[i];
    return stage_train(ctx, j.rho, j.alpha, j.method, j.seed);
  });
  timed("predict", predict_jobs.size(), [&](std::size_t i) {
    const auto& j = predict_jobs[i];
    return stage_predict(ctx, j.rho, j.alpha, j.method, j.seed);
  });
  timed("evaluate", 1, [&](std::size_t) { return stage_evaluate(ctx); });
  timed("summary", 1, [&](std::size_t) { return stage_summary(ctx); });

  double total = 0.0;
  for (const auto& t : timing) total += t.seconds;
  write_json(ctx.ws.root() / "timing.json", {{"stages", timing}, {"total_seconds", total}});
  return timing;
}

}  // namespace xscene::pipeline
