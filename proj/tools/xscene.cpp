// Command-line entry point: one subcommand per pipeline stage plus
// `reproduce`, which runs the whole grid.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "xscene/pipeline/stages.hpp"

using namespace xscene;
using namespace xscene::pipeline;

namespace {

struct Options {
  std::string config;
  std::string scale;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> method;
  std::optional<double> rho;
  std::optional<double> alpha;
  std::optional<std::size_t> jobs;
  std::string scene = "a";
  int minutes = -1;
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
    case ErrorKind::usage: return 2;
    case ErrorKind::stale: return 3;
    case ErrorKind::missing: return 4;
    default: return 1;
  }
}

void report_error(std::string_view kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

PipelineConfig resolve_config(const Options& o) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : load_config(o.config);
  if (!o.scale.empty()) apply_scale(c, o.scale);
  if (o.seed) c.seeds = {*o.seed};
  if (o.jobs) c.jobs = *o.jobs;
  return c;
}

std::vector<double> selected_rhos(const Context& ctx, const Options& o) {
  if (!o.rho) return grid_rhos(ctx.cfg);
  pattern_for(ctx.cfg, *o.rho);
  return {*o.rho};
}

std::vector<double> selected_alphas(const Context& ctx, const Options& o) {
  if (!o.alpha) return ctx.cfg.alphas;
  require_alpha(ctx.cfg, *o.alpha);
  return {*o.alpha};
}

std::vector<PredictionJob> selected_jobs(const Context& ctx, const Options& o, bool trainable_only) {
  if (o.method) baselines::method_from_string(*o.method);
  std::vector<PredictionJob> out;
  const auto rhos = selected_rhos(ctx, o);
  const auto alphas = selected_alphas(ctx, o);
  auto in = [](const std::vector<double>& v, double x) {
    for (double y : v)
      if (PipelineConfig::cell_label(x) == PipelineConfig::cell_label(y)) return true;
    return false;
  };
  for (const auto& j : prediction_jobs(ctx.cfg)) {
    if (!in(rhos, j.rho) || !in(alphas, j.alpha)) continue;
    if (o.method && j.method != *o.method) continue;
    if (trainable_only && j.method == "linear") continue;
    out.push_back(j);
  }
  // Asking for E2E where it cannot exist is an error, not an empty selection.
  if (o.method && *o.method == "e2e" && out.empty())
    fail(ErrorKind::missing, "no pairwise data: e2e cannot be trained at alpha " +
                                 PipelineConfig::cell_label(o.alpha.value_or(0.0)));
  if (o.method && trainable_only && *o.method == "linear")
    fail(ErrorKind::usage, "the linear baseline has no training stage");
  return out;
}

void print_outcome(const std::string& what, StageOutcome s) {
  std::cout << what << ": " << (s == StageOutcome::ran ? "done" : "up to date") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-scene dynamic map prediction: simulation, training, baselines and evaluation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON pipeline config (defaults when omitted)");
    sub->add_option("--scale", o.scale, "scale preset")->check(CLI::IsMember({"desk", "paper"}));
    sub->add_option("--out", o.out, "workspace directory")->capture_default_str();
    sub->add_option("--jobs", o.jobs, "worker threads for grid cells (0 = all cores)");
  };
  auto grid = [&](CLI::App* sub) {
    sub->add_option("--rho", o.rho, "restrict to one correlation pattern");
    sub->add_option("--alpha", o.alpha, "restrict to one pairwise fraction");
  };
  auto models = [&](CLI::App* sub) {
    grid(sub);
    sub->add_option("--method", o.method, "ours | e2e | e2e_dt | linear")
        ->check(CLI::IsMember({"ours", "e2e", "e2e_dt", "linear"}));
    sub->add_option("--seed", o.seed, "train a single seed instead of the configured list");
  };

  auto* simulate = app.add_subcommand("simulate", "write the 10 Hz frame stream of one scene");
  common(simulate);
  simulate->add_option("--rho", o.rho, "correlation pattern")->required();
  simulate->add_option("--scene", o.scene, "scene id")->check(CLI::IsMember({"a", "b"}));
  simulate->add_option("--minutes", o.minutes, "simulated minutes (whole day when omitted)");
  auto* build = app.add_subcommand("build-maps", "simulate both scenes and rasterize per-minute scene maps");
  common(build);
  build->add_option("--rho", o.rho, "restrict to one correlation pattern");
  auto* datasets = app.add_subcommand("make-datasets", "train/test splits per (rho, alpha) plus dataset variance");
  common(datasets);
  grid(datasets);
  auto* train = app.add_subcommand("train", "train ours, e2e or e2e_dt");
  common(train);
  models(train);
  auto* predict = app.add_subcommand("predict", "predict every test map in both directions and render images");
  common(predict);
  models(predict);
  auto* evaluate = app.add_subcommand("evaluate", "prediction-error report and method grid");
  common(evaluate);
  auto* reproduce_cmd = app.add_subcommand("reproduce", "run every stage over the whole grid");
  common(reproduce_cmd);
  reproduce_cmd->add_option("--seed", o.seed, "train a single seed instead of the configured list");
  auto* show = app.add_subcommand("config", "print the resolved configuration as JSON");
  common(show);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    const PipelineConfig cfg = resolve_config(o);
    if (show->parsed()) {
      cfg.validate();
      std::cout << nlohmann::json(cfg).dump(2) << "\n";
      return 0;
    }
    Context ctx(cfg, o.out);

    if (simulate->parsed()) {
      print_outcome("simulate", stage_frames(ctx, *o.rho, scene_from_string(o.scene), o.minutes));
    } else if (build->parsed()) {
      for (double rho : selected_rhos(ctx, o)) {
        stage_control(ctx, rho);
        print_outcome("build-maps " + rho_tag(rho), stage_maps(ctx, rho));
      }
    } else if (datasets->parsed()) {
      for (double rho : selected_rhos(ctx, o)) {
        print_outcome("variance " + rho_tag(rho), stage_variance(ctx, rho));
        for (double alpha : selected_alphas(ctx, o))
          print_outcome("make-datasets " + cell_tag(rho, alpha), stage_dataset(ctx, rho, alpha));
      }
    } else if (train->parsed()) {
      const auto jobs = selected_jobs(ctx, o, true);
      parallel_for(jobs.size(), ctx.cfg.jobs, [&](std::size_t i) {
        const auto& j = jobs[i];
        print_outcome("train " + cell_tag(j.rho, j.alpha) + " " + run_tag(j.method, j.seed),
                      stage_train(ctx, j.rho, j.alpha, j.method, j.seed));
      });
    } else if (predict->parsed()) {
      const auto jobs = selected_jobs(ctx, o, false);
      parallel_for(jobs.size(), ctx.cfg.jobs, [&](std::size_t i) {
        const auto& j = jobs[i];
        print_outcome("predict " + cell_tag(j.rho, j.alpha) + " " + run_tag(j.method, j.seed),
                      stage_predict(ctx, j.rho, j.alpha, j.method, j.seed));
      });
    } else if (evaluate->parsed()) {
      print_outcome("evaluate", stage_evaluate(ctx));
      std::cout << read_text(ctx.ws.dir(kReportDir) / "table.txt");
    } else if (reproduce_cmd->parsed()) {
      const auto timing = reproduce(ctx);
      double total = 0.0;
      for (const auto& t : timing) total += t.seconds;
      std::cout << read_text(ctx.ws.dir(kReportDir) / "table.txt") << "\n"
                << read_text(ctx.ws.dir(kSummaryDir) / "summary.txt") << "total " << total << " s\n";
    }
  } catch (const Error& e) {
    report_error(to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
  return 0;
}
