#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "test_support.hpp"
#include "xscene/pipeline/stages.hpp"

using namespace xscene;
using namespace xscene::pipeline;
using testing_support::TempDir;

namespace {

struct Quiet : Context {
  Quiet(const PipelineConfig& cfg, const fs::path& root) : Context(cfg, root) {
    log = [](const std::string&) {};
  }
};

std::map<std::string, std::string> manifests(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.path().filename() == kManifestName) out[fs::relative(e.path(), root).string()] = read_text(e.path());
  return out;
}

struct CliResult {
  int code;
  std::string err;
};

CliResult cli(const std::string& args, const TempDir& scratch) {
  const std::string err_path = scratch.str("stderr.txt");
  const std::string cmd = std::string(XSCENE_CLI) + " " + args + " >/dev/null 2>" + err_path;
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_text(err_path)};
}

class SmokePipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("smoke");
    Quiet ctx(smoke_config(), dir_->path());
    first_ = new std::vector<StageTiming>(reproduce(ctx));
  }
  static void TearDownTestSuite() {
    delete first_;
    delete dir_;
  }
  static TempDir* dir_;
  static std::vector<StageTiming>* first_;
};

TempDir* SmokePipeline::dir_ = nullptr;
std::vector<StageTiming>* SmokePipeline::first_ = nullptr;

}  // namespace

TEST_F(SmokePipeline, ProducesEveryArtifact) {
  const auto& root = dir_->path();
  for (const char* f : {"report/metrics.csv", "report/table.json", "report/table.txt", "summary/summary.json",
                        "gradcheck/gradcheck.json", "timing.json", "maps/rho_1.00/maps_a.xms",
                        "datasets/rho_1.00_alpha_0.00/dataset.json"})
    EXPECT_TRUE(fs::exists(root / f)) << f;
  const auto grad = nlohmann::json::parse(read_text(root / "gradcheck/gradcheck.json"));
  EXPECT_TRUE(grad.at("passed").get<bool>());
  for (const auto& t : *first_) EXPECT_EQ(t.skipped, 0u) << t.stage;
}

TEST_F(SmokePipeline, SecondRunSkipsEveryStage) {
  Quiet ctx(smoke_config(), dir_->path());
  for (const auto& t : reproduce(ctx)) {
    EXPECT_EQ(t.ran, 0u) << t.stage;
    EXPECT_GT(t.skipped, 0u) << t.stage;
  }
}

TEST_F(SmokePipeline, ReportRowsMatchJobEnumeration) {
  const auto cfg = smoke_config();
  const auto report = collect_report(Workspace(dir_->path()), cfg);
  const auto jobs = prediction_jobs(cfg);
  EXPECT_EQ(report.rows.size(), jobs.size() * 2 * cfg.dataset.test_count);
  // e2e is absent at alpha 0
  for (const auto& j : jobs) EXPECT_FALSE(j.method == "e2e" && j.alpha == 0.0);
  EXPECT_FALSE(report.cell(1.0, 0.0, "e2e").available);
  EXPECT_TRUE(report.cell(1.0, 0.0, "e2e_dt").available);
  const auto csv = read_text(dir_->path() / "report/metrics.csv");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), report.rows.size() + 1);
}

TEST_F(SmokePipeline, TamperedUpstreamIsStale) {
  TempDir copy("tamper");
  fs::copy(dir_->path(), copy.path(), fs::copy_options::recursive);
  const fs::path file = copy.path() / "datasets/rho_1.00_alpha_1.00/train_a.xms";
  const std::string original = read_text(file);
  {
    std::ofstream out(file, std::ios::app | std::ios::binary);
    out << 'x';
  }
  Quiet ctx(smoke_config(), copy.path());
  try {
    stage_train(ctx, 1.0, 1.0, "ours", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::stale);
    EXPECT_NE(std::string(e.what()).find("train_a.xms"), std::string::npos);
  }
  // A full reproduce reruns the damaged stage and restores the file.
  reproduce(ctx);
  EXPECT_EQ(read_text(file), original);
}

TEST_F(SmokePipeline, ChangedParameterRerunsOnlyDownstream) {
  TempDir copy("rerun");
  fs::copy(dir_->path(), copy.path(), fs::copy_options::recursive);
  auto cfg = smoke_config();
  cfg.render_count = 0;
  Quiet ctx(cfg, copy.path());
  for (const auto& t : reproduce(ctx)) {
    if (t.stage == "predict" || t.stage == "evaluate") EXPECT_GT(t.ran, 0u) << t.stage;
    // the report itself is unchanged, so the summary stays valid
    else EXPECT_EQ(t.ran, 0u) << t.stage;
  }
}

TEST_F(SmokePipeline, IndependentRunsAgreeAcrossThreadCounts) {
  TempDir other("smoke2");
  auto cfg = smoke_config();
  cfg.jobs = 1;
  Quiet ctx(cfg, other.path());
  reproduce(ctx);
  EXPECT_EQ(manifests(dir_->path()), manifests(other.path()));
  EXPECT_EQ(read_text(dir_->path() / "report/metrics.csv"), read_text(other.path() / "report/metrics.csv"));
}

TEST(Stages, MissingUpstreamReported) {
  TempDir dir("missing");
  Quiet ctx(smoke_config(), dir.path());
  try {
    stage_dataset(ctx, 1.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::missing);
  }
  EXPECT_THROW(stage_evaluate(ctx), Error);
}

TEST(Stages, UnknownGridValuesRejected) {
  TempDir dir("grid");
  Quiet ctx(smoke_config(), dir.path());
  EXPECT_THROW(stage_control(ctx, 0.33), Error);
  EXPECT_THROW(require_alpha(ctx.cfg, 0.5), Error);
}

TEST(Config, RoundTripAndUnknownKey) {
  const auto c = smoke_config();
  const nlohmann::json j = c;
  EXPECT_EQ(nlohmann::json(j.get<PipelineConfig>()), j);
  nlohmann::json bad = j;
  bad["epochs"] = 3;
  try {
    (void)bad.get<PipelineConfig>();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
  }
}

TEST(Config, ValidationCatchesInconsistency) {
  auto c = smoke_config();
  c.arch.width = 32;
  EXPECT_THROW(c.validate(), Error);
  c = smoke_config();
  c.day_minutes = 100;
  EXPECT_THROW(c.validate(), Error);
  c = smoke_config();
  c.methods.push_back("rnn");
  EXPECT_THROW(c.validate(), Error);
  PipelineConfig paper;
  apply_scale(paper, "paper");
  EXPECT_EQ(paper.map.width, 512);
  EXPECT_EQ(paper.arch.width, 512u);
  EXPECT_NO_THROW(paper.validate());
}

TEST(Parallel, CoversEveryIndexOnce) {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), 8, [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(Parallel, RethrowsLowestIndexError) {
  try {
    parallel_for(100, 4, [](std::size_t i) {
      if (i == 17 || i == 60) throw std::runtime_error(std::to_string(i));
    });
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "17");
  }
}

TEST(Cli, ExitCodesAndJsonErrors) {
  TempDir dir("cli");
  {
    std::ofstream out(dir.path() / "smoke.json");
    out << nlohmann::json(smoke_config()).dump(2);
  }
  {
    std::ofstream out(dir.path() / "bad.json");
    out << R"({"scale": "desk", "epochs": 3})";
  }
  const std::string ws = dir.str("ws");

  EXPECT_EQ(cli("config --scale desk", dir).code, 0);

  auto r = cli("frobnicate", dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(nlohmann::json::parse(r.err).at("error"), "usage");

  r = cli("config --config " + dir.str("bad.json"), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(nlohmann::json::parse(r.err).at("error"), "config");

  r = cli("evaluate --config " + dir.str("smoke.json") + " --out " + ws, dir);
  EXPECT_EQ(r.code, 4);
  const auto err = nlohmann::json::parse(r.err);
  EXPECT_EQ(err.at("error"), "missing");
  EXPECT_FALSE(err.at("message").get<std::string>().empty());

  const std::string smoke = "--config " + dir.str("smoke.json") + " --out " + ws;
  EXPECT_EQ(cli("build-maps " + smoke, dir).code, 0);
  EXPECT_EQ(cli("make-datasets " + smoke, dir).code, 0);
  r = cli("train --method e2e --alpha 0 " + smoke, dir);
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(nlohmann::json::parse(r.err).at("message").get<std::string>().find("no pairwise data"),
            std::string::npos);

  {
    std::ofstream out(fs::path(ws) / "maps/rho_1.00/maps_b.xms", std::ios::app | std::ios::binary);
    out << 'x';
  }
  r = cli("make-datasets " + smoke, dir);
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(nlohmann::json::parse(r.err).at("error"), "stale");
}
