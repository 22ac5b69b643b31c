#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "cyclead/container.hpp"
#include "cyclead/experiment.hpp"

using namespace cyclead;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("cyclead_test_experiment_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json tiny_manifest_json(const std::string& out, int n_runs = 2) {
  return json{{"dataset", {{"synthetic", {{"resolution", 8}, {"n_normal", 6}, {"n_abnormal", 4}, {"size_fraction", 0.3}, {"seed", 3}}}}},
              {"augment", "identity"},
              {"train", {{"epochs", 1}, {"base_width", 4}, {"n_residual_blocks", 1}, {"disc_widths", {4, 8}}}},
              {"n_runs", n_runs},
              {"base_seed", 5},
              {"out", out},
              {"extractor", {{"kind", "random"}, {"seed", 1}, {"width", 8}}},
              {"top_k", 2}};
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

int run_cli(const std::string& args, std::string* output = nullptr) {
  const auto log = fs::temp_directory_path() / "cyclead_cli_output.txt";
  const std::string cmd = std::string(CYCLEAD_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) {
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    *output = ss.str();
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---- manifest ----

TEST(Manifest, ParseSyntheticAndDefaults) {
  const auto dir = fresh_dir("manifest");
  auto j = tiny_manifest_json("results");
  j.erase("n_runs");
  write_json(dir / "m.json", j);
  const auto m = load_experiment_manifest(dir / "m.json");
  EXPECT_EQ(m.n_runs, 5);
  EXPECT_EQ(m.out, dir / "results");
  ASSERT_TRUE(std::holds_alternative<SyntheticSpec>(m.dataset));
  EXPECT_EQ(std::get<SyntheticSpec>(m.dataset).resolution, 8);
  EXPECT_EQ(m.train.generator.resolution, 8);
  EXPECT_EQ(m.train.discriminator.widths, (std::vector<int>{4, 8}));
  EXPECT_EQ(m.extractor.kind, ExtractorChoice::Kind::random);
  const auto back = experiment_manifest_from_json(to_json(m));
  EXPECT_EQ(to_json(back), to_json(m));
}

TEST(Manifest, Errors) {
  auto j = tiny_manifest_json("o");
  j["colour"] = true;
  EXPECT_THROW(experiment_manifest_from_json(j), ConfigError);
  j = tiny_manifest_json("o");
  j["n_runs"] = 0;
  EXPECT_THROW(experiment_manifest_from_json(j), ConfigError);
  j = tiny_manifest_json("o");
  j["augment"] = "spin";
  EXPECT_THROW(experiment_manifest_from_json(j), ConfigError);
  j = tiny_manifest_json("o");
  j.erase("dataset");
  EXPECT_THROW(experiment_manifest_from_json(j), ConfigError);
  EXPECT_THROW(load_experiment_manifest("/nonexistent/m.json"), ConfigError);
}

// ---- experiment driver ----

class TinyExperiment : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(fresh_dir("tiny"));
    write_json(*dir_ / "m.json", tiny_manifest_json("out"));
    result_ = new ExperimentResult(run_experiment(load_experiment_manifest(*dir_ / "m.json")));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete dir_;
  }
  static fs::path* dir_;
  static ExperimentResult* result_;
};
fs::path* TinyExperiment::dir_ = nullptr;
ExperimentResult* TinyExperiment::result_ = nullptr;

TEST_F(TinyExperiment, Layout) {
  const auto out = *dir_ / "out";
  EXPECT_TRUE(fs::exists(out / "manifest.json"));
  EXPECT_TRUE(fs::exists(out / "report.json"));
  EXPECT_TRUE(fs::exists(out / "report.txt"));
  for (int i = 0; i < 2; ++i) {
    const auto run = out / ("run_" + std::to_string(i));
    for (const char* f : {"run.json", "split.json", "scores.csv", "metrics.json", "log/train_log.csv",
                          "ckpt/epoch_0001.ckpt", "figs/hist_sse.png", "figs/hist_fid.png"})
      EXPECT_TRUE(fs::exists(run / f)) << run / f;
    int top = 0, bottom = 0;
    for (const auto& e : fs::directory_iterator(run / "figs")) {
      const auto n = e.path().filename().string();
      top += n.rfind("top_", 0) == 0;
      bottom += n.rfind("bottom_", 0) == 0;
    }
    EXPECT_EQ(top, 2);
    EXPECT_EQ(bottom, 2);
    const auto split = read_split_record(run / "split.json");
    EXPECT_EQ(split.seed, 5u + static_cast<std::uint64_t>(i));
    const auto scores = read_scores(run / "scores.csv");
    EXPECT_EQ(scores.records.size(), split.test_ids.size());
    EXPECT_EQ(scores.checkpoint_sha256, sha256_file(run / "ckpt" / "epoch_0001.ckpt"));
  }
  EXPECT_FALSE(fs::exists(out / "run_2"));
}

TEST_F(TinyExperiment, ReportCells) {
  const auto& rep = result_->report;
  EXPECT_EQ(rep.seeds, (std::vector<std::uint64_t>{5, 6}));
  ASSERT_EQ(rep.cells.count(ScoreMetric::sse), 1u);
  ASSERT_EQ(rep.cells.count(ScoreMetric::fid), 1u);
  EXPECT_EQ(rep.cells.at(ScoreMetric::sse).auc.values.size(), 2u);
  EXPECT_EQ(read_report(*dir_ / "out" / "report.json"), rep);
  const auto text = slurp(*dir_ / "out" / "report.txt");
  EXPECT_EQ(text, render_table(rep));
}

TEST_F(TinyExperiment, RegeneratedReportIsIdentical) {
  EXPECT_EQ(regenerate_report(*dir_ / "out"), result_->report);
}

TEST_F(TinyExperiment, DeterministicRerun) {
  const auto dir = fresh_dir("tiny_rerun");
  write_json(dir / "m.json", tiny_manifest_json("out"));
  const auto again = run_experiment(load_experiment_manifest(dir / "m.json"));
  EXPECT_EQ(again.report, result_->report);
  EXPECT_EQ(slurp(dir / "out" / "run_1" / "scores.csv"), slurp(*dir_ / "out" / "run_1" / "scores.csv"));
}

TEST(Experiment, FiveRunsGiveFiveValues) {
  const auto dir = fresh_dir("five");
  auto j = tiny_manifest_json("out", 5);
  j.erase("extractor");
  write_json(dir / "m.json", j);
  const auto res = run_experiment(load_experiment_manifest(dir / "m.json"));
  EXPECT_EQ(res.report.cells.at(ScoreMetric::sse).zfn.values.size(), 5u);
  EXPECT_EQ(res.report.cells.count(ScoreMetric::fid), 0u);
}

TEST(Experiment, StageFailureNamesStage) {
  const auto dir = fresh_dir("failure");
  auto j = tiny_manifest_json("out");
  j["dataset"] = "no_such_dataset";
  write_json(dir / "m.json", j);
  try {
    run_experiment(load_experiment_manifest(dir / "m.json"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::config);
    EXPECT_NE(std::string(e.what()).find("dataset"), std::string::npos) << e.what();
  }
}

TEST(Experiment, RunFailureKeepsEarlierRuns) {
  const auto dir = fresh_dir("partial");
  // 3 abnormal images: run 0 ok; minority 3 >= 2 so splits work; make the
  // second run fail by pre-creating a file where its directory should go
  auto j = tiny_manifest_json("out");
  write_json(dir / "m.json", j);
  fs::create_directories(dir / "out");
  std::ofstream(dir / "out" / "run_1") << "blocker";
  try {
    run_experiment(load_experiment_manifest(dir / "m.json"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("run 1"), std::string::npos) << e.what();
  } catch (const std::exception& e) {
    ADD_FAILURE() << "untyped error: " << e.what();
  }
  EXPECT_TRUE(fs::exists(dir / "out" / "run_0" / "scores.csv"));
}

// ---- demo reconstruction ----

TEST(Demo, WritesPanelsAndResamples) {
  const auto dir = fresh_dir("demo");
  write_json(dir / "m.json", tiny_manifest_json("out", 1));
  run_experiment(load_experiment_manifest(dir / "m.json"));
  const auto ckpt = dir / "out" / "run_0" / "ckpt" / "epoch_0001.ckpt";
  Image img(20, 20, 3, 0.4f);
  write_image(dir / "in.png", img);
  const auto e = FeatureExtractor::random(3, 0, 8);
  const auto res = demo_reconstruct(ckpt, dir / "in.png", dir / "demo", &e);
  EXPECT_FALSE(res.notices.empty());
  for (const char* f : {"original.png", "generated.png", "difference.png", "triptych.png", "scores.txt"})
    EXPECT_TRUE(fs::exists(dir / "demo" / f)) << f;
  EXPECT_TRUE(res.fid.has_value());
  EXPECT_EQ(res.reconstruction.original.height, 8);
  EXPECT_THROW(demo_reconstruct(dir / "missing.ckpt", dir / "in.png", dir / "demo2"), DataError);
}

TEST(Figures, DifferenceImageAndTriptych) {
  const auto dir = fresh_dir("figs");
  Image a(4, 4, 3, 0.2f), b = a;
  b.at(1, 2, 0) = 0.9f;
  const auto map = difference_map(a, b);
  const auto di = difference_image(map);
  EXPECT_EQ(di.height, 4);
  EXPECT_FLOAT_EQ(di.at(1, 2, 0), 1.0f);
  EXPECT_FLOAT_EQ(di.at(0, 0, 0), 0.0f);
  write_triptych(dir / "t.png", Reconstruction{a, b, "x", Label::abnormal}, 32);
  const auto back = read_image(dir / "t.png", false);
  EXPECT_EQ(back.height, 32);
  EXPECT_EQ(back.width, 3 * 32 + 2 * 4);  // panels plus two 4px white gaps
  EXPECT_FLOAT_EQ(back.at(0, 33, 0), 1.0f);
  EXPECT_NEAR(back.at(0, 0, 0), 0.2f, 1.0f / 255);
}

// ---- command line ----

TEST(Cli, VersionAndUsage) {
  std::string out;
  EXPECT_EQ(run_cli("--version", &out), 0);
  EXPECT_NE(out.find("checkpoint"), std::string::npos) << out;
  EXPECT_EQ(run_cli("train --bogus-flag"), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
}

TEST(Cli, ExitCodes) {
  const auto dir = fresh_dir("cli_codes");
  // configuration error: unknown key in the train config
  write_json(dir / "bad.json", json{{"epochs", 1}, {"wat", 3}});
  EXPECT_EQ(run_cli("train --config " + (dir / "bad.json").string() + " --data " + dir.string() + " --out " +
                    (dir / "o").string()),
            2);
  // data error: unreadable scores
  std::ofstream(dir / "s.csv") << "source_id,label,sse,fid\nx,normal,abc,\n";
  EXPECT_EQ(run_cli("calibrate --scores " + (dir / "s.csv").string()), 3);
  // data error: missing checkpoint
  EXPECT_EQ(run_cli("reconstruct --checkpoint " + (dir / "none.ckpt").string() + " --image x.png --out " +
                    (dir / "r").string()),
            3);
  // calibration on a single-class file is a data error
  std::ofstream(dir / "one.csv") << "source_id,label,sse,fid\nx,normal,1,\ny,normal,2,\n";
  EXPECT_EQ(run_cli("calibrate --scores " + (dir / "one.csv").string() + " --policy acc"), 3);
}

TEST(Cli, EndToEndCommands) {
  const auto dir = fresh_dir("cli_flow");
  std::string out;
  ASSERT_EQ(run_cli("synth --out " + (dir / "data").string() +
                        " --resolution 8 --n-normal 6 --n-abnormal 4 --size-fraction 0.3 --seed 2",
                    &out),
            0)
      << out;
  EXPECT_TRUE(fs::exists(dir / "data" / "normal"));
  EXPECT_TRUE(fs::exists(dir / "data" / "abnormal"));
  write_json(dir / "cfg.json", json{{"epochs", 1}, {"resolution", 8}, {"base_width", 4}, {"n_residual_blocks", 1},
                                    {"disc_widths", {4, 8}}});
  ASSERT_EQ(run_cli("train --config " + (dir / "cfg.json").string() + " --data " + (dir / "data").string() +
                        " --out " + (dir / "run").string() + " --augment identity",
                    &out),
            0)
      << out;
  const auto ckpt = dir / "run" / "ckpt" / "epoch_0001.ckpt";
  ASSERT_TRUE(fs::exists(ckpt));
  ASSERT_TRUE(fs::exists(dir / "run" / "split.json"));
  ASSERT_EQ(run_cli("score --checkpoint " + ckpt.string() + " --data " + (dir / "data").string() + " --split " +
                        (dir / "run" / "split.json").string() + " --out " + (dir / "run" / "scores.csv").string() +
                        " --extractor random",
                    &out),
            0)
      << out;
  const auto scores = read_scores(dir / "run" / "scores.csv");
  EXPECT_EQ(scores.records.size(), 4u);
  EXPECT_TRUE(scores.records[0].fid.has_value());
  EXPECT_EQ(run_cli("calibrate --scores " + (dir / "run" / "scores.csv").string() + " --policy zfn --metric fid",
                    &out),
            0)
      << out;
  EXPECT_EQ(run_cli("evaluate --scores " + (dir / "run" / "scores.csv").string() + " --out " +
                        (dir / "eval" / "metrics").string(),
                    &out),
            0)
      << out;
  EXPECT_TRUE(fs::exists(dir / "eval" / "metrics.json"));
  EXPECT_TRUE(fs::exists(dir / "eval" / "metrics.txt"));
  fs::create_directories(dir / "exp" / "run_0");
  fs::copy_file(dir / "run" / "scores.csv", dir / "exp" / "run_0" / "scores.csv");
  EXPECT_EQ(run_cli("report --runs " + (dir / "exp").string() + " --out " + (dir / "rep").string(), &out), 0) << out;
  EXPECT_TRUE(fs::exists(dir / "rep" / "report.txt"));
  const auto img = dir / "data" / "abnormal";
  const auto first = fs::directory_iterator(img)->path();
  EXPECT_EQ(run_cli("reconstruct --checkpoint " + ckpt.string() + " --image " + first.string() + " --out " +
                        (dir / "demo").string(),
                    &out),
            0)
      << out;
  EXPECT_TRUE(fs::exists(dir / "demo" / "triptych.png"));
}

TEST(Cli, ExperimentCommand) {
  const auto dir = fresh_dir("cli_experiment");
  write_json(dir / "m.json", tiny_manifest_json("out", 1));
  std::string out;
  EXPECT_EQ(run_cli("experiment --manifest " + (dir / "m.json").string(), &out), 0) << out;
  EXPECT_TRUE(fs::exists(dir / "out" / "report.txt"));
  EXPECT_NE(out.find("ZFN"), std::string::npos) << out;
}
