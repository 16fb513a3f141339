#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "mcgnn/cli.hpp"
#include "support.hpp"

namespace mcgnn {
namespace {

using testing::TempDir;
namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "mcgnn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

const char* kSpec = R"({
  "classes": 3, "separation": 8, "noise": 1, "train": 30, "val": 15, "test": 15, "seed": 4,
  "cues": [{"name": "face", "dim": 6, "mean_nodes": 2, "cap_train": 4, "cap_eval": 6},
           {"name": "object", "dim": 4, "mean_nodes": 2, "cap_train": 4, "cap_eval": 6}]
})";

/// Generated once per test binary; each test copies what it needs.
class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new TempDir("mcgnn-cli");
    std::ofstream(root_->path() / "spec.json") << kSpec;
    const auto r = run({"gen-synthetic", "--spec", (root_->path() / "spec.json").string(), "--out",
                        (root_->path() / "data").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete root_;
    root_ = nullptr;
  }
  static std::string manifest() { return (root_->path() / "data" / "manifest.json").string(); }
  static std::string spec() { return (root_->path() / "spec.json").string(); }

  static std::vector<std::string> quick_train(const fs::path& out, const std::string& epochs) {
    return {"train", "--data", manifest(), "--out", out.string(), "--epochs", epochs,
            "--hidden", "8", "-k", "2", "--lr", "0.01", "--seed", "3"};
  }

  static TempDir* root_;
};

TempDir* CliTest::root_ = nullptr;

TEST_F(CliTest, TrainDefaults) {
  const cli::TrainArgs a;
  EXPECT_EQ(a.lr, 1e-4);
  EXPECT_EQ(a.steps, 4u);
  EXPECT_EQ(a.hidden, 128u);
  EXPECT_EQ(a.epochs, 20u);
  const auto r = run({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("0.0001"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("128"), std::string::npos);
}

TEST_F(CliTest, BadFlagsAreUsageErrorsAndWriteNothing) {
  TempDir dir;
  const auto out = dir / "run";
  EXPECT_EQ(run(quick_train(out, "0")).code, cli::kUsage);
  EXPECT_EQ(run({"train", "--data", manifest()}).code, cli::kUsage);
  EXPECT_EQ(run({"train", "--data", (dir / "nope.json").string(), "--out", out.string()}).code,
            cli::kUsage);
  EXPECT_EQ(run({"train", "--data", manifest(), "--out", out.string(), "--lr", "0"}).code,
            cli::kUsage);
  EXPECT_EQ(run({"train", "--data", manifest(), "--out", out.string(), "--lr", "-1"}).code,
            cli::kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(CliTest, TrainWritesLogAndCheckpoints) {
  TempDir dir;
  const auto out = dir / "run";
  const auto r = run(quick_train(out, "3"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(out / "train_log.jsonl"), 3u);
  for (const char* f : {"epoch001.ckpt", "epoch002.ckpt", "epoch003.ckpt", "last.ckpt"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  std::ifstream log(out / "train_log.jsonl");
  std::string first;
  std::getline(log, first);
  const auto rec = nlohmann::json::parse(first);
  EXPECT_EQ(rec.at("epoch"), 1);
  EXPECT_TRUE(rec.contains("loss"));
  EXPECT_TRUE(rec.contains("val_accuracy"));
  EXPECT_EQ(load_checkpoint(out / "last.ckpt").meta.epochs_completed, 3u);
}

TEST_F(CliTest, ResumedTrainingEqualsUninterrupted) {
  TempDir dir;
  ASSERT_EQ(run(quick_train(dir / "full", "5")).code, 0);
  ASSERT_EQ(run(quick_train(dir / "part", "3")).code, 0);
  const auto r = run({"train", "--data", manifest(), "--out", (dir / "part").string(), "--epochs",
                      "5", "--resume-from", (dir / "part" / "epoch003.ckpt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir / "part" / "last.ckpt"), slurp(dir / "full" / "last.ckpt"));
  EXPECT_EQ(slurp(dir / "part" / "train_log.jsonl"), slurp(dir / "full" / "train_log.jsonl"));
}

TEST_F(CliTest, ResumeRejectsConflicts) {
  TempDir dir;
  ASSERT_EQ(run(quick_train(dir / "a", "2")).code, 0);
  const auto ck = (dir / "a" / "last.ckpt").string();
  auto resume = [&](std::vector<std::string> extra) {
    std::vector<std::string> args{"train", "--data", manifest(), "--out", (dir / "b").string(),
                                  "--resume-from", ck};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args).code;
  };
  EXPECT_EQ(resume({"--epochs", "2"}), cli::kUsage);
  EXPECT_EQ(resume({"--epochs", "4", "--seed", "9"}), cli::kUsage);
  EXPECT_EQ(resume({"--epochs", "4", "--hidden", "16"}), cli::kUsage);
  EXPECT_FALSE(fs::exists(dir / "b"));
}

TEST_F(CliTest, EvalIsDeterministicAndMatchesLibrary) {
  TempDir dir;
  ASSERT_EQ(run(quick_train(dir / "m", "2")).code, 0);
  const auto ck = (dir / "m" / "last.ckpt").string();
  const auto a = run({"eval", "--checkpoint", ck, "--data", manifest(), "--partition", "test",
                      "--out", (dir / "eval.json").string()});
  const auto b = run({"eval", "--checkpoint", ck, "--data", manifest(), "--partition", "test"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto lib = evaluate(load_dataset(manifest()).partition("test"), load_checkpoint(ck).params);
  const auto j = nlohmann::json::parse(slurp(dir / "eval.json"));
  EXPECT_EQ(j.at("accuracy").get<double>(), lib.accuracy);
  EXPECT_EQ(j.at("confusion").get<std::vector<std::vector<std::size_t>>>(), lib.confusion);
  EXPECT_NE(a.out.find("true\\pred"), std::string::npos);
}

TEST_F(CliTest, EvalOnMemorizedTrainingSetIsPerfect) {
  TempDir dir;
  const auto r = run({"train", "--data", manifest(), "--out", (dir / "m").string(), "--epochs",
                      "15", "--hidden", "16", "-k", "2", "--lr", "0.01", "--seed", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto e = run({"eval", "--checkpoint", (dir / "m" / "last.ckpt").string(), "--data",
                      manifest(), "--partition", "train"});
  ASSERT_EQ(e.code, 0);
  EXPECT_NE(e.out.find("accuracy: 1.000000"), std::string::npos) << e.out;
}

TEST_F(CliTest, EvalFingerprintMismatchIsDataError) {
  TempDir dir;
  ASSERT_EQ(run(quick_train(dir / "m", "1")).code, 0);
  std::string other = kSpec;
  other.replace(other.find("\"dim\": 6"), 8, "\"dim\": 5");
  std::ofstream(dir / "other.json") << other;
  ASSERT_EQ(run({"gen-synthetic", "--spec", (dir / "other.json").string(), "--out",
                 (dir / "other").string()}).code, 0);
  const auto r = run({"eval", "--checkpoint", (dir / "m" / "last.ckpt").string(), "--data",
                      (dir / "other" / "manifest.json").string()});
  EXPECT_EQ(r.code, cli::kData);
  EXPECT_NE(r.err.find("fingerprint"), std::string::npos) << r.err;
}

TEST_F(CliTest, PredictMatchesForwardAndVote) {
  TempDir dir;
  ASSERT_EQ(run(quick_train(dir / "m", "2")).code, 0);
  const auto ck_path = (dir / "m" / "last.ckpt").string();
  const Checkpoint ck = load_checkpoint(ck_path);
  const Dataset data = load_dataset(manifest());
  DatasetManifest m = data.manifest;
  for (std::size_t i = 0; i < 5; ++i) {
    const GraphSample& s = data.partition("test")[i];
    std::ofstream(dir / "rec.json") << record_to_line(s, m) << "\n";
    const auto r = run({"predict", "--checkpoint", ck_path, "--record", (dir / "rec.json").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto fr = forward(cap_cues(s, ck.params.cues, CapMode::eval), ck.params);
    EXPECT_NE(r.out.find("prediction: " + ck.classes[fr.vote.predicted]), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("mean probabilities:"), std::string::npos);
  }
  // Single node: its own argmax decides.
  GraphSample one{"one", 0, {{data.partition("test")[0].features[0].empty()
                                  ? Vector(6, 0.5)
                                  : data.partition("test")[0].features[0][0]},
                             {}}};
  std::ofstream(dir / "one.json") << record_to_line(one, m) << "\n";
  const auto r = run({"predict", "--checkpoint", ck_path, "--record", (dir / "one.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto probs = forward(one, ck.params).probs;
  EXPECT_NE(r.out.find("prediction: " + ck.classes[argmax(probs.row(0))]), std::string::npos);

  std::ofstream(dir / "bad.json") << R"({"id":"x","label":0,"cues":{"face":[[1,2]]}})" << "\n";
  EXPECT_EQ(run({"predict", "--checkpoint", ck_path, "--record", (dir / "bad.json").string()}).code,
            cli::kData);
}

TEST_F(CliTest, GenSyntheticIsStable) {
  TempDir dir;
  ASSERT_EQ(run({"gen-synthetic", "--spec", spec(), "--out", (dir / "a").string()}).code, 0);
  for (const char* f : {"manifest.json", "train.jsonl", "val.jsonl", "test.jsonl"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(root_->path() / "data" / f)) << f;
  }
  std::ofstream(dir / "bad.json") << R"({"classes": 3, "noise": 0, "cues": [{"name": "f"}]})";
  EXPECT_EQ(run({"gen-synthetic", "--spec", (dir / "bad.json").string(), "--out",
                 (dir / "b").string()}).code, cli::kUsage);
  EXPECT_FALSE(fs::exists(dir / "b"));
}

TEST_F(CliTest, GradcheckExitCodes) {
  const auto ok = run({"gradcheck"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("PASS"), std::string::npos);
  EXPECT_NE(ok.out.find("gru.update.w"), std::string::npos);
  const auto strict = run({"gradcheck", "--tolerance", "1e-300"});
  EXPECT_EQ(strict.code, cli::kNumerical);
  EXPECT_NE(strict.out.find("FAIL"), std::string::npos);
  EXPECT_EQ(run({"gradcheck", "--dims", "5,7", "--nodes", "3"}).code, cli::kUsage);
}

TEST_F(CliTest, ExperimentWritesTenRunReport) {
  TempDir dir;
  nlohmann::json cfg{{"data", manifest()}, {"out", (dir / "exp").string()},
                     {"runs", 10},         {"epochs", 2},
                     {"hidden", 8},        {"steps", 2},
                     {"lr", 0.01},         {"seed", 0}};
  std::ofstream(dir / "exp.json") << cfg.dump();
  const auto r = run({"--threads", "2", "experiment", "--config", (dir / "exp.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const ExperimentReport rep = load_report(dir / "exp" / "report.json");
  EXPECT_EQ(rep.runs.size(), 10u);
  EXPECT_TRUE(fs::exists(dir / "exp" / "report.txt"));
  EXPECT_NE(r.out.find("Avg_V"), std::string::npos);

  cfg["runs"] = 0;
  std::ofstream(dir / "bad.json") << cfg.dump();
  EXPECT_EQ(run({"experiment", "--config", (dir / "bad.json").string()}).code, cli::kUsage);
}

TEST_F(CliTest, ImportProducesLoadableDataset) {
  TempDir dir;
  fs::create_directories(dir / "raw" / "a");
  fs::create_directories(dir / "raw" / "b");
  std::ofstream(dir / "raw" / "labels.tsv") << "a\tpos\ttrain\nb\tneg\ttest\n";
  std::ofstream(dir / "raw" / "a" / "face.txt") << "1 2 3\n4 5 6\n";
  std::ofstream(dir / "raw" / "b" / "face.txt") << "7 8 9\n";
  const auto r = run({"import", "--dir", (dir / "raw").string(), "--out", (dir / "ds").string(),
                      "--classes", "neg,pos"});
  ASSERT_EQ(r.code, 0) << r.err;
  const Dataset d = load_dataset(dir / "ds" / "manifest.json");
  EXPECT_EQ(d.manifest.classes, (std::vector<std::string>{"neg", "pos"}));
  EXPECT_EQ(d.partition("train")[0].label, 1u);
  EXPECT_EQ(d.partition("test")[0].features[0][0], (Vector{7, 8, 9}));
}

TEST(CliEnv, ThreadsFromEnvironment) {
  ::setenv("MCGNN_THREADS", "3", 1);
  EXPECT_EQ(cli::default_threads(), 3u);
  ::setenv("MCGNN_THREADS", "zero", 1);
  EXPECT_EQ(cli::default_threads(), 1u);
  ::unsetenv("MCGNN_THREADS");
  EXPECT_EQ(cli::default_threads(), 1u);
}

TEST(CliBinary, ProcessExitCodes) {
  auto status = [](const std::string& args) {
    const int s = std::system((std::string(MCGNN_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status("train --epochs 0"), cli::kUsage);
  EXPECT_EQ(status("gradcheck --hidden 4 --steps 2"), 0);
}

}  // namespace
}  // namespace mcgnn
