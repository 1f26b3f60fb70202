// Copyright 2026 The DBCL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dbcl/cli.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "dbcl/errors.h"

namespace dbcl::cli {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("dbcl_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

const std::vector<std::string> kSmall = {"--set", "samples=300", "--set", "test_samples=60",
                                         "--set", "dim=16",      "--set", "classes=3",
                                         "--set", "hidden=8",    "--set", "rounds=3",
                                         "--set", "m=3"};

std::vector<std::string> with_small(std::vector<std::string> head) {
  head.insert(head.end(), kSmall.begin(), kSmall.end());
  return head;
}

// ---------------------------------------------------------------------------

TEST(RunConfigTest, ParsesKeysCommentsAndBlankLines) {
  const RunConfig rc = RunConfig::parse(
      "# header\n\nalgorithm = dsgd  # trailing\nm=4\nlr = 0.5\nsketch_schedule = 2, 4\n"
      "sketch_last_layer = true\nmodel = linear\ndataset = property\nseed = 9\n");
  EXPECT_EQ(rc.algorithm, "dsgd");
  EXPECT_EQ(rc.m, 4u);
  EXPECT_EQ(rc.lr, 0.5);
  EXPECT_EQ(rc.sketch_schedule, (std::vector<std::size_t>{2, 4}));
  EXPECT_TRUE(rc.sketch_last_layer);
  EXPECT_EQ(rc.model, "linear");
  EXPECT_EQ(rc.dataset, "property");
  EXPECT_EQ(rc.seed, 9u);
  EXPECT_TRUE(rc.is_set("m"));
  EXPECT_FALSE(rc.is_set("rounds"));
}

TEST(RunConfigTest, UnknownKeyIsNamed) {
  try {
    RunConfig::parse("rounds = 3\nlearning_rate = 0.1\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
}

TEST(RunConfigTest, RejectsMalformedInput) {
  EXPECT_THROW(RunConfig::parse("rounds 3\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("rounds = three\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("rounds = -1\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("lr = fast\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("lr = nan\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("algorithm = sgd\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("sketch_kind = gaussian\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("model = resnet\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("dataset = mnist\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("dataset = idx:images-only\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("sketch_last_layer = maybe\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("m = 2\nm = 3\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("q = 2\nsketch_schedule = 2,4\n"), ConfigError);
  EXPECT_THROW(RunConfig::parse("sketch_schedule =\n"), ConfigError);
}

TEST(RunConfigTest, EmitRoundTrips) {
  RunConfig rc = RunConfig::parse("lr = 0.1\nsketch_schedule = 2,4,8\nout = x.jsonl\nmu = 2.5\n");
  const std::string text = rc.emit();
  EXPECT_EQ(RunConfig::parse(text).emit(), text);
  EXPECT_NE(text.find("lr = 0.1\n"), std::string::npos);
  EXPECT_NE(text.find("sketch_schedule = 2,4,8\n"), std::string::npos);
}

TEST(RunConfigTest, CanonicalFileReEmitsModuloComments) {
  const std::string body = RunConfig{}.emit();
  std::string commented = "# leading comment\n";
  std::istringstream lines(body);
  for (std::string line; std::getline(lines, line);) commented += line + "   # note\n\n";
  EXPECT_EQ(RunConfig::parse(commented).emit(), body);
}

TEST(RunConfigTest, EveryKeyIsAccepted) {
  for (std::string_view key : config_keys()) {
    const std::string k(key);
    const RunConfig defaults;
    std::string value;
    std::istringstream lines(defaults.emit());
    for (std::string line; std::getline(lines, line);) {
      if (line.starts_with(k + " =")) value = line.size() > k.size() + 3 ? line.substr(k.size() + 3) : "";
    }
    if (k == "sketch_schedule") value = "2,4";
    RunConfig rc;
    EXPECT_NO_THROW(rc.set(k, value)) << k;
  }
}

TEST(RunConfigTest, SampleConfigsParse) {
  for (const auto& entry : fs::directory_iterator(DBCL_SOURCE_DIR "/configs")) {
    if (entry.path().extension() != ".cfg") continue;
    const RunConfig rc = RunConfig::load(entry.path().string());
    EXPECT_NO_THROW(to_train_config(rc, false)) << entry.path();
  }
}

TEST(RunConfigTest, TrainConfigMapping) {
  const RunConfig rc = RunConfig::parse("sketch_kind = none\nalgorithm = dsgd\nc = 0.5\n");
  const fed::TrainConfig tc = to_train_config(rc, true);
  EXPECT_FALSE(tc.sketch_kind.has_value());
  EXPECT_EQ(tc.algorithm, fed::Algorithm::kDsgd);
  EXPECT_EQ(tc.participation, 0.5);
  EXPECT_TRUE(tc.timing);
  EXPECT_THROW(to_train_config(RunConfig::parse("c = 1.5\n"), false), ConfigError);
}

TEST(ExperimentTest, OutputWidthFollowsClassCount) {
  RunConfig rc = RunConfig::parse("samples = 50\ntest_samples = 10\ndim = 8\nclasses = 2\nhidden = 4\n");
  Experiment ex = build_experiment(rc);
  EXPECT_EQ(ex.model.loss, nn::LossKind::kSigmoidBce);
  EXPECT_EQ(ex.train.size(), 50u);
  EXPECT_EQ(ex.eval.size(), 10u);
  rc.set("classes", "5");
  EXPECT_EQ(build_experiment(rc).model.loss, nn::LossKind::kSoftmaxCrossEntropy);
}

TEST(ExperimentTest, CnnNeedsSquareFeatures) {
  RunConfig rc = RunConfig::parse("model = cnn\ndim = 30\nsamples = 20\ntest_samples = 5\n");
  EXPECT_THROW(build_experiment(rc), ConfigError);
  rc.set("dim", "784");
  const Experiment ex = build_experiment(rc);
  EXPECT_EQ(ex.train.features.shape(), (Shape4{20, 1, 28, 28}));
}

// ---------------------------------------------------------------------------

TEST(RunTest, TrainIsByteIdenticalAcrossRuns) {
  TempDir dir;
  const auto a = dir / "a.jsonl";
  const auto b = dir / "b.jsonl";
  const auto cfg = dir / "run.cfg";
  std::ofstream(cfg) << "algorithm = fedavg\nrounds = 3\nm = 3\n";
  auto args = with_small({"train", "--config", cfg.string(), "--seed", "7"});
  auto run_a = args, run_b = args;
  run_a.insert(run_a.end(), {"--set", "out=" + a.string()});
  run_b.insert(run_b.end(), {"--set", "out=" + b.string()});
  ASSERT_EQ(invoke(run_a).code, kOk);
  ASSERT_EQ(invoke(run_b).code, kOk);
  const std::string ta = slurp(a);
  EXPECT_FALSE(ta.empty());
  EXPECT_EQ(ta, slurp(b));
  auto run_c = args;
  run_c[4] = "8";
  run_c.insert(run_c.end(), {"--set", "out=" + (dir / "c.jsonl").string()});
  ASSERT_EQ(invoke(run_c).code, kOk);
  EXPECT_NE(ta, slurp(dir / "c.jsonl"));
}

TEST(RunTest, TrainWritesOneRecordPerEvaluation) {
  const Outcome o = invoke(with_small({"train", "--seed", "1"}));
  ASSERT_EQ(o.code, kOk) << o.err;
  std::istringstream lines(o.out);
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line); ++n) {
    EXPECT_TRUE(line.starts_with("{\"round\":" + std::to_string(n + 1) + ",\"phase\":\"eval\""));
    EXPECT_NE(line.find("\"wall_ms\":0.0"), std::string::npos);
  }
  EXPECT_EQ(n, 3u);
}

TEST(RunTest, CsvFlagFlattensMetrics) {
  const Outcome o = invoke(with_small({"train", "--csv"}));
  ASSERT_EQ(o.code, kOk) << o.err;
  EXPECT_TRUE(o.out.starts_with("round,train_loss,eval_loss,eval_accuracy,bytes_down,bytes_up,wall_ms\n"));
  EXPECT_EQ(std::count(o.out.begin(), o.out.end(), '\n'), 4);
}

TEST(RunTest, MalformedConfigExitsTwoNamingKey) {
  TempDir dir;
  const auto cfg = dir / "bad.cfg";
  std::ofstream(cfg) << "rounds = 3\nbogus_key = 1\n";
  const Outcome o = invoke({"train", "--config", cfg.string()});
  EXPECT_EQ(o.code, kConfigError);
  EXPECT_NE(o.err.find("bogus_key"), std::string::npos);
}

TEST(RunTest, ConfigErrorsExitTwo) {
  EXPECT_EQ(invoke({"train", "--config", "/nonexistent/run.cfg"}).code, kConfigError);
  EXPECT_EQ(invoke({"train", "--set", "rounds"}).code, kConfigError);
  EXPECT_EQ(invoke({"train", "--set", "c=2"}).code, kConfigError);
  EXPECT_EQ(invoke({"train", "--seed", "abc"}).code, kConfigError);
  EXPECT_EQ(invoke({"frobnicate"}).code, kConfigError);
  EXPECT_EQ(invoke({}).code, kConfigError);
  EXPECT_EQ(invoke(with_small({"attack-estimate", "--set", "sketch_kind=none"})).code,
            kConfigError);
}

TEST(RunTest, RuntimeFailureExitsThree) {
  TempDir dir;
  const Outcome o =
      invoke({"train", "--set", "dataset=idx:" + (dir / "missing-images").string() + "," +
                                    (dir / "missing-labels").string()});
  EXPECT_EQ(o.code, kRuntimeError);
  EXPECT_NE(o.err.find("error"), std::string::npos);
  const Outcome unwritable =
      invoke(with_small({"train", "--set", "out=" + (dir / "no/such/dir/x.jsonl").string()}));
  EXPECT_EQ(unwritable.code, kRuntimeError);
}

TEST(RunTest, HelpExitsZero) { EXPECT_EQ(invoke({"train", "--help"}).code, kOk); }

TEST(RunTest, VerifyTheoryReportsAllPass) {
  const Outcome o = invoke({"verify-theory", "--seed", "1"});
  EXPECT_EQ(o.code, kOk);
  EXPECT_EQ(o.out.find("FAIL"), std::string::npos);
  EXPECT_NE(o.out.find("estimate error enumeration d=3 s=2 PASS"), std::string::npos);
  EXPECT_EQ(std::count(o.out.begin(), o.out.end(), '\n'), 18);
}

TEST(RunTest, AttackEstimateWritesRecordsAndSummary) {
  const Outcome o = invoke(with_small({"attack-estimate", "--seed", "2"}));
  ASSERT_EQ(o.code, kOk) << o.err;
  EXPECT_NE(o.out.find("{\"round\":1,\"layer\":0,\"method\":\"option1\""), std::string::npos);
  EXPECT_NE(o.out.find("\"method\":\"option2\""), std::string::npos);
  EXPECT_NE(o.out.find("{\"summary\":\"option1_final_quarter_l2_rel\""), std::string::npos);
  EXPECT_NE(o.out.find("{\"summary\":\"final_accuracy\""), std::string::npos);
  EXPECT_EQ(o.out, invoke(with_small({"attack-estimate", "--seed", "2"})).out);
}

TEST(RunTest, IdxDatasetTrains) {
  TempDir dir;
  const std::size_t n = 40;
  std::vector<std::uint8_t> pixels(n * 16), labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<std::uint8_t>(i % 3);
    for (std::size_t j = 0; j < 16; ++j) pixels[i * 16 + j] = static_cast<std::uint8_t>((i * 7 + j * labels[i] * 40) % 256);
  }
  data::write_idx((dir / "img").string(), (dir / "lbl").string(), pixels, 4, 4, labels);
  const Outcome o = invoke({"train", "--set",
                            "dataset=idx:" + (dir / "img").string() + "," + (dir / "lbl").string(),
                            "--set", "samples=30", "--set", "test_samples=10", "--set", "hidden=6",
                            "--set", "rounds=2", "--set", "m=2"});
  EXPECT_EQ(o.code, kOk) << o.err;
  EXPECT_EQ(std::count(o.out.begin(), o.out.end(), '\n'), 2);
}

}  // namespace
}  // namespace dbcl::cli
