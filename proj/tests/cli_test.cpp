#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "heal/cli.hpp"

namespace fs = std::filesystem;
using heal::jsonio::read_file;
using heal::jsonio::write_file;

namespace {

const std::string kSamples = HEAL_SAMPLES_DIR;

struct Run {
  int code;
  std::string out, err;
};

Run heal_run(std::vector<std::string> args) {
  args.insert(args.begin(), "heal");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = heal::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("heal_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  [[nodiscard]] std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, ConstructAttachEvaluatePipeline) {
  auto r = heal_run({"construct", "--raw", kSamples + "/raw_responses.jsonl", "--out", path("bench.jsonl"),
                     "--log", path("log.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto log = nlohmann::json::parse(read_file(path("log.json")));
  EXPECT_EQ(log["drops"]["duplicate"], 3);
  EXPECT_EQ(log["prompts_too_few"], 1);

  const auto manifest = nlohmann::json::parse(read_file(path("bench.jsonl.manifest.json")));
  EXPECT_EQ(manifest["command"], "construct");
  EXPECT_EQ(manifest["config"]["min_hypotheses"], 8);
  EXPECT_EQ(manifest["input_hashes"].size(), 1u);
  EXPECT_TRUE(manifest.contains("timestamp"));

  r = heal_run({"attach", "--dataset", path("bench.jsonl"), "--scores", kSamples + "/scores.jsonl",
                "--out", path("scored.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(path("scored.jsonl")), read_file(kSamples + "/scored.jsonl"));

  r = heal_run({"evaluate", "--dataset", path("scored.jsonl"), "--gold", "helpfulness", "--model",
                "both", "--out", path("eval.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = nlohmann::json::parse(read_file(path("eval.json")));
  ASSERT_EQ(report["results"].size(), 2u);
  EXPECT_EQ(report["results"][0]["model"], "ll");
  EXPECT_EQ(report["results"][1]["model"], "ll-norm");
  EXPECT_EQ(report["results"][0]["ra_counts"]["evaluated"], 2);
}

TEST_F(CliTest, OutputsAreByteIdenticalAcrossRuns) {
  for (const char* name : {"a.jsonl", "b.jsonl"}) {
    ASSERT_EQ(heal_run({"construct", "--raw", kSamples + "/raw_responses.jsonl", "--out", path(name)}).code, 0);
  }
  EXPECT_EQ(read_file(path("a.jsonl")), read_file(path("b.jsonl")));
  for (const char* name : {"a.json", "b.json"}) {
    ASSERT_EQ(heal_run({"multidim", "--dataset", kSamples + "/scored.jsonl", "--out", path(name)}).code, 0);
  }
  EXPECT_EQ(read_file(path("a.json")), read_file(path("b.json")));
}

TEST_F(CliTest, ConfigFileSuppliesOptions) {
  write_file(path("flat.json"), "{\"dataset\":\"" + kSamples + "/scored.jsonl\",\"gold\":\"coherence\"}");
  auto r = heal_run({"evaluate", "--config", path("flat.json"), "--model", "ll-norm"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("model=ll-norm gold=gold:coherence"), std::string::npos);

  write_file(path("nested.json"),
             "{\"evaluate\":{\"dataset\":\"" + kSamples + "/scored.jsonl\",\"gold\":\"correctness\"}}");
  r = heal_run({"--config", path("nested.json"), "evaluate"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("gold=gold:correctness"), std::string::npos);

  write_file(path("bad.json"), "{\"no-such-option\":1}");
  EXPECT_EQ(heal_run({"evaluate", "--config", path("bad.json"), "--dataset", "x", "--gold", "y"}).code, 2);
  write_file(path("broken.json"), "{");
  EXPECT_EQ(heal_run({"evaluate", "--config", path("broken.json")}).code, 2);
}

TEST_F(CliTest, InputErrorsExitTwo) {
  EXPECT_EQ(heal_run({}).code, 2);
  EXPECT_EQ(heal_run({"evaluate", "--dataset", path("missing.jsonl"), "--gold", "g"}).code, 2);
  EXPECT_EQ(heal_run({"evaluate", "--dataset", kSamples + "/scored.jsonl", "--gold", "nope"}).code, 2);
  EXPECT_EQ(heal_run({"evaluate", "--dataset", kSamples + "/scored.jsonl", "--gold", "g", "--model", "x"}).code, 2);
  EXPECT_EQ(heal_run({"intersect", "--dataset", kSamples + "/scored.jsonl", "--gold", "helpfulness",
                      "--out", path("x.csv")}).code,
            2);
  write_file(path("bad.jsonl"), "{\"kind\":\"prompt\"}\n");
  const auto r = heal_run({"evaluate", "--dataset", path("bad.jsonl"), "--gold", "g"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
  EXPECT_EQ(heal_run({"--help"}).code, 0);
}

TEST_F(CliTest, AllSkippedExitsThree) {
  write_file(path("flat.jsonl"),
             "{\"kind\":\"prompt\",\"prompt_id\":\"p\",\"prompt_text\":\"\"}\n"
             "{\"kind\":\"hypothesis\",\"prompt_id\":\"p\",\"hypothesis_id\":\"a\",\"token_logprobs\":[-1],\"gold_scores\":{\"g\":1}}\n"
             "{\"kind\":\"hypothesis\",\"prompt_id\":\"p\",\"hypothesis_id\":\"b\",\"token_logprobs\":[-2],\"gold_scores\":{\"g\":1}}\n");
  const auto r = heal_run({"evaluate", "--dataset", path("flat.jsonl"), "--gold", "g"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("AllTied: 1"), std::string::npos) << r.err;
}

TEST_F(CliTest, NumericFailureExitsFour) {
  write_file(path("spec.json"),
             R"({"loss": {"method": "RewardBT", "learning_rate": 1e308, "steps": 10}})");
  const auto r = heal_run({"toylab", "--spec", path("spec.json"), "--out", path("r.json")});
  EXPECT_EQ(r.code, 4) << r.err;
}

TEST_F(CliTest, IntersectDensitiesJoint) {
  const auto data = kSamples + "/scored.jsonl";
  auto r = heal_run({"intersect", "--dataset", data, "--gold", "helpfulness", "--method", "ll=ll",
                     "--method", "norm=ll-norm", "--out", path("u.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(path("u.csv")).substr(0, 13), "subset,count\n");
  EXPECT_EQ(heal_run({"intersect", "--dataset", data, "--gold", "helpfulness", "--method", "a+b=ll",
                      "--out", path("u2.csv")}).code,
            2);

  r = heal_run({"densities", "--dataset", data, "--indicator", "ll-norm", "--bins", "4", "--kde",
                "--out", path("d.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_file(path("d.csv")).rfind("# median=", 0), 0u);
  EXPECT_TRUE(fs::exists(path("d.csv.kde.csv")));

  r = heal_run({"joint", "--dataset", data, "--gold", "verbosity", "--out", path("j.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("j.csv.gold.csv")));
  EXPECT_TRUE(fs::exists(path("j.csv.manifest.json")));
}

TEST_F(CliTest, ToylabReportIsDeterministic) {
  write_file(path("spec.json"), R"({"gold": {"kind": "teacher", "seed": 1}, "loss": {"steps": 20}})");
  for (const char* name : {"a.json", "b.json"}) {
    const auto r = heal_run({"toylab", "--spec", path("spec.json"), "--out", path(name)});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(read_file(path("a.json")), read_file(path("b.json")));
  const auto report = nlohmann::json::parse(read_file(path("a.json")));
  EXPECT_EQ(report["loss_trace"].size(), 20u);
  EXPECT_EQ(report["config"]["gold"]["kind"], "teacher");
  EXPECT_EQ(report["upset"]["methods"][0], "initial");
}

TEST(ContentHash, KnownDigest) {
  EXPECT_EQ(heal::cli::content_hash(""), "fnv1a64:cbf29ce484222325");
  EXPECT_EQ(heal::cli::content_hash("a"), "fnv1a64:af63dc4c8601ec8c");
}
