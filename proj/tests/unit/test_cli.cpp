#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "railkd/cli.hpp"
#include "railkd/errors.hpp"
#include "test_util.hpp"

using namespace railkd;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t lines(const fs::path& p) {
  const auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// gen-data + a small teacher, shared by the tests below.
const test::TempDir& workspace() {
  static const test::TempDir d("cli");
  static const bool ready = [] {
    EXPECT_EQ(cli({"gen-data", "--task", "pair", "--seed", "3", "--out", (d / "data").string(),
                   "--train-size", "96", "--dev-size", "32", "--test-size", "32", "--ood-size", "32"})
                  .code,
              0);
    const auto r = cli({"train-teacher", "--data", (d / "data").string(), "--out", (d / "teacher").string(),
                        "--layers", "4", "--hidden", "16", "--heads", "2", "--ff", "32", "--epochs", "2"});
    EXPECT_EQ(r.code, 0) << r.err;
    return true;
  }();
  (void)ready;
  return d;
}

std::vector<std::string> distill_args(const fs::path& out, const std::string& method) {
  const auto& w = workspace();
  return {"distill", "--teacher", (w / "teacher").string(), "--data", (w / "data").string(), "--out",
          out.string(), "--method", method, "--layers", "3", "--hidden", "8", "--heads", "2", "--ff", "16",
          "--epochs", "3", "--proj-dim", "16", "--workers", "1"};
}

}  // namespace

TEST(CliGenData, ByteIdenticalUnderSeed) {
  test::TempDir d("gen");
  for (const char* sub : {"a", "b"}) {
    ASSERT_EQ(cli({"gen-data", "--task", "motif", "--seed", "9", "--out", (d / sub).string(), "--train-size",
                   "50", "--dev-size", "20", "--test-size", "20", "--ood-size", "10"})
                  .code,
              0);
  }
  for (const char* f : {"task.json", "train.jsonl", "dev.jsonl", "test.jsonl", "ood.jsonl"}) {
    EXPECT_EQ(slurp(d / "a" / f), slurp(d / "b" / f)) << f;
  }
  EXPECT_EQ(lines(d / "a" / "train.jsonl"), 50u);
  EXPECT_EQ(lines(d / "a" / "dev.jsonl"), 20u);
  EXPECT_EQ(lines(d / "a" / "ood.jsonl"), 10u);
}

TEST(CliGenData, UnknownTaskIsConfigError) {
  test::TempDir d("gen");
  EXPECT_EQ(cli({"gen-data", "--task", "glue", "--out", (d / "x").string()}).code, kExitConfig);
  EXPECT_EQ(cli({"gen-data"}).code, kExitConfig);
  EXPECT_EQ(cli({"no-such-command"}).code, kExitConfig);
}

TEST(CliTrainTeacher, RefusesOverwriteWithoutForce) {
  const auto& w = workspace();
  EXPECT_TRUE(fs::exists(w / "teacher" / "teacher.ckpt"));
  EXPECT_TRUE(fs::exists(w / "teacher" / "manifest.json"));
  const auto before = slurp(w / "teacher" / "teacher.ckpt");
  const auto r = cli({"train-teacher", "--data", (w / "data").string(), "--out", (w / "teacher").string(),
                      "--layers", "4", "--hidden", "16", "--heads", "2", "--ff", "32", "--epochs", "1"});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_EQ(slurp(w / "teacher" / "teacher.ckpt"), before);
}

TEST(CliTrainTeacher, MissingDataIsDataError) {
  test::TempDir d("tt");
  EXPECT_EQ(cli({"train-teacher", "--data", (d / "nothing").string(), "--out", (d / "t").string()}).code,
            kExitData);
}

TEST(CliDistill, InvalidLambdaRejectedBeforeTraining) {
  test::TempDir d("distill");
  auto args = distill_args(d / "run", "rail-l");
  args.insert(args.end(), {"--lambda", "1/2,1/2,-1"});
  const auto r = cli(args);
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_FALSE(fs::exists(d / "run"));
  args = distill_args(d / "run", "rail-x");
  EXPECT_EQ(cli(args).code, kExitConfig);
  EXPECT_FALSE(fs::exists(d / "run"));
}

TEST(CliDistill, RailRunWritesSelectionsAndHeads) {
  test::TempDir d("distill");
  const auto r = cli(distill_args(d / "run", "rail-l"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto seed_dir = d / "run" / "seed_0";
  for (const char* f : {"manifest.json", "selections.jsonl", "steps.csv", "student.ckpt"}) {
    EXPECT_TRUE(fs::exists(seed_dir / f)) << f;
  }
  EXPECT_EQ(lines(seed_dir / "selections.jsonl"), 3u);
  const auto manifest = nlohmann::json::parse(slurp(seed_dir / "manifest.json"));
  EXPECT_EQ(manifest.at("method"), "rail-l");
  EXPECT_EQ(manifest.at("selections").size(), 3u);
}

TEST(CliDistill, SeedsProduceSummaryAndRepeatableManifests) {
  test::TempDir d("distill");
  auto args = distill_args(d / "a", "vanilla");
  args.insert(args.end(), {"--seeds", "2"});
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_TRUE(fs::exists(d / "a" / "summary.csv"));
  EXPECT_TRUE(fs::exists(d / "a" / "seed_1" / "manifest.json"));

  auto again = distill_args(d / "b", "vanilla");
  again.insert(again.end(), {"--seeds", "2"});
  ASSERT_EQ(cli(again).code, 0);
  for (const char* seed : {"seed_0", "seed_1"}) {
    auto a = nlohmann::json::parse(slurp(d / "a" / seed / "manifest.json"));
    auto b = nlohmann::json::parse(slurp(d / "b" / seed / "manifest.json"));
    for (auto* j : {&a, &b}) {
      for (auto& e : (*j)["epochs"]) {
        e.erase("train_seconds");
        e.erase("wall_seconds");
      }
      (*j)["config"]["cli"].erase("out");
    }
    EXPECT_EQ(a, b) << seed;
  }
}

TEST(CliDistill, NoneNeedsNoTeacher) {
  const auto& w = workspace();
  test::TempDir d("distill");
  const auto r = cli({"distill", "--data", (w / "data").string(), "--out", (d / "none").string(), "--method",
                      "none", "--layers", "2", "--hidden", "8", "--heads", "2", "--ff", "16", "--epochs", "1"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(cli({"distill", "--data", (w / "data").string(), "--out", (d / "kd").string(), "--method",
                 "vanilla", "--epochs", "1"})
                .code,
            kExitConfig);
}

TEST(CliBenchmark, ArgumentChecks) {
  test::TempDir d("bench");
  EXPECT_EQ(cli({"benchmark", "--out", d.path().string(), "--methods", "vanilla"}).code, kExitConfig);
  EXPECT_EQ(cli({"benchmark", "--out", d.path().string(), "--epochs", "3"}).code, kExitConfig);
  EXPECT_EQ(cli({"benchmark", "--out", d.path().string(), "--methods", "vanilla,nope"}).code, kExitConfig);
}

TEST(CliBenchmark, WritesTimingTable) {
  test::TempDir d("bench");
  const auto r = cli({"benchmark", "--out", d.path().string(), "--methods", "none,vanilla", "--depths", "4",
                      "--epochs", "4", "--train-size", "16"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("warm-up"), std::string::npos);
  EXPECT_EQ(lines(d / "timing.csv"), 3u);
}

TEST(CliAnalyze, CosineAndHeatmap) {
  test::TempDir d("analyze");
  const auto& w = workspace();
  ASSERT_EQ(cli(distill_args(d / "rail", "rail-l")).code, 0);
  ASSERT_EQ(cli(distill_args(d / "alp", "alp")).code, 0);

  auto r = cli({"analyze", "--cosine", "--run", (d / "rail" / "seed_0").string(), "--teacher",
                (w / "teacher").string(), "--data", (w / "data").string(), "--out", (d / "cos").string(),
                "--samples", "16"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"cosine.csv", "cosine.pgm", "cosine_summary.json"}) {
    EXPECT_TRUE(fs::exists(d / "cos" / f));
    EXPECT_NE(r.out.find((d / "cos" / f).string()), std::string::npos) << f;
  }

  r = cli({"analyze", "--alp-heatmap", "--run", (d / "alp" / "seed_0").string(), "--teacher",
           (w / "teacher").string(), "--data", (w / "data").string(), "--out", (d / "heat").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find((d / "heat" / "alp_heatmap.pgm").string()), std::string::npos);

  r = cli({"analyze", "--alp-heatmap", "--run", (d / "rail" / "seed_0").string(), "--teacher",
           (w / "teacher").string(), "--data", (w / "data").string(), "--out", (d / "bad").string()});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_FALSE(r.err.empty());
}

TEST(CliExitCodes, Mapping) {
  EXPECT_EQ(exit_code_for(ConfigError("x")), kExitConfig);
  EXPECT_EQ(exit_code_for(DataError("x")), kExitData);
  EXPECT_EQ(exit_code_for(NumericError("x")), kExitNumeric);
  EXPECT_EQ(exit_code_for(std::runtime_error("x")), kExitFailure);
}
