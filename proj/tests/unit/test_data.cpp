#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "railkd/data.hpp"
#include "railkd/errors.hpp"
#include "test_util.hpp"

using namespace railkd;

namespace {

TaskSpec small(const std::string& name, std::uint64_t seed = 1) {
  TaskSpec s = TaskSpec::preset(name);
  s.seed = seed;
  s.train_size = 400;
  s.dev_size = 100;
  s.test_size = 100;
  s.ood_size = 100;
  return s;
}

std::set<std::vector<int>> token_set(const std::vector<Example>& v) {
  std::set<std::vector<int>> out;
  for (const auto& e : v) out.insert(e.tokens);
  return out;
}

// Logistic regression on token counts, trained by full-batch gradient descent.
struct BagOfWords {
  std::vector<double> w;
  double b = 0.0;

  std::vector<double> features(const Example& e) const {
    std::vector<double> f(w.size(), 0.0);
    for (int t : e.tokens) f[static_cast<std::size_t>(t)] += 1.0;
    return f;
  }
  double score(const Example& e) const {
    const auto f = features(e);
    double z = b;
    for (std::size_t i = 0; i < w.size(); ++i) z += w[i] * f[i];
    return z;
  }
  void fit(const std::vector<Example>& data, int vocab) {
    w.assign(static_cast<std::size_t>(vocab), 0.0);
    for (int it = 0; it < 500; ++it) {
      std::vector<double> gw(w.size(), 0.0);
      double gb = 0.0;
      for (const auto& e : data) {
        const double p = 1.0 / (1.0 + std::exp(-score(e)));
        const double r = p - e.label;
        const auto f = features(e);
        for (std::size_t i = 0; i < w.size(); ++i) gw[i] += r * f[i];
        gb += r;
      }
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 0.05 * gw[i] / data.size();
      b -= 0.05 * gb / data.size();
    }
  }
  double accuracy(const std::vector<Example>& data) const {
    int ok = 0;
    for (const auto& e : data) ok += (score(e) > 0.0) == (e.label > 0.5);
    return 100.0 * ok / data.size();
  }
};

}  // namespace

TEST(TaskSpec, Presets) {
  EXPECT_EQ(TaskSpec::preset("motif").kind, TaskType::single);
  EXPECT_EQ(TaskSpec::preset("pair").kind, TaskType::pair);
  EXPECT_EQ(TaskSpec::preset("regression").num_classes, 1);
  EXPECT_THROW(TaskSpec::preset("glue"), ConfigError);
}

TEST(TaskSpec, InfeasibleSpecsRejected) {
  TaskSpec s = TaskSpec::preset("motif");
  s.motif_len = s.seq_len + 1;
  EXPECT_THROW(gen_task(s), ConfigError);
  s = TaskSpec::preset("motif");
  s.train_size = 0;
  EXPECT_THROW(gen_task(s), ConfigError);
  s = TaskSpec::preset("regression");
  s.vocab_size = 8;
  EXPECT_THROW(gen_task(s), ConfigError);
}

TEST(TaskSpec, JsonRoundTrip) {
  const TaskSpec s = small("pair", 5);
  EXPECT_EQ(nlohmann::json(nlohmann::json(s).get<TaskSpec>()), nlohmann::json(s));
}

TEST(Generators, DeterministicUnderSeed) {
  for (const char* name : {"motif", "pair", "regression"}) {
    const auto a = gen_task(small(name, 3)), b = gen_task(small(name, 3));
    EXPECT_EQ(a.train, b.train) << name;
    EXPECT_EQ(a.test, b.test) << name;
    const auto c = gen_task(small(name, 4));
    EXPECT_NE(a.train, c.train) << name;
  }
}

TEST(Generators, SplitsDisjointAndSized) {
  for (const char* name : {"motif", "pair", "regression"}) {
    const auto spec = small(name);
    const auto d = gen_task(spec);
    EXPECT_EQ(d.train.size(), 400u);
    EXPECT_EQ(d.dev.size(), 100u);
    EXPECT_EQ(d.test.size(), 100u);
    const auto tr = token_set(d.train), dv = token_set(d.dev), te = token_set(d.test);
    EXPECT_EQ(tr.size(), d.train.size()) << "duplicate inside train";
    for (const auto& x : dv) EXPECT_FALSE(tr.count(x));
    for (const auto& x : te) EXPECT_FALSE(tr.count(x) || dv.count(x));
  }
}

TEST(Generators, LabelsAgreeWithOracle) {
  for (const char* name : {"motif", "pair", "regression"}) {
    const auto spec = small(name);
    const auto d = gen_task(spec);
    for (const auto* split : {&d.train, &d.dev, &d.test}) {
      for (const auto& e : *split) {
        ASSERT_DOUBLE_EQ(oracle_label(spec, e.tokens), e.label) << name;
        ASSERT_EQ(static_cast<int>(e.tokens.size()), spec.seq_len);
        for (int t : e.tokens) {
          ASSERT_GE(t, 0);
          ASSERT_LT(t, spec.vocab_size);
        }
      }
    }
    for (const auto& e : gen_ood_variant(spec)) ASSERT_DOUBLE_EQ(oracle_label(spec, e.tokens), e.label);
  }
}

TEST(Generators, MotifPresentMeansPositive) {
  const auto spec = small("motif");
  const auto motif = task_motif(spec);
  ASSERT_EQ(static_cast<int>(motif.size()), spec.motif_len);
  std::vector<int> seq(static_cast<std::size_t>(spec.seq_len), motif[0] == 2 ? 3 : 2);
  std::copy(motif.begin(), motif.end(), seq.begin() + 4);
  EXPECT_EQ(oracle_label(spec, seq), 1.0);
}

TEST(Generators, IdenticalSegmentsRegressToOne) {
  const auto spec = small("regression");
  const std::vector<int> seq{2, 3, 4, 5, 6, 7, 8, kSepToken, 2, 3, 4, 5, 6, 7, 8};
  EXPECT_DOUBLE_EQ(oracle_label(spec, seq), 1.0);
  const std::vector<int> disjoint{2, 3, 4, 5, 6, 7, 8, kSepToken, 9, 10, 11, 12, 13, 14, 15};
  EXPECT_DOUBLE_EQ(oracle_label(spec, disjoint), 0.0);
}

TEST(Generators, LabelBalanceOverTenThousand) {
  for (const char* name : {"motif", "pair"}) {
    TaskSpec s = TaskSpec::preset(name);
    s.train_size = 10000;
    s.dev_size = 1;
    s.test_size = 1;
    const auto d = gen_task(s);
    double pos = 0.0;
    for (const auto& e : d.train) pos += e.label;
    EXPECT_NEAR(pos / d.train.size(), 0.5, 0.05) << name;
  }
}

TEST(Generators, RegressionTargetsSpreadOverUnitInterval) {
  const auto d = gen_task(small("regression"));
  double lo = 1.0, hi = 0.0;
  for (const auto& e : d.train) {
    lo = std::min(lo, e.label);
    hi = std::max(hi, e.label);
  }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);
}

TEST(OodVariant, TokenMarginalsShift) {
  TaskSpec spec = TaskSpec::preset("pair");
  spec.ood_size = 1000;
  const auto d = gen_task(spec);
  const auto ood = gen_ood_variant(spec);
  EXPECT_EQ(ood.size(), 1000u);
  const auto h_in = token_histogram(d.train, spec.vocab_size);
  const auto h_ood = token_histogram(ood, spec.vocab_size);
  double tv = 0.0;
  for (std::size_t i = 0; i < h_in.size(); ++i) tv += std::abs(h_in[i] - h_ood[i]);
  EXPECT_GT(0.5 * tv, 0.2);
}

TEST(OodVariant, BagOfWordsShortcutBreaks) {
  TaskSpec spec = TaskSpec::preset("pair");
  spec.ood_size = 1000;
  spec.test_size = 1000;
  const auto d = gen_task(spec);
  const auto ood = gen_ood_variant(spec);
  BagOfWords bow;
  bow.fit(d.train, spec.vocab_size);
  const double in_domain = bow.accuracy(d.test);
  const double shifted = bow.accuracy(ood);
  EXPECT_GE(in_domain - shifted, 10.0) << "in-domain " << in_domain << ", ood " << shifted;
}

TEST(Jsonl, RoundTrip) {
  test::TempDir dir("jsonl");
  for (const char* name : {"pair", "regression"}) {
    const auto spec = small(name);
    const auto d = gen_task(spec);
    save_jsonl(dir / "x.jsonl", d.train, spec.kind);
    EXPECT_EQ(load_jsonl(dir / "x.jsonl", spec), d.train) << name;
  }
}

TEST(Jsonl, EmptyFileIsEmptyList) {
  test::TempDir dir("jsonl");
  std::ofstream(dir / "e.jsonl").close();
  EXPECT_TRUE(load_jsonl(dir / "e.jsonl").empty());
}

TEST(Jsonl, BadLineNamed) {
  test::TempDir dir("jsonl");
  {
    std::ofstream os(dir / "b.jsonl");
    os << R"({"tokens":[2,3],"label":1})" << "\n";
    os << R"({"tokens":[2,3],"label":)" << "\n";
  }
  try {
    load_jsonl(dir / "b.jsonl");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(Jsonl, OutOfRangeTokenRejectedWithSpec) {
  test::TempDir dir("jsonl");
  std::ofstream(dir / "o.jsonl") << R"({"tokens":[2,99],"label":1})" << "\n";
  EXPECT_NO_THROW(load_jsonl(dir / "o.jsonl"));
  EXPECT_THROW(load_jsonl(dir / "o.jsonl", TaskSpec::preset("motif")), DataError);
}

TEST(TaskDir, RoundTripWithOod) {
  test::TempDir dir("task");
  const auto spec = small("pair");
  TaskData d = gen_task(spec);
  d.ood = gen_ood_variant(spec);
  save_task_dir(dir.path(), d);
  const auto back = load_task_dir(dir.path());
  EXPECT_EQ(back.train, d.train);
  EXPECT_EQ(back.ood, d.ood);
  EXPECT_EQ(nlohmann::json(back.spec), nlohmann::json(spec));
  EXPECT_THROW(load_task_dir(dir / "missing"), DataError);
}
