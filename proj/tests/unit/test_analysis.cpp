#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "railkd/analysis.hpp"
#include "railkd/errors.hpp"
#include "railkd/ops.hpp"
#include "test_util.hpp"

using namespace railkd;

namespace {

Tensor identity(std::size_t n) {
  Tensor t = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.mutable_data()[i * n + i] = 1.0;
  return t;
}

ProjectionHead identity_heads(std::size_t d) {
  ProjectionHead h;
  h.teacher_maps = {identity(d)};
  h.student_maps = {identity(d)};
  return h;
}

RunManifest timed(const std::string& method, int depth, std::vector<double> seconds) {
  RunManifest m;
  m.method = method;
  m.config = {{"teacher", {{"num_layers", depth}}}};
  int e = 0;
  for (double s : seconds) {
    EpochRecord r;
    r.epoch = ++e;
    r.train_seconds = s;
    m.epochs.push_back(r);
  }
  return m;
}

}  // namespace

TEST(Csv, RoundTripWithQuoting) {
  const Table t{{"name", "value"}, {{"plain", "1"}, {"has,comma", "2"}, {"has \"quote\"", ""}, {"line\nbreak", "x"}}};
  EXPECT_EQ(parse_csv(to_csv(t)), t);
  const auto csv = to_csv(t);
  EXPECT_NE(csv.find("\"has,comma\""), std::string::npos);
  EXPECT_NE(csv.find("\"has \"\"quote\"\"\""), std::string::npos);
}

TEST(Csv, EmptyTableIsHeaderOnly) {
  const Table t{{"a", "b"}, {}};
  EXPECT_EQ(to_csv(t), "a,b\r\n");
  EXPECT_EQ(parse_csv(to_csv(t)), t);
}

TEST(Csv, NumbersRoundTrip) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double x = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<double>(rng.uniform_below(20)) - 10.0);
    const double back = std::stod(format_number(x));
    EXPECT_LE(std::abs(back - x), 1e-9 * std::max(1.0, std::abs(x)));
    EXPECT_EQ(back, x);
  }
}

TEST(Csv, FileRoundTripAndErrors) {
  test::TempDir dir("csv");
  const Table t{{"x"}, {{"1.5"}, {"-2"}}};
  export_csv(dir / "t.csv", t);
  EXPECT_EQ(read_csv(dir / "t.csv"), t);
  EXPECT_THROW(export_csv("/nonexistent/dir/t.csv", t), IoError);
  EXPECT_THROW(read_csv(dir / "missing.csv"), IoError);
}

TEST(Cosine, IdentityHeadsGiveUnitDiagonal) {
  Rng rng(2);
  std::vector<Tensor> layers;
  for (int l = 0; l < 3; ++l) layers.push_back(test::random_tensor(rng, {10, 6}));
  const auto m = cosine_from_pooled(layers, layers, identity_heads(6));
  EXPECT_EQ(m.student_layers, (std::vector<int>{1, 2, 3}));
  for (int i = 1; i <= 3; ++i) EXPECT_NEAR(m.at(i, i), 1.0, 1e-12);
}

TEST(Cosine, EntriesBoundedAndScaleInvariant) {
  Rng rng(3);
  std::vector<Tensor> t, s, t_scaled;
  for (int l = 0; l < 4; ++l) {
    t.push_back(test::random_tensor(rng, {8, 5}));
    t_scaled.push_back(scale(t.back(), 7.5));
  }
  for (int l = 0; l < 2; ++l) s.push_back(test::random_tensor(rng, {8, 3}));
  const auto heads = ProjectionHead::layerwise(5, 3, 4, 2, true, 9);
  const auto a = cosine_from_pooled(t, s, heads);
  const auto b = cosine_from_pooled(t_scaled, s, heads);
  EXPECT_EQ(a.values.size(), 8u);
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    EXPECT_GE(a.values[i], -1.0);
    EXPECT_LE(a.values[i], 1.0);
    EXPECT_NEAR(a.values[i], b.values[i], 1e-12);
  }
}

TEST(Cosine, Oracle) {
  Rng rng(4);
  std::vector<Tensor> t{test::random_tensor(rng, {5, 3})}, s{test::random_tensor(rng, {5, 3})};
  const auto m = cosine_from_pooled(t, s, identity_heads(3));
  double mean = 0.0;
  for (std::size_t r = 0; r < 5; ++r) {
    double dot = 0.0, nt = 0.0, ns = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      dot += t[0].at(r * 3 + k) * s[0].at(r * 3 + k);
      nt += t[0].at(r * 3 + k) * t[0].at(r * 3 + k);
      ns += s[0].at(r * 3 + k) * s[0].at(r * 3 + k);
    }
    mean += dot / std::sqrt(nt * ns) / 5.0;
  }
  EXPECT_NEAR(m.at(1, 1), mean, 1e-12);
}

TEST(Cosine, FilterMeanAndErrors) {
  Rng rng(5);
  std::vector<Tensor> t, s;
  for (int l = 0; l < 6; ++l) t.push_back(test::random_tensor(rng, {4, 3}));
  for (int l = 0; l < 3; ++l) s.push_back(test::random_tensor(rng, {4, 3}));
  const auto m = cosine_from_pooled(t, s, identity_heads(3));
  const int rows[] = {1, 3}, cols[] = {2, 4, 6};
  const auto f = m.filtered(rows, cols);
  EXPECT_EQ(f.values.size(), 6u);
  EXPECT_EQ(f.at(3, 4), m.at(3, 4));
  const int bad[] = {7};
  EXPECT_THROW(m.filtered(rows, bad), ContractError);
  const std::pair<int, int> pairs[] = {{1, 2}, {2, 4}};
  EXPECT_NEAR(m.mean_over(pairs), 0.5 * (m.at(1, 2) + m.at(2, 4)), 1e-15);
  EXPECT_EQ(m.to_table().rows.size(), 3u);
  EXPECT_THROW(cosine_from_pooled(t, s, ProjectionHead{}), ConfigError);
  EXPECT_THROW(cosine_from_pooled(t, s, ProjectionHead::concat(3, 3, 3, 4, 1)), ConfigError);
}

TEST(Cosine, SkipPairs) {
  EXPECT_EQ(skip_pairs(11, 5), (std::vector<std::pair<int, int>>{{1, 2}, {2, 4}, {3, 6}, {4, 8}, {5, 10}}));
}

TEST(Heatmap, RowsSumToOneAndSummaries) {
  const AlpWeights w{2, 3, {0.2, 0.7, 0.1, 0.1, 0.6, 0.3}};
  const auto h = heatmap_from_weights(w);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(h.at(i, 0) + h.at(i, 1) + h.at(i, 2), 1.0, 1e-12);
  EXPECT_EQ(h.max_column, 2);
  EXPECT_NEAR(h.max_column_mass, 0.65, 1e-12);
  EXPECT_NEAR(h.mean_row_max, 0.65, 1e-12);
  EXPECT_EQ(h.to_table().rows.size(), 2u);
}

TEST(Heatmap, SingleColumnDegenerate) {
  const auto h = heatmap_from_weights(AlpWeights{3, 1, {1.0, 1.0, 1.0}});
  EXPECT_EQ(h.max_column, 1);
  EXPECT_DOUBLE_EQ(h.max_column_mass, 1.0);
}

TEST(Heatmap, RejectsBadWeightsAndNonAlpRuns) {
  EXPECT_THROW(heatmap_from_weights(AlpWeights{1, 2, {0.5, 0.4}}), ContractError);
  EncoderConfig c;
  c.num_layers = 3;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.ff_dim = 8;
  const auto p = init_encoder(c, 1);
  RunManifest run;
  run.method = "rail-l";
  const std::vector<Example> ex{{{2, 3, 4}, 0}};
  EXPECT_THROW(attention_heatmap(run, p, p, ProjectionHead::layerwise(8, 8, 4, 2, false, 1), ex), MethodError);
}

TEST(Heatmap, AlpRunRowsStochastic) {
  EncoderConfig tc;
  tc.num_layers = 4;
  tc.hidden_dim = 8;
  tc.num_heads = 2;
  tc.ff_dim = 8;
  auto sc = tc;
  sc.num_layers = 3;
  const auto teacher = init_encoder(tc, 1), student = init_encoder(sc, 2);
  RunManifest run;
  run.method = "alp";
  std::vector<Example> ex;
  for (int i = 0; i < 6; ++i) ex.push_back({{2 + i, 3, 4 + i}, 0});
  const auto h = attention_heatmap(run, teacher, student, ProjectionHead::layerwise(8, 8, 4, 2, false, 1), ex);
  EXPECT_EQ(h.rows, 2u);
  EXPECT_EQ(h.cols, 3u);
  for (std::size_t i = 0; i < h.rows; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < h.cols; ++j) row += h.at(i, j);
    EXPECT_NEAR(row, 1.0, 1e-9);
  }
}

TEST(Timing, RatioAgainstItselfIsOne) {
  const std::vector<RunManifest> runs{timed("vanilla", 8, {9, 1, 2, 3}), timed("rail-l", 8, {9, 2, 4, 6}),
                                      timed("vanilla", 24, {9, 3, 3, 3}), timed("alp", 24, {9, 6, 6, 9})};
  const auto r = timing_report(runs);
  EXPECT_DOUBLE_EQ(r.ratio("vanilla", "vanilla", 8), 1.0);
  EXPECT_DOUBLE_EQ(r.row("vanilla", 8).median_epoch_seconds, 2.0);
  EXPECT_EQ(r.row("vanilla", 8).measured_epochs, 3u);
  EXPECT_DOUBLE_EQ(r.ratio("rail-l", "vanilla", 8), 2.0);
  EXPECT_DOUBLE_EQ(*r.row("alp", 24).ratio_vs_vanilla, 2.0);
  EXPECT_EQ(r.to_table().rows.size(), 4u);
}

TEST(Timing, InsufficientData) {
  const std::vector<RunManifest> short_runs{timed("vanilla", 8, {1, 1, 1}), timed("alp", 8, {1, 1, 1, 1})};
  EXPECT_THROW(timing_report(short_runs), MeasurementError);
  const std::vector<RunManifest> one_method{timed("vanilla", 8, {1, 1, 1, 1})};
  EXPECT_THROW(timing_report(one_method), ConfigError);
}

TEST(SeedTable, Layout) {
  SeedSummary s;
  s.method = "rail-c";
  s.test = {70.126, 1.5, 5};
  const SeedSummary arr[] = {s};
  const auto t = seed_table(arr);
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][0], "rail-c");
  EXPECT_EQ(t.rows[0][1], "5");
  EXPECT_EQ(t.rows[0].back(), "70.13 ± 1.50");
  EXPECT_EQ(t.rows[0][6], "");
}

TEST(Pgm, HeaderAndSize) {
  test::TempDir dir("pgm");
  const double v[] = {0.0, 0.5, 1.0, 2.0};
  write_pgm(dir / "x.pgm", 2, 2, v, 0.0, 1.0, 3);
  std::ifstream is(dir / "x.pgm", std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, 6);
  EXPECT_EQ(h, 6);
  EXPECT_EQ(maxval, 255);
  is.get();
  std::vector<unsigned char> px(36);
  is.read(reinterpret_cast<char*>(px.data()), 36);
  EXPECT_EQ(is.gcount(), 36);
  EXPECT_EQ(px[0], 0);
  EXPECT_EQ(px[35], 255);
  EXPECT_THROW(write_pgm("/nonexistent/x.pgm", 2, 2, v, 0.0, 1.0), IoError);
}

TEST(PooledStates, ShapesPerLayer) {
  EncoderConfig c;
  c.num_layers = 3;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.ff_dim = 8;
  const auto p = init_encoder(c, 3);
  const std::vector<Example> ex{{{2, 3, 4}, 0}, {{5, 6}, 1}, {{7, 8, 9}, 0}};
  const auto pooled = pooled_states(p, ex);
  ASSERT_EQ(pooled.size(), 2u);
  EXPECT_EQ(pooled[0].shape(), (Shape{3, 8}));
  const auto direct = mean_pool(forward(p, ex[1].tokens).layer(2));
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(pooled[1].at(8 + k), direct.at(k), 1e-12);
}
