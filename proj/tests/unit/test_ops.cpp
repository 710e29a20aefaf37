#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "railkd/errors.hpp"
#include "railkd/gradcheck.hpp"
#include "railkd/ops.hpp"
#include "test_util.hpp"

using namespace railkd;
using railkd::test::random_tensor;

namespace {

constexpr double kGradTol = 1e-4;

std::vector<double> naive_matmul(std::span<const double> a, std::span<const double> b, std::size_t p,
                                 std::size_t q, std::size_t r) {
  std::vector<double> out(p * r, 0.0);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < r; ++j)
      for (std::size_t k = 0; k < q; ++k) out[i * r + j] += a[i * q + k] * b[k * r + j];
  return out;
}

void expect_close(std::span<const double> got, std::span<const double> want, double tol = 1e-12) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

}  // namespace

TEST(Ops, MatmulMatchesTripleLoop) {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t p = 1 + rng.uniform_below(6), q = 1 + rng.uniform_below(6),
                      r = 1 + rng.uniform_below(6);
    const Tensor a = random_tensor(rng, {p, q}), b = random_tensor(rng, {q, r});
    expect_close(matmul(a, b).data(), naive_matmul(a.data(), b.data(), p, q, r));
  }
}

TEST(Ops, BmmMatchesPerBatchLoop) {
  Rng rng(2);
  const Tensor a = random_tensor(rng, {3, 2, 4}), b = random_tensor(rng, {3, 4, 5});
  const Tensor c = bmm(a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto want = naive_matmul(a.data().subspan(i * 8, 8), b.data().subspan(i * 20, 20), 2, 4, 5);
    expect_close(c.data().subspan(i * 10, 10), want);
  }
}

TEST(Ops, LinearMatchesMatmulPlusBias) {
  Rng rng(3);
  const Tensor x = random_tensor(rng, {2, 3, 4}), w = random_tensor(rng, {4, 5}),
               b = random_tensor(rng, {5});
  const Tensor y = linear(x, w, b);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 5}));
  const auto want = naive_matmul(x.data(), w.data(), 6, 4, 5);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(y.at(i * 5 + j), want[i * 5 + j] + b.at(j), 1e-12);
}

TEST(Ops, MatmulShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), DimensionError);
}

TEST(Ops, SoftmaxMatchesExpOverSum) {
  const Tensor x = Tensor::from({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 1000.0});
  const Tensor s = softmax(x);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(s.at(0), std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(s.at(2), std::exp(3.0) / z, 1e-15);
  EXPECT_NEAR(s.at(5), 1.0, 1e-15);  // no overflow with a large logit
  const Tensor ls = log_softmax(x);
  EXPECT_NEAR(ls.at(1), 2.0 - std::log(z), 1e-14);
  EXPECT_NEAR(ls.at(3), -1001.0, 1e-9);
}

TEST(Ops, SoftmaxRejectsNonFinite) {
  const Tensor x = Tensor::from({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  EXPECT_THROW(softmax(x), NumericError);
}

TEST(Ops, LayerNormHandComputed) {
  const Tensor x = Tensor::from({1, 4}, {1.0, 2.0, 3.0, 6.0});
  const Tensor g = Tensor::from({4}, {1.0, 1.0, 2.0, 1.0});
  const Tensor b = Tensor::from({4}, {0.0, 0.5, 0.0, 0.0});
  const Tensor y = layer_norm(x, g, b, 0.0);
  // mean 3, variance (4+1+0+9)/4 = 3.5
  const double sd = std::sqrt(3.5);
  EXPECT_NEAR(y.at(0), -2.0 / sd, 1e-12);
  EXPECT_NEAR(y.at(1), -1.0 / sd + 0.5, 1e-12);
  EXPECT_NEAR(y.at(2), 0.0, 1e-12);
  EXPECT_NEAR(y.at(3), 3.0 / sd, 1e-12);
}

TEST(Ops, GeluReferencePoints) {
  const Tensor y = gelu(Tensor::from({3}, {0.0, 1.0, -1.0}));
  const double c = std::sqrt(2.0 / M_PI);
  EXPECT_DOUBLE_EQ(y.at(0), 0.0);
  EXPECT_NEAR(y.at(1), 0.5 * (1 + std::tanh(c * (1 + 0.044715))), 1e-15);
  EXPECT_NEAR(y.at(2), -0.5 * (1 - std::tanh(c * (1 + 0.044715))), 1e-15);
}

TEST(Ops, ReductionsMatchLoops) {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {2, 3, 4});
  const Tensor m = mean_axis(x, 1);
  ASSERT_EQ(m.shape(), (Shape{2, 4}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t k = 0; k < 4; ++k) {
      double s = 0.0;
      for (std::size_t l = 0; l < 3; ++l) s += x.at(b * 12 + l * 4 + k);
      EXPECT_NEAR(m.at(b * 4 + k), s / 3.0, 1e-14);
    }
  double total = 0.0;
  for (double v : x.data()) total += v;
  EXPECT_NEAR(sum(x).item(), total, 1e-12);
  EXPECT_NEAR(mean(x).item(), total / 24.0, 1e-14);
  EXPECT_EQ(sum_axis(x, -1).shape(), (Shape{2, 3}));
}

TEST(Ops, PermuteAndTranspose) {
  const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor t = transpose(x);
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_DOUBLE_EQ(t.at(1), 4.0);
  const std::size_t axes[] = {1, 0};
  const Tensor p = permute(x, axes);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(p.at(i), t.at(i));
  EXPECT_THROW(reshape(x, {4}), DimensionError);
}

TEST(Ops, ConcatAndStack) {
  const Tensor a = Tensor::from({2, 1}, {1, 2}), b = Tensor::from({2, 2}, {3, 4, 5, 6});
  const Tensor parts[] = {a, b};
  const Tensor c = concat(parts);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  expect_close(c.data(), std::vector<double>{1, 3, 4, 2, 5, 6});
  const Tensor same[] = {b, b};
  const Tensor s = stack(same, 1);
  EXPECT_EQ(s.shape(), (Shape{2, 2, 2}));
  expect_close(s.data(), std::vector<double>{3, 4, 3, 4, 5, 6, 5, 6});
}

TEST(Ops, EmbeddingLooksUpRowsAndValidatesIds) {
  const Tensor table = Tensor::from({3, 2}, {0, 1, 10, 11, 20, 21});
  const int ids[] = {2, 0, 2};
  expect_close(embedding(table, ids).data(), std::vector<double>{20, 21, 0, 1, 20, 21});
  const int bad[] = {3};
  EXPECT_THROW(embedding(table, bad), DataError);
}

TEST(Ops, L2NormalizeUnitRowsAndZeroRowError) {
  const Tensor x = Tensor::from({2, 2}, {3.0, 4.0, -1.0, 0.0});
  expect_close(l2_normalize(x).data(), std::vector<double>{0.6, 0.8, -1.0, 0.0});
  EXPECT_THROW(l2_normalize(Tensor::from({1, 2}, {0.0, 0.0})), NumericError);
}

TEST(Ops, PickSelectsPerRow) {
  const Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const int idx[] = {2, 0};
  expect_close(pick(x, idx).data(), std::vector<double>{3, 4});
}

// Property: analytic gradients of every op agree with central differences.
class OpGradients : public ::testing::Test {
 protected:
  Rng rng{99};
  void check(const std::function<Tensor(const std::vector<Tensor>&)>& f, std::vector<Shape> shapes,
             int trials = 20) {
    for (int t = 0; t < trials; ++t) {
      std::vector<Tensor> in;
      for (const auto& s : shapes) in.push_back(random_tensor(rng, s));
      EXPECT_LT(grad_check(f, in), kGradTol) << "trial " << t;
    }
  }
};

TEST_F(OpGradients, Elementwise) {
  check([](const auto& v) { return sum(mul(add(v[0], v[1]), sub(v[0], v[1]))); }, {{3, 2}, {3, 2}});
  check([](const auto& v) { return sum(square(add_scalar(scale(v[0], 0.7), 0.3))); }, {{4}});
  check([](const auto& v) { return sum(square(add_bias(v[0], v[1]))); }, {{2, 3}, {3}});
}

TEST_F(OpGradients, Matrix) {
  check([](const auto& v) { return sum(square(matmul(v[0], v[1]))); }, {{3, 4}, {4, 2}});
  check([](const auto& v) { return sum(square(bmm(v[0], v[1]))); }, {{2, 3, 4}, {2, 4, 2}});
  check([](const auto& v) { return sum(square(linear(v[0], v[1], v[2]))); }, {{2, 3, 4}, {4, 2}, {2}});
  check([](const auto& v) { return sum(square(transpose(v[0]))); }, {{2, 3, 4}});
}

TEST_F(OpGradients, ShapeOps) {
  check(
      [](const auto& v) {
        const std::size_t axes[] = {2, 0, 1};
        return sum(mul(permute(v[0], axes), v[1]));
      },
      {{2, 3, 4}, {4, 2, 3}});
  check([](const auto& v) { return sum(mul(reshape(v[0], {6}), v[1])); }, {{2, 3}, {6}});
  check(
      [](const auto& v) {
        const Tensor parts[] = {v[0], v[1]};
        return sum(square(concat(parts)));
      },
      {{2, 2}, {2, 3}});
  check(
      [](const auto& v) {
        const Tensor parts[] = {v[0], v[1]};
        return sum(mul(stack(parts, 1), v[2]));
      },
      {{2, 3}, {2, 3}, {2, 2, 3}});
}

TEST_F(OpGradients, Nonlinear) {
  check([](const auto& v) { return sum(mul(softmax(v[0]), v[1])); }, {{3, 4}, {3, 4}});
  check([](const auto& v) { return sum(mul(log_softmax(v[0]), v[1])); }, {{3, 4}, {3, 4}});
  check([](const auto& v) { return sum(mul(layer_norm(v[0], v[1], v[2]), v[3])); },
        {{3, 5}, {5}, {5}, {3, 5}});
  check([](const auto& v) { return sum(mul(gelu(v[0]), v[1])); }, {{6}, {6}});
  check([](const auto& v) { return sum(mul(l2_normalize(v[0]), v[1])); }, {{3, 4}, {3, 4}});
}

TEST_F(OpGradients, Reductions) {
  check([](const auto& v) { return sum(square(mean_axis(v[0], 1))); }, {{2, 3, 4}});
  check([](const auto& v) { return sum(square(sum_axis(v[0], 0))); }, {{2, 3}});
  check([](const auto& v) { return mean(square(v[0])); }, {{5}});
  check(
      [](const auto& v) {
        const int idx[] = {1, 0, 2};
        return sum(square(pick(v[0], idx)));
      },
      {{3, 3}});
}

TEST_F(OpGradients, EmbeddingTable) {
  const int ids[] = {1, 1, 3, 0};
  check([&](const auto& v) { return sum(mul(embedding(v[0], ids), v[1])); }, {{4, 2}, {4, 2}});
}
