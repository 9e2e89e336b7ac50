#include <gtest/gtest.h>

#include <functional>

#include "bvr/autograd.hpp"
#include "bvr/nn.hpp"
#include "oracles.hpp"

namespace bvr {
namespace {

using ag::Var;

struct OpCase {
  const char* name;
  std::vector<std::pair<int, int>> shapes;
  std::function<Var(const std::vector<Var>&)> op;
};

Var weighted_sum(const Var& y, Rng& rng) {
  return ag::sum(ag::mul(y, ag::constant(nn::normal_matrix(rng, y.rows(), y.cols(), 1.0))));
}

void expect_gradients(const OpCase& c, std::uint64_t seed = 1) {
  Rng rng(seed);
  nn::ParamSet params;
  std::vector<Var> inputs;
  for (std::size_t i = 0; i < c.shapes.size(); ++i) {
    Var v = nn::make_param(nn::normal_matrix(rng, c.shapes[i].first, c.shapes[i].second, 1.0));
    params.add("x" + std::to_string(i), v);
    inputs.push_back(v);
  }
  Rng wr(seed + 100);
  const Matrix w = [&] {
    Var probe = c.op(inputs);
    return nn::normal_matrix(wr, probe.rows(), probe.cols(), 1.0);
  }();
  const auto checks = testing::check_gradients(params, [&] { return ag::sum(ag::mul(c.op(inputs), ag::constant(w))); });
  for (const auto& g : checks) {
    EXPECT_LT(g.relative_error, 1e-6) << c.name << " " << g.name;
    EXPECT_GT(g.numeric_norm, 0.0) << c.name << " " << g.name;
  }
}

TEST(Autograd, ElementwiseAndLinearOpsMatchFiniteDifferences) {
  const std::vector<OpCase> cases{
      {"matmul", {{3, 4}, {4, 5}}, [](auto& x) { return ag::matmul(x[0], x[1]); }},
      {"transpose", {{3, 4}}, [](auto& x) { return ag::transpose(x[0]); }},
      {"linear", {{3, 4}, {4, 2}, {1, 2}}, [](auto& x) { return ag::linear(x[0], x[1], x[2]); }},
      {"add", {{3, 4}, {3, 4}}, [](auto& x) { return ag::add(x[0], x[1]); }},
      {"sub", {{3, 4}, {3, 4}}, [](auto& x) { return ag::sub(x[0], x[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](auto& x) { return ag::mul(x[0], x[1]); }},
      {"scale", {{3, 4}}, [](auto& x) { return ag::scale(x[0], -1.7); }},
      {"mul_scalar", {{3, 4}, {1, 1}}, [](auto& x) { return ag::mul_scalar(x[0], x[1]); }},
      {"add_row", {{3, 4}, {1, 4}}, [](auto& x) { return ag::add_row(x[0], x[1]); }},
      {"mul_row", {{3, 4}, {1, 4}}, [](auto& x) { return ag::mul_row(x[0], x[1]); }},
      {"mul_col", {{3, 4}, {3, 1}}, [](auto& x) { return ag::mul_col(x[0], x[1]); }},
      {"sigmoid", {{3, 4}}, [](auto& x) { return ag::sigmoid(x[0]); }},
      {"silu", {{3, 4}}, [](auto& x) { return ag::silu(x[0]); }},
      {"tanh", {{3, 4}}, [](auto& x) { return ag::tanh(x[0]); }},
      {"exp", {{3, 4}}, [](auto& x) { return ag::exp(x[0]); }},
      {"log", {{3, 4}}, [](auto& x) { return ag::log(ag::add_scalar(ag::square(x[0]), 0.5)); }},
      {"softplus", {{3, 4}}, [](auto& x) { return ag::softplus(x[0]); }},
      {"abs", {{3, 4}}, [](auto& x) { return ag::abs(x[0]); }},
      {"reciprocal", {{3, 4}}, [](auto& x) { return ag::reciprocal(ag::add_scalar(ag::square(x[0]), 0.5)); }},
      {"softmax_rows", {{3, 5}}, [](auto& x) { return ag::softmax_rows(x[0]); }},
      {"l2_normalize_rows", {{3, 5}}, [](auto& x) { return ag::l2_normalize_rows(x[0]); }},
      {"layer_norm_rows", {{3, 5}}, [](auto& x) { return ag::layer_norm_rows(x[0]); }},
      {"sum", {{3, 4}}, [](auto& x) { return ag::sum(x[0]); }},
      {"mean", {{3, 4}}, [](auto& x) { return ag::mean(x[0]); }},
      {"mean_rows", {{3, 4}}, [](auto& x) { return ag::mean_rows(x[0]); }},
      {"sum_cols", {{3, 4}}, [](auto& x) { return ag::sum_cols(x[0]); }},
      {"concat_rows", {{2, 4}, {3, 4}}, [](auto& x) { return ag::concat_rows(std::vector<Var>{x[0], x[1]}); }},
      {"concat_cols", {{3, 2}, {3, 4}}, [](auto& x) { return ag::concat_cols(std::vector<Var>{x[0], x[1]}); }},
      {"slice_rows", {{5, 4}}, [](auto& x) { return ag::slice_rows(x[0], 1, 3); }},
      {"slice_cols", {{3, 6}}, [](auto& x) { return ag::slice_cols(x[0], 2, 3); }},
      {"reshape", {{3, 4}}, [](auto& x) { return ag::reshape(x[0], 2, 6); }},
      {"im2col", {{16, 3}}, [](auto& x) { return ag::im2col(x[0], 4, 4, 3, 2, 1); }},
      {"resample_pool", {{16, 2}}, [](auto& x) { return ag::resample(nn::avg_pool_operator(4, 4, 2), x[0]); }},
      {"resample_bilinear", {{4, 2}}, [](auto& x) { return ag::resample(nn::bilinear_operator(2, 2, 5, 3), x[0]); }},
  };
  for (const auto& c : cases) expect_gradients(c);
}

TEST(Autograd, LossesMatchFiniteDifferences) {
  Rng rng(5);
  Matrix target(4, 1);
  target << 1, 0, 1, 0;
  expect_gradients({"bce", {{4, 1}}, [&](auto& x) { return ag::bce_with_logits(x[0], target); }});
  expect_gradients({"focal", {{4, 1}}, [&](auto& x) { return ag::sigmoid_focal(x[0], target, 0.25, 2.0); }});
}

TEST(Autograd, GradientsAccumulateAcrossUses) {
  Var x = ag::leaf(Matrix::Constant(1, 1, 3.0), true);
  ag::backward(ag::add(ag::mul(x, x), x));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 7.0);
}

TEST(Autograd, ConstantsReceiveNoGradient) {
  Var c = ag::constant(Matrix::Ones(2, 2));
  Var x = ag::leaf(Matrix::Ones(2, 2), true);
  ag::backward(ag::sum(ag::mul(c, x)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_TRUE(x.has_grad());
}

TEST(Autograd, ZeroNormRowsNormalizeToZero) {
  Var x = ag::leaf(Matrix::Zero(2, 3), true);
  Var y = ag::l2_normalize_rows(x);
  EXPECT_EQ(y.value().cwiseAbs().sum(), 0.0);
  ag::backward(ag::sum(y));
  EXPECT_TRUE(x.grad().allFinite());
}

TEST(Resample, BilinearPreservesConstantsAndPoolAverages) {
  const auto up = nn::bilinear_operator(3, 5, 7, 4);
  const Matrix ones = Matrix::Ones(15, 2);
  const Matrix out = *up * ones;
  EXPECT_LT((out.array() - 1.0).abs().maxCoeff(), 1e-12);
  Matrix x(16, 1);
  for (int i = 0; i < 16; ++i) x(i, 0) = i;
  const Matrix pooled = *nn::avg_pool_operator(4, 4, 2) * x;
  EXPECT_DOUBLE_EQ(pooled(0, 0), (0 + 1 + 4 + 5) / 4.0);
  EXPECT_DOUBLE_EQ(pooled(3, 0), (10 + 11 + 14 + 15) / 4.0);
}

}  // namespace
}  // namespace bvr
