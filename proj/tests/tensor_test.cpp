#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "test_support.hpp"
#include "tsgan/adam.hpp"
#include "tsgan/ops.hpp"

namespace tsgan {
namespace {

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TEST(Tensor, ShapeMustMatchValueCount) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
  Tensor t(Shape{2, 3}, 1.5f);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, CopiesShareStorageClonesDoNot) {
  Tensor a(Shape{2}, std::vector<float>{1, 2});
  Tensor alias = a;
  Tensor copy = a.clone();
  a.data()[0] = 9;
  EXPECT_EQ(alias[0], 9);
  EXPECT_EQ(copy[0], 1);
}

TEST(Conv1d, IdentityKernel) {
  Tensor x(Shape{1, 1, 3}, {1, 2, 3});
  Tensor k(Shape{1, 1, 1}, {1});
  Tensor b(Shape{1}, {0});
  EXPECT_EQ(values(conv1d(x, k, b, 1, 0)), (std::vector<float>{1, 2, 3}));
}

TEST(Conv1d, SlidingWindowSum) {
  Tensor x(Shape{1, 1, 4}, {1, 2, 3, 4});
  Tensor k(Shape{1, 1, 2}, {1, 1});
  Tensor b(Shape{1}, {0});
  const Tensor y = conv1d(x, k, b, 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3}));
  EXPECT_EQ(values(y), (std::vector<float>{3, 5, 7}));
}

TEST(Conv1d, ZeroInputGivesZeroOutput) {
  std::mt19937_64 rng(3);
  Tensor x(Shape{2, 3, 9}, 0.0f);
  Tensor k = testing::random_tensor({4, 3, 3}, rng);
  Tensor b(Shape{4}, 0.0f);
  const Tensor y = conv1d(x, k, b, 2, 1);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv1d, OutputLengthFormulaAndErrors) {
  Tensor x(Shape{1, 2, 10});
  Tensor k(Shape{3, 2, 4});
  Tensor b(Shape{3});
  EXPECT_EQ(conv1d(x, k, b, 2, 1).dim(2), (10u + 2 - 4) / 2 + 1);
  EXPECT_EQ(conv1d(x, k, b, 3, 0).dim(2), (10u - 4) / 3 + 1);
  EXPECT_THROW(conv1d(x, Tensor(Shape{3, 1, 4}), b, 1, 0), DimensionError);
  EXPECT_THROW(conv1d(Tensor(Shape{1, 2, 2}), k, b, 1, 0), DimensionError);
}

TEST(ConvTranspose1d, ScatterAddExamples) {
  Tensor b(Shape{1}, {0});
  EXPECT_EQ(values(conv_transpose1d(Tensor(Shape{1, 1, 2}, {1, 2}), Tensor(Shape{1, 1, 1}, {1}), b, 2, 0)),
            (std::vector<float>{1, 0, 2}));
  EXPECT_EQ(values(conv_transpose1d(Tensor(Shape{1, 1, 1}, {5}), Tensor(Shape{1, 1, 1}, {1}), b, 1, 0)),
            (std::vector<float>{5}));
  EXPECT_EQ(values(conv_transpose1d(Tensor(Shape{1, 1, 2}, {1, 1}), Tensor(Shape{1, 1, 2}, {1, 1}), b, 1, 0)),
            (std::vector<float>{1, 2, 1}));
}

TEST(ConvTranspose1d, NonPositiveOutputLengthIsDimensionError) {
  Tensor x(Shape{1, 1, 1}, {1});
  Tensor k(Shape{1, 1, 1}, {1});
  Tensor b(Shape{1}, {0});
  EXPECT_THROW(conv_transpose1d(x, k, b, 1, 1), DimensionError);
}

TEST(BatchNorm1d, ConstantInputCollapsesToZero) {
  Tensor x(Shape{2, 1, 4}, 3.0f);
  RunningStats stats(1);
  const Tensor y = batchnorm1d(x, Tensor(Shape{1}, 1.0f), Tensor(Shape{1}, 0.0f), stats, Mode::train);
  for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(BatchNorm1d, AlreadyNormalizedInputPassesThrough) {
  Tensor x(Shape{1, 1, 4}, {-1, 1, -1, 1});  // mean 0, biased variance 1
  RunningStats stats(1);
  const Tensor y = batchnorm1d(x, Tensor(Shape{1}, 1.0f), Tensor(Shape{1}, 0.0f), stats, Mode::train, 0.1f, 1e-5f);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], x[i], 1e-5);
}

TEST(BatchNorm1d, ZeroGammaGivesBeta) {
  std::mt19937_64 rng(5);
  Tensor x = testing::random_tensor({3, 2, 5}, rng);
  RunningStats stats(2);
  const Tensor y = batchnorm1d(x, Tensor(Shape{2}, 0.0f), Tensor(Shape{2}, {0.25f, -2.0f}), stats, Mode::train);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t t = 0; t < 5; ++t) {
      EXPECT_EQ(y[(b * 2 + 0) * 5 + t], 0.25f);
      EXPECT_EQ(y[(b * 2 + 1) * 5 + t], -2.0f);
    }
}

TEST(BatchNorm1d, EvalModeUsesRunningStatistics) {
  Tensor x(Shape{1, 1, 2}, {4, 6});
  RunningStats stats(1);
  stats.mean.data()[0] = 5;
  stats.var.data()[0] = 4;
  const Tensor y = batchnorm1d(x, Tensor(Shape{1}, 1.0f), Tensor(Shape{1}, 0.0f), stats, Mode::eval, 0.1f, 1e-5f);
  EXPECT_NEAR(y[0], -0.5f, 1e-5);
  EXPECT_NEAR(y[1], 0.5f, 1e-5);
  EXPECT_EQ(stats.mean[0], 5.0f);

  batchnorm1d(x, Tensor(Shape{1}, 1.0f), Tensor(Shape{1}, 0.0f), stats, Mode::train, 0.5f);
  EXPECT_FLOAT_EQ(stats.mean[0], 5.0f);           // 0.5 * 5 + 0.5 * 5
  EXPECT_FLOAT_EQ(stats.var[0], 0.5f * 4 + 0.5f * 2);  // unbiased batch variance of {4, 6} is 2
}

TEST(LeakyRelu, AnchorPointsAndDegenerateSlopes) {
  Tensor x(Shape{3}, {-1, 0, 2});
  const auto y = values(leaky_relu(x, 0.2f));
  EXPECT_FLOAT_EQ(y[0], -0.2f);
  EXPECT_EQ(y[1], 0.0f);
  EXPECT_EQ(y[2], 2.0f);
  EXPECT_EQ(values(leaky_relu(x, 1.0f)), values(x));
  EXPECT_EQ(values(leaky_relu(x, 0.0f)), (std::vector<float>{0, 0, 2}));
}

TEST(Sigmoid, SymmetryAndSaturation) {
  Tensor x(Shape{5}, {0, 1.5f, -1.5f, -200.0f, 200.0f});
  const auto y = values(sigmoid(x));
  EXPECT_EQ(y[0], 0.5f);
  EXPECT_NEAR(y[1] + y[2], 1.0f, 1e-7);
  EXPECT_GT(y[3], 0.0f);
  EXPECT_FALSE(std::isnan(y[3]));
  EXPECT_LT(y[4], 1.0f);
}

TEST(BceLoss, AnalyticValues) {
  EXPECT_NEAR(bce_loss(Tensor(Shape{1}, {0.5f}), Tensor(Shape{1}, {1.0f})).item(), std::log(2.0), 1e-6);
  EXPECT_NEAR(bce_loss(Tensor(Shape{2}, {1.0f, 0.0f}), Tensor(Shape{2}, {1.0f, 0.0f})).item(), 0.0, 1e-6);
  EXPECT_NEAR(bce_loss(Tensor(Shape{2}, {0.5f, 0.5f}), Tensor(Shape{2}, {0.0f, 1.0f})).item(), std::log(2.0), 1e-6);
  EXPECT_NEAR(bce_loss(Tensor(Shape{1}, {0.0f}), Tensor(Shape{1}, {1.0f})).item(), -std::log(1e-7), 1e-4);
}

TEST(Distances, L1AndL2Examples) {
  auto t = [](std::vector<float> v) { return Tensor(Shape{v.size()}, v); };
  EXPECT_EQ(l1_mean(t({1, 2}), t({1, 2})).item(), 0.0f);
  EXPECT_EQ(l1_mean(t({0, 0}), t({1, -1})).item(), 1.0f);
  EXPECT_EQ(l1_mean(t({1, 2, 3}), t({2, 4, 6})).item(), 2.0f);
  EXPECT_EQ(l2_mean(t({3, 4}), t({3, 4})).item(), 0.0f);
  EXPECT_EQ(l2_mean(t({0}), t({2})).item(), 4.0f);
  EXPECT_EQ(l2_mean(t({1, 1}), t({0, 2})).item(), 1.0f);
  EXPECT_THROW(l1_mean(t({1}), t({1, 2})), DimensionError);
  EXPECT_THROW(l2_mean(t({1}), t({1, 2})), DimensionError);
}

TEST(Backward, SquareAtThree) {
  Tensor x = Tensor::scalar(3.0f).set_requires_grad(true);
  Tensor loss = mul(x, x);
  backward(loss);
  EXPECT_EQ(x.grad()[0], 6.0f);
  EXPECT_EQ(loss.grad()[0], 1.0f);
}

TEST(Backward, ConstantLossGivesZeroGrad) {
  Tensor x = Tensor::scalar(3.0f).set_requires_grad(true);
  Tensor c = Tensor::scalar(7.0f);
  Tensor unrelated = mul(x, x);
  Tensor loss = mul(c, c);
  backward(loss);
  EXPECT_FALSE(x.has_grad() && x.grad()[0] != 0.0f);
  (void)unrelated;
}

TEST(Backward, RepeatedPassesAccumulate) {
  Tensor x = Tensor::scalar(2.0f).set_requires_grad(true);
  backward(mul(x, x));
  backward(mul(x, x));
  EXPECT_EQ(x.grad()[0], 8.0f);
  x.zero_grad();
  backward(scale(x, 3.0f));
  EXPECT_EQ(x.grad()[0], 3.0f);
}

TEST(Backward, NonScalarIsUsageError) {
  Tensor x(Shape{2}, 1.0f);
  x.set_requires_grad(true);
  EXPECT_THROW(backward(scale(x, 2.0f)), UsageError);
}

TEST(Backward, GraphIsReleasedAfterBackward) {
  Tensor x = Tensor::scalar(2.0f).set_requires_grad(true);
  Tensor y = mul(x, x);
  EXPECT_FALSE(y.is_leaf());
  backward(y);
  EXPECT_TRUE(y.is_leaf());
  EXPECT_TRUE(y.node()->parents.empty());
}

TEST(Backward, NoGradGuardSkipsRecording) {
  Tensor x = Tensor::scalar(2.0f).set_requires_grad(true);
  {
    NoGradGuard guard;
    Tensor y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.is_leaf());
  }
  EXPECT_TRUE(mul(x, x).requires_grad());
}

// Scalar Adam, one update at a time, in double precision.
struct ScalarAdamOracle {
  double lr, b1, b2, eps, m = 0, v = 0;
  int t = 0;
  double step(double param, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double m_hat = m / (1 - std::pow(b1, t));
    const double v_hat = v / (1 - std::pow(b2, t));
    return param - lr * m_hat / (std::sqrt(v_hat) + eps);
  }
};

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::scalar(1.0f).set_requires_grad(true);
  std::vector<Tensor> params{p};
  AdamState state = make_adam_state(params, {0.001f, 0.5f, 0.999f, 1e-8f});
  EXPECT_EQ(state.step_count, 0u);
  p.grad()[0] = 0.37f;
  adam_step(params, state);
  EXPECT_EQ(state.step_count, 1u);
  EXPECT_NEAR(p[0], 1.0 - 0.001, 1e-6);
}

TEST(Adam, MatchesScalarOracleOverSeveralSteps) {
  Tensor p = Tensor::scalar(0.5f).set_requires_grad(true);
  std::vector<Tensor> params{p};
  AdamState state = make_adam_state(params, {0.01f, 0.5f, 0.999f, 1e-8f});
  ScalarAdamOracle oracle{0.01, 0.5, 0.999, 1e-8};
  double expected = 0.5;
  const double grads[] = {0.3, -0.1, 0.7, 0.05, -0.4};
  for (double g : grads) {
    p.grad()[0] = static_cast<float>(g);
    adam_step(params, state);
    expected = oracle.step(expected, static_cast<float>(g));
    EXPECT_NEAR(p[0], expected, 1e-6);
  }
  EXPECT_EQ(state.step_count, 5u);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p(Shape{3}, {1, -2, 3});
  p.set_requires_grad(true);
  Adam opt({p}, {});
  opt.step();
  EXPECT_EQ(values(p), (std::vector<float>{1, -2, 3}));
  p.grad()[1] = 0.0f;
  opt.step();
  EXPECT_EQ(values(p), (std::vector<float>{1, -2, 3}));
}

TEST(Adam, EqualGradientsGiveEqualUpdates) {
  Tensor a = Tensor::scalar(1.0f).set_requires_grad(true);
  Tensor b = Tensor::scalar(1.0f).set_requires_grad(true);
  Adam opt({a, b}, {});
  for (int i = 0; i < 3; ++i) {
    a.grad()[0] = 0.2f * static_cast<float>(i + 1);
    b.grad()[0] = 0.2f * static_cast<float>(i + 1);
    opt.step();
    EXPECT_EQ(a[0], b[0]);
  }
}

TEST(Adam, RejectsInvalidOptions) {
  Tensor p = Tensor::scalar(1.0f);
  EXPECT_THROW(make_adam_state({p}, {0.0f, 0.5f, 0.999f, 1e-8f}), UsageError);
  EXPECT_THROW(make_adam_state({p}, {0.001f, 1.0f, 0.999f, 1e-8f}), UsageError);
}

}  // namespace
}  // namespace tsgan
