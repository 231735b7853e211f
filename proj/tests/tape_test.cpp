#include "ldl/tape.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "ldl/grad_check.hpp"
#include "ldl/rng.hpp"
#include "ldl/tensor.hpp"
#include "ldl/verify.hpp"

namespace ldl {
namespace {

TEST(Tensor, ShapeInvariants) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.ndim(), 3u);
  EXPECT_THROW(Tensor(Shape{}), dim_error);
  EXPECT_THROW(Tensor({1, 2, 3, 4, 5}), dim_error);
  EXPECT_THROW(Tensor({2, 0}), dim_error);
  EXPECT_THROW(t.reshaped({5, 5}), dim_error);
  EXPECT_EQ(t.reshaped({24}).numel(), 24u);
}

TEST(Matmul, IdentityCase) {
  Tape t;
  NodeId i2 = t.leaf(Tensor::from_rows({{1, 0}, {0, 1}}));
  NodeId b = t.leaf(Tensor::from_rows({{5, 6}, {7, 8}}));
  EXPECT_EQ(t.value(t.matmul(i2, b)), t.value(b));
}

TEST(Matmul, HandProduct) {
  Tape t;
  NodeId a = t.leaf(Tensor::from_rows({{1, 2}, {3, 4}}));
  NodeId b = t.leaf(Tensor::from_rows({{5}, {6}}));
  const Tensor& y = t.value(t.matmul(a, b));
  EXPECT_DOUBLE_EQ(y(0, 0), 17.0);
  EXPECT_DOUBLE_EQ(y(1, 0), 39.0);
}

TEST(Matmul, ZeroAnnihilator) {
  Tape t;
  NodeId zero = t.leaf(Tensor::zeros({2, 3}));
  NodeId b = t.leaf(Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}}));
  const Tensor& y = t.value(t.matmul(zero, b));
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], 0.0);
}

TEST(Matmul, MismatchNamesBothShapes) {
  Tape t;
  NodeId a = t.leaf(Tensor::zeros({2, 3}));
  NodeId b = t.leaf(Tensor::zeros({2, 2}));
  try {
    t.matmul(a, b);
    FAIL() << "expected dim_error";
  } catch (const dim_error& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2x3]"), std::string::npos) << what;
    EXPECT_NE(what.find("[2x2]"), std::string::npos) << what;
  }
}

TEST(Elementwise, ReluSignSplit) {
  Tape t;
  const Tensor& y = t.value(
      t.elementwise(t.leaf(Tensor::from_vector({-1, 0, 2})), Activation::relu));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
}

TEST(Elementwise, SigmoidValues) {
  Tape t;
  const Tensor& y = t.value(t.elementwise(
      t.leaf(Tensor::from_vector({0.0, std::log(3.0)})), Activation::sigmoid));
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
}

TEST(Elementwise, UnknownNameIsConfigError) {
  EXPECT_EQ(activation_from_name("relu"), Activation::relu);
  EXPECT_THROW(activation_from_name("tanh"), config_error);
}

TEST(SoftmaxRows, SymmetryAndHandRatios) {
  Tape t;
  const Tensor& a =
      t.value(t.softmax_rows(t.leaf(Tensor::from_vector({0.0, 0.0}).reshaped({1, 2}))));
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);
  const Tensor& b = t.value(t.softmax_rows(
      t.leaf(Tensor::from_vector({std::log(2.0), 0.0}).reshaped({1, 2}))));
  EXPECT_NEAR(b[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b[1], 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxRows, ShiftInvarianceAndSimplex) {
  Rng rng(11);
  for (int rep = 0; rep < 50; ++rep) {
    Tensor x = Tensor::uniform({3, 6}, 20.0, rng);
    Tensor shifted = x;
    const double c = rng.uniform(-100.0, 100.0);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t j = 0; j < 6; ++j) shifted(r, j) += c;
    Tape t;
    const Tensor& y = t.value(t.softmax_rows(t.leaf(x)));
    const Tensor& ys = t.value(t.softmax_rows(t.leaf(shifted)));
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_GT(y(r, j), 0.0);
        EXPECT_NEAR(y(r, j), ys(r, j), 1e-12);
        sum += y(r, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(LayerNorm, ConstantRowCollapsesToZero) {
  Tape t;
  const Tensor& y = t.value(t.layer_norm(
      t.leaf(Tensor::full({1, 4}, 3.5)), t.leaf(Tensor::full({4}, 1.0)),
      t.leaf(Tensor::zeros({4}))));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y[j], 0.0);
}

TEST(LayerNorm, HandRow) {
  Tape t;
  const Tensor& y = t.value(t.layer_norm(
      t.leaf(Tensor::from_rows({{1, 3}})), t.leaf(Tensor::full({2}, 1.0)),
      t.leaf(Tensor::zeros({2})), 1e-12));
  EXPECT_NEAR(y[0], -1.0, 1e-9);
  EXPECT_NEAR(y[1], 1.0, 1e-9);
}

TEST(LayerNorm, PreAffineRowMoments) {
  Rng rng(12);
  Tensor gain = Tensor::full({9}, 1.0);
  Tensor bias = Tensor::zeros({9});
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = Tensor::uniform({4, 9}, 5.0, rng);
    Tape t;
    const Tensor& y =
        t.value(t.layer_norm(t.leaf(x), t.leaf(gain), t.leaf(bias), 1e-12));
    for (std::size_t r = 0; r < 4; ++r) {
      double mean = 0.0, var = 0.0;
      for (std::size_t j = 0; j < 9; ++j) mean += y(r, j);
      mean /= 9.0;
      for (std::size_t j = 0; j < 9; ++j)
        var += (y(r, j) - mean) * (y(r, j) - mean);
      var /= 9.0;
      EXPECT_LT(std::abs(mean), 1e-10);
      EXPECT_NEAR(var, 1.0, 1e-6);
    }
  }
}

Tensor conv_of(const Tensor& x, const Tensor& k, double bias) {
  Tape t;
  Tensor b({1});
  b[0] = bias;
  return t.value(t.conv2d_3x3(t.leaf(x), t.leaf(k), t.leaf(b)));
}

TEST(Conv, DeltaKernelIsIdentity) {
  Rng rng(13);
  Tensor x = Tensor::uniform({5, 6}, 2.0, rng);
  Tensor k = Tensor::zeros({3, 3});
  k(1, 1) = 1.0;
  EXPECT_EQ(conv_of(x, k, 0.0), x);
}

TEST(Conv, OnesKernelOnDelta) {
  Tensor x = Tensor::zeros({5, 5});
  x(2, 2) = 1.0;
  const Tensor y = conv_of(x, Tensor::full({3, 3}, 1.0), 0.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      const bool inside = i >= 1 && i <= 3 && j >= 1 && j <= 3;
      EXPECT_EQ(y(i, j), inside ? 1.0 : 0.0);
    }
}

TEST(Conv, ZeroKernelAndBadShape) {
  Rng rng(14);
  Tensor x = Tensor::uniform({4, 4}, 1.0, rng);
  const Tensor y = conv_of(x, Tensor::zeros({3, 3}), 0.0);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], 0.0);
  Tape t;
  EXPECT_THROW(t.conv2d_3x3(t.leaf(x), t.leaf(Tensor::zeros({2, 2})),
                            t.leaf(Tensor::zeros({1}))),
               config_error);
  // 4-D [1 x 1 x 3 x 3] kernels are accepted
  EXPECT_NO_THROW(t.conv2d_3x3(t.leaf(x), t.leaf(Tensor::zeros({1, 1, 3, 3})),
                               t.leaf(Tensor::zeros({1}))));
}

TEST(Conv, Linearity) {
  Rng rng(15);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor x = Tensor::uniform({6, 6}, 1.0, rng);
    Tensor y = Tensor::uniform({6, 6}, 1.0, rng);
    Tensor k = Tensor::uniform({3, 3}, 1.0, rng);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    Tensor mix({6, 6});
    for (std::size_t i = 0; i < 36; ++i) mix[i] = a * x[i] + b * y[i];
    const Tensor lhs = conv_of(mix, k, 0.0);
    const Tensor cx = conv_of(x, k, 0.0), cy = conv_of(y, k, 0.0);
    for (std::size_t i = 0; i < 36; ++i)
      EXPECT_NEAR(lhs[i], a * cx[i] + b * cy[i], 1e-10);
  }
}

TEST(MeanColumns, Cases) {
  Tape t;
  const Tensor& a = t.value(t.mean_columns(t.leaf(Tensor::full({3, 4}, 7.0))));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(a[j], 7.0);
  const Tensor& b =
      t.value(t.mean_columns(t.leaf(Tensor::from_rows({{1, 3}, {5, 7}}))));
  EXPECT_DOUBLE_EQ(b[0], 3.0);
  EXPECT_DOUBLE_EQ(b[1], 5.0);
  const Tensor& c =
      t.value(t.mean_columns(t.leaf(Tensor::from_rows({{2, 4, 6}}))));
  EXPECT_EQ(c[0], 2.0);
  EXPECT_EQ(c[1], 4.0);
  EXPECT_EQ(c[2], 6.0);
}

TEST(Backward, SquareFunction) {
  Tape t;
  NodeId x = t.leaf(Tensor::from_vector({3.0}), true);
  t.backward(t.sum_all(t.hadamard(x, x)));
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 6.0);
}

TEST(Backward, ConstantHasZeroGradient) {
  Tape t;
  NodeId x = t.leaf(Tensor::from_vector({4.0}), true);
  NodeId c = t.leaf(Tensor::from_vector({2.5}));
  t.backward(t.sum_all(c));
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 0.0);
}

TEST(Backward, AdditionIsLinear) {
  Tape t;
  NodeId x = t.leaf(Tensor::from_vector({1.0}), true);
  NodeId y = t.leaf(Tensor::from_vector({2.0}), true);
  NodeId loss = t.sum_all(t.add(x, y));
  t.backward(loss);
  EXPECT_DOUBLE_EQ(t.grad(x)[0], 1.0);
  EXPECT_DOUBLE_EQ(t.grad(y)[0], 1.0);
  EXPECT_DOUBLE_EQ(t.grad(loss)[0], 1.0);  // d loss / d loss
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape t;
  NodeId x = t.leaf(Tensor::zeros({2, 2}), true);
  EXPECT_THROW(t.backward(x), contract_error);
}

TEST(GradCheck, QuadraticPasses) {
  Rng rng(16);
  Tensor theta = Tensor::uniform({6}, 2.0, rng);
  Tensor a = Tensor::uniform({6}, 1.0, rng);
  const GradCheckReport report = grad_check(
      [&](Tape& t, NodeId p) {
        return t.sum_all(t.hadamard(t.hadamard(p, p), t.leaf(a)));
      },
      theta, 1e-5, 1e-4);
  EXPECT_TRUE(report.pass) << report.max_rel_err;
}

TEST(GradCheck, CorruptedGradientFails) {
  Rng rng(17);
  Tensor theta = Tensor::uniform({5}, 1.0, rng);
  for (std::size_t i = 0; i < theta.numel(); ++i)
    theta[i] += theta[i] >= 0 ? 0.5 : -0.5;
  // One factor is frozen per evaluation, so the tape sees half the true
  // derivative of theta^2 -- a deliberately corrupted gradient.
  const GradCheckReport report = grad_check(
      [&](Tape& t, NodeId p) {
        NodeId frozen = t.leaf(t.value(p), false);
        return t.sum_all(t.hadamard(p, frozen));
      },
      theta, 1e-5, 1e-4);
  EXPECT_FALSE(report.pass);
  EXPECT_GT(report.max_rel_err, 0.1);
}

TEST(GradCheck, NonDeterministicBuildIsContractError) {
  NoiseSource noise(5);
  Tensor theta = Tensor::from_vector({1.0, 2.0});
  EXPECT_THROW(grad_check(
                   [&](Tape& t, NodeId p) {
                     Tensor jitter({2});
                     jitter[0] = noise.normal();
                     jitter[1] = noise.normal();
                     return t.sum_all(t.hadamard(p, t.leaf(jitter)));
                   },
                   theta, 1e-5, 1e-4),
               contract_error);
}

TEST(GradCheck, StepSizeRangeEnforced) {
  Tensor theta = Tensor::from_vector({1.0});
  auto f = [](Tape& t, NodeId p) { return t.sum_all(p); };
  EXPECT_THROW(grad_check(f, theta, 1e-3, 1e-4), contract_error);
  EXPECT_THROW(grad_check(f, theta, 1e-7, 1e-4), contract_error);
}

// The spec-level sweep: every primitive against central differences on
// 20 random instances, h = 1e-5, tol = 1e-4.
TEST(Primitives, FiniteDifferenceSweep) {
  std::vector<CheckResult> results;
  verify_primitives(results);
  for (const CheckResult& r : results)
    EXPECT_TRUE(r.pass) << r.name << " err=" << r.value;
}

}  // namespace
}  // namespace ldl
