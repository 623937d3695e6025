#include <gtest/gtest.h>

#include <cmath>

#include "nmtlab/autodiff.hpp"
#include "test_util.hpp"

using namespace nmtlab;
using testing_util::fd_max_rel_error;
using testing_util::random_tensor;
using testing_util::weighted_sum;

namespace {

constexpr double kPrimitiveTol = 1e-6;

TEST(Matmul, IdentityTimesColumn) {
  Tape t;
  Var I = t.constant(Tensor::mat(2, 2, {1, 0, 0, 1}));
  Var b = t.constant(Tensor::mat(2, 1, {3, 4}));
  Var c = matmul(I, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.value().data, (std::vector<double>{3, 4}));
}

TEST(Matmul, ZeroColumn) {
  Tape t;
  Var c = matmul(t.constant(Tensor::mat(1, 2, {1, 2})), t.constant(Tensor::mat(2, 1, {0, 0})));
  EXPECT_EQ(c.value().data, (std::vector<double>{0}));
}

TEST(Matmul, VectorOperandGivesVector) {
  Tape t;
  Var c = matmul(t.constant(Tensor::mat(2, 3, {1, 2, 3, 4, 5, 6})), t.constant(Tensor::vec({1, 0, -1})));
  EXPECT_EQ(c.shape(), (Shape{2}));
  EXPECT_EQ(c.value().data, (std::vector<double>{-2, -2}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape t;
  Var a = t.constant(Tensor(Shape{3, 4}));
  Var b = t.constant(Tensor(Shape{3, 2}));
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[3x4]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3x2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(1);
  const double err = fd_max_rel_error([](Tape&, const std::vector<Var>& v) { return weighted_sum(matmul(v[0], v[1])); },
                                      {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
  EXPECT_LT(err, kPrimitiveTol);
}

TEST(Elementwise, HadamardWithZeros) {
  Tape t;
  Var c = hadamard(t.constant(Tensor::vec({1, 2})), t.constant(Tensor::vec({0, 0})));
  EXPECT_EQ(c.value().data, (std::vector<double>{0, 0}));
}

TEST(Elementwise, AddNegIsZero) {
  Rng rng(2);
  Tape t;
  Var x = t.constant(random_tensor({5}, rng));
  for (double v : add(x, neg(x)).value().data) EXPECT_EQ(v, 0.0);
}

TEST(Elementwise, ShapeMismatchThrows) {
  Tape t;
  Var a = t.constant(Tensor(Shape{2}));
  Var b = t.constant(Tensor(Shape{3}));
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(sub(a, b), DimensionError);
  EXPECT_THROW(hadamard(a, b), DimensionError);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  const std::vector<Tensor> in{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
  const auto check = [&](auto op) {
    return fd_max_rel_error([&](Tape&, const std::vector<Var>& v) { return weighted_sum(op(v[0], v[1])); }, in);
  };
  EXPECT_LT(check([](Var a, Var b) { return add(a, b); }), kPrimitiveTol);
  EXPECT_LT(check([](Var a, Var b) { return sub(a, b); }), kPrimitiveTol);
  EXPECT_LT(check([](Var a, Var b) { return hadamard(a, b); }), kPrimitiveTol);
  EXPECT_LT(check([](Var a, Var) { return affine(a, -1.7, 0.3); }), kPrimitiveTol);
  EXPECT_LT(check([](Var a, Var) { return scale(a, 2.5); }), kPrimitiveTol);
  EXPECT_LT(check([](Var a, Var) { return one_minus(a); }), kPrimitiveTol);
}

TEST(Activation, ClosedFormValues) {
  Tape t;
  EXPECT_EQ(sigmoid(t.constant(Tensor::scalar(0.0))).value()[0], 0.5);
  EXPECT_EQ(tanh(t.constant(Tensor::scalar(0.0))).value()[0], 0.0);
  const double hi = sigmoid(t.constant(Tensor::scalar(50.0))).value()[0];
  const double lo = sigmoid(t.constant(Tensor::scalar(-50.0))).value()[0];
  EXPECT_TRUE(std::isfinite(hi) && std::isfinite(lo));
  EXPECT_NEAR(hi, 1.0, 1e-15);
  EXPECT_NEAR(lo, 0.0, 1e-15);
  EXPECT_GT(lo, 0.0);
  EXPECT_EQ(logistic(t.constant(Tensor::scalar(0.7))).value()[0], sigmoid(t.constant(Tensor::scalar(0.7))).value()[0]);
}

TEST(Activation, NoOverflowAtExtremes) {
  Tape t;
  Var x = t.constant(Tensor::vec({-1000, -50, 0, 50, 1000}));
  for (double v : sigmoid(x).value().data) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  for (double v : tanh(x).value().data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Activation, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  const std::vector<Tensor> in{random_tensor({7}, rng)};
  for (auto k : {Activation::sigmoid, Activation::tanh, Activation::logistic, Activation::exp}) {
    const double err =
        fd_max_rel_error([k](Tape&, const std::vector<Var>& v) { return weighted_sum(activation(k, v[0])); }, in);
    EXPECT_LT(err, kPrimitiveTol);
  }
}

TEST(Softmax, UniformOnEqualScores) {
  Tape t;
  for (double v : softmax_vec(t.constant(Tensor::vec({0, 0, 0}))).value().data) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, StableForLargeScores) {
  Tape t;
  const auto& p = softmax_vec(t.constant(Tensor::vec({1000, 0}))).value().data;
  EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
  EXPECT_NEAR(p[0], 1.0, 1e-15);
  EXPECT_NEAR(p[1], 0.0, 1e-15);
}

TEST(Softmax, ShiftInvariantAndInSimplex) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tape t;
    Tensor e = random_tensor({1 + rng.below(9)}, rng, -5, 5);
    Tensor shifted = e;
    for (auto& v : shifted.data) v += 7.3;
    const std::vector<double> a = softmax_vec(t.constant(e)).value().data;
    const std::vector<double> b = softmax_vec(t.constant(shifted)).value().data;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-12);
      EXPECT_GE(a[i], 0.0);
      s += a[i];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, EmptyInputIsDimensionError) {
  // Zero extents are rejected when the tensor is built.
  EXPECT_THROW(Tensor(Shape{0}), DimensionError);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  const double err = fd_max_rel_error([](Tape&, const std::vector<Var>& v) { return weighted_sum(softmax_vec(v[0])); },
                                      {random_tensor({6}, rng)});
  EXPECT_LT(err, kPrimitiveTol);
}

TEST(Concat, JoinsAndIsIdentityOnOnePart) {
  Tape t;
  Var a = t.constant(Tensor::vec({1, 2}));
  Var b = t.constant(Tensor::vec({3}));
  EXPECT_EQ(concat({a, b}).value().data, (std::vector<double>{1, 2, 3}));
  EXPECT_EQ(concat({a}).value().data, a.value().data);
}

TEST(Concat, IncompatibleShapesThrow) {
  Tape t;
  Var a = t.constant(Tensor(Shape{2, 3}));
  Var b = t.constant(Tensor(Shape{2, 4}));
  EXPECT_THROW(concat({a, b}), DimensionError);
}

TEST(Concat, GradientOfSumSplitsIntoOnes) {
  Tape t;
  Var a = t.variable(Tensor::vec({1, 2}));
  Var b = t.variable(Tensor::vec({3, 4, 5}));
  t.backward(sum(concat({a, b})));
  EXPECT_EQ(t.grad(a).data, (std::vector<double>{1, 1}));
  EXPECT_EQ(t.grad(b).data, (std::vector<double>{1, 1, 1}));
}

TEST(ShapeOps, GradientsMatchFiniteDifferences) {
  Rng rng(7);
  EXPECT_LT(fd_max_rel_error([](Tape&, const std::vector<Var>& v) { return weighted_sum(concat({v[0], v[1]})); },
                             {random_tensor({3}, rng), random_tensor({2}, rng)}),
            kPrimitiveTol);
  EXPECT_LT(fd_max_rel_error(
                [](Tape&, const std::vector<Var>& v) { return weighted_sum(stack_columns({v[0], v[1], v[0]})); },
                {random_tensor({3}, rng), random_tensor({3}, rng)}),
            kPrimitiveTol);
  EXPECT_LT(fd_max_rel_error([](Tape&, const std::vector<Var>& v) { return weighted_sum(row(v[0], 2)); },
                             {random_tensor({4, 3}, rng)}),
            kPrimitiveTol);
  EXPECT_LT(fd_max_rel_error([](Tape&, const std::vector<Var>& v) { return weighted_sum(slice(v[0], 1, 3)); },
                             {random_tensor({5}, rng)}),
            kPrimitiveTol);
  EXPECT_LT(fd_max_rel_error([](Tape&, const std::vector<Var>& v) { return weighted_sum(add_column(v[0], v[1])); },
                             {random_tensor({3, 4}, rng), random_tensor({3}, rng)}),
            kPrimitiveTol);
  EXPECT_LT(fd_max_rel_error([](Tape&, const std::vector<Var>& v) { return weighted_sum(broadcast(sum(v[0]), 4)); },
                             {random_tensor({3}, rng)}),
            kPrimitiveTol);
  EXPECT_LT(fd_max_rel_error([](Tape&, const std::vector<Var>& v) { return weighted_sum(unfold(v[0], 3)); },
                             {random_tensor({5}, rng)}),
            kPrimitiveTol);
  EXPECT_LT(fd_max_rel_error([](Tape&, const std::vector<Var>& v) { return weighted_sum(normalize(v[0])); },
                             {random_tensor({4}, rng, 0.5, 2.0)}),
            kPrimitiveTol);
  EXPECT_LT(fd_max_rel_error([](Tape&, const std::vector<Var>& v) { return norm2(v[0]); }, {random_tensor({4}, rng)}),
            kPrimitiveTol);
  EXPECT_LT(fd_max_rel_error([](Tape&, const std::vector<Var>& v) { return weighted_sum(maximum(v[0], v[1])); },
                             {random_tensor({6}, rng), random_tensor({6}, rng)}),
            kPrimitiveTol);
}

TEST(Unfold, ZeroPaddedWindows) {
  Tape t;
  Var u = unfold(t.constant(Tensor::vec({1, 2, 3})), 3);
  ASSERT_EQ(u.shape(), (Shape{3, 3}));
  // Column j holds x[j-1], x[j], x[j+1] with zeros outside.
  const std::vector<double> expect{0, 1, 2, 1, 2, 3, 2, 3, 0};
  EXPECT_EQ(u.value().data, expect);
  EXPECT_THROW(unfold(t.constant(Tensor::vec({1, 2})), 2), ConfigError);
}

TEST(Backward, SumGivesOnes) {
  Tape t;
  Var x = t.variable(Tensor::vec({0.3, -1, 2}));
  t.backward(sum(x));
  EXPECT_EQ(t.grad(x).data, (std::vector<double>{1, 1, 1}));
}

TEST(Backward, HalfSquaredNormGivesX) {
  Tape t;
  Var x = t.variable(Tensor::vec({0.3, -1, 2}));
  t.backward(scale(sum(hadamard(x, x)), 0.5));
  const auto g = t.grad(x).data;
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g[i], x.value()[i]);
}

TEST(Backward, NonScalarLossIsContractError) {
  Tape t;
  Var x = t.variable(Tensor::vec({1, 2}));
  EXPECT_THROW(t.backward(x), ContractError);
}

TEST(Backward, ParamGradientsAccumulateAcrossUses) {
  Tensor p = Tensor::vec({1, 2});
  p.enable_grad();
  Tape t;
  Var a = t.param(p);
  Var b = t.param(p);
  EXPECT_EQ(a.id, b.id);
  t.backward(add(sum(a), sum(b)));
  EXPECT_EQ(p.grad, (std::vector<double>{2, 2}));
  Tape t2;
  t2.backward(sum(t2.param(p)));
  EXPECT_EQ(p.grad, (std::vector<double>{3, 3}));
}

TEST(Backward, ConstParamGetsNoGradient) {
  const Tensor p = Tensor::vec({1, 2});
  Tape t;
  Var a = t.param(p);
  EXPECT_FALSE(t.requires_grad(a.id));
}

TEST(Backward, DeterministicAfterReset) {
  Rng rng(8);
  Tensor w = random_tensor({3, 3}, rng);
  const Tensor x = random_tensor({3}, rng);
  std::vector<double> first;
  for (int run = 0; run < 2; ++run) {
    w.enable_grad();
    Tape t;
    t.backward(weighted_sum(tanh(matmul(t.param(w), t.constant(x)))));
    if (run == 0) first = w.grad;
    else EXPECT_EQ(first, w.grad);
  }
}

TEST(Reductions, Norm2SubgradientAtZero) {
  Tape t;
  Var x = t.variable(Tensor::vec({0, 0}));
  Var n = norm2(x);
  t.backward(n);
  EXPECT_EQ(n.value()[0], 0.0);
  EXPECT_EQ(t.grad(x).data, (std::vector<double>{0, 0}));
}

TEST(Reductions, NegLogPickClampsAndFlags) {
  Tape t;
  Var p = t.variable(Tensor::vec({0.0, 1.0}));
  bool clamped = false;
  Var l = neg_log_pick(p, 0, 1e-12, &clamped);
  EXPECT_TRUE(clamped);
  EXPECT_NEAR(l.value()[0], -std::log(1e-12), 1e-9);
  Var l2 = neg_log_pick(p, 1, 1e-12, &clamped);
  EXPECT_FALSE(clamped);
  EXPECT_EQ(l2.value()[0], 0.0);
}

TEST(Tape, NoRecordTapeKeepsNoGraph) {
  Tensor p = Tensor::vec({1, 2});
  p.enable_grad();
  Tape t(false);
  Var y = sum(hadamard(t.param(p), t.param(p)));
  EXPECT_FALSE(t.requires_grad(y.id));
  EXPECT_THROW(t.backward(y), ContractError);
}

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

}  // namespace
