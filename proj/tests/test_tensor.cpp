#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "semaforge/errors.hpp"
#include "semaforge/gradcheck.hpp"
#include "semaforge/nn.hpp"
#include "semaforge/tensor.hpp"

using namespace semaforge;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

TEST(Matmul, IdentityTimesColumn) {
  const Tensor i({2, 2}, std::vector<double>{1, 0, 0, 1});
  const Tensor b({2, 1}, std::vector<double>{3, 4});
  const Tensor c = matmul(i, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.at(0), 3.0);
  EXPECT_EQ(c.at(1), 4.0);
}

TEST(Matmul, UnanimousFakeVote) {
  const Tensor p({2, 6}, std::vector<double>{1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0});
  const Tensor w({6, 1}, 1.0 / 6.0);
  const Tensor c = matmul(p, w);
  EXPECT_NEAR(c.at(0), 1.0, 1e-15);
  EXPECT_EQ(c.at(1), 0.0);
}

TEST(Matmul, PossibilityTimesWeights) {
  const std::vector<double> p0 = {0.8, 0.2, 0.6, 0.9, 0.7, 0.5};
  const std::vector<double> w = {0.5, 0.1, 0.2, 0.9, 0.4, 0.3};
  std::vector<double> pv = p0;
  for (double v : p0) pv.push_back(1.0 - v);
  const Tensor c = matmul(Tensor({2, 6}, pv), Tensor({6, 1}, w));
  // Scalar dot products, accumulated left to right.
  double s0 = 0.0, s1 = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    s0 += p0[i] * w[i];
    s1 += (1.0 - p0[i]) * w[i];
  }
  EXPECT_EQ(c.at(0), s0);
  EXPECT_EQ(c.at(1), s1);
  EXPECT_NEAR(c.at(0), 1.78, 1e-12);
  EXPECT_NEAR(c.at(1), 0.62, 1e-12);
}

TEST(Matmul, IdentityIsExact) {
  const Tensor a = random_tensor({3, 4}, 1);
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  const Tensor r = matmul(a, Tensor({4, 4}, eye));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(r.at(i), a.at(i));
  std::vector<double> eye3(9, 0.0);
  for (int i = 0; i < 3; ++i) eye3[i * 4] = 1.0;
  const Tensor l = matmul(Tensor({3, 3}, eye3), a);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(l.at(i), a.at(i));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 1}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(shape_str({2, 3})), std::string::npos) << msg;
    EXPECT_NE(msg.find(shape_str({4, 1})), std::string::npos) << msg;
  }
}

TEST(Hadamard, OnesMaskIsIdentity) {
  const Tensor a = random_tensor({4, 5, 3}, 2);
  const Tensor r = hadamard(a, Tensor::ones({4, 5, 1}));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(r.at(i), a.at(i));
}

TEST(Hadamard, ZeroMaskAnnihilates) {
  const Tensor r = hadamard(random_tensor({4, 5, 3}, 3), Tensor::zeros({4, 5, 1}));
  for (double v : r.values()) EXPECT_EQ(v, 0.0);
}

TEST(Hadamard, GateReplicatedOverChannels) {
  const std::vector<double> h = {0.5, 1, 0, 1};
  const Tensor r = hadamard(Tensor::ones({2, 2, 3}), Tensor({2, 2, 1}, h));
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(r.at((i * 2 + j) * 3 + c), 1.0 * h[i * 2 + j]);
    }
  }
}

TEST(Hadamard, SpatialMismatchThrows) {
  EXPECT_THROW(hadamard(Tensor({2, 2, 3}), Tensor({2, 3, 1})), DimensionError);
}

TEST(Elementwise, Basics) {
  const Tensor x = random_tensor({3, 3}, 4);
  const Tensor a = add(x, Tensor::zeros({3, 3}));
  const Tensor s = scale(x, 1.0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_EQ(a.at(i), x.at(i));
    EXPECT_EQ(s.at(i), x.at(i));
  }
  EXPECT_EQ(sum(Tensor::ones({3, 3})).item(), 9.0);
  EXPECT_THROW(add(Tensor({2, 2}), Tensor({2, 3})), DimensionError);
}

TEST(Backward, LinearSum) {
  Tensor x = Tensor::parameter({2, 2}, {1, 1, 1, 1});
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, Quadratic) {
  Tensor x = Tensor::parameter({1}, {2.0});
  sum(mul(x, x)).backward();
  EXPECT_EQ(x.grad()[0], 4.0);
}

TEST(Backward, NonScalarLossThrows) {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  EXPECT_THROW(scale(x, 2.0).backward(), ContractError);
}

TEST(Backward, SecondCallThrows) {
  Tensor x = Tensor::parameter({2}, {1.0, 2.0});
  const Tensor loss = sum(mul(x, x));
  loss.backward();
  EXPECT_THROW(loss.backward(), StateError);
}

TEST(Backward, DeterministicGradients) {
  const Tensor init = random_tensor({3, 4}, 5);
  const Tensor w = random_tensor({4, 2}, 6);
  auto run = [&] {
    Tensor x = Tensor::parameter({3, 4}, std::vector<double>(init.values().begin(), init.values().end()));
    sum(sigmoid(matmul(x, w))).backward();
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(GradientCheck, SumIsExact) {
  const double err = gradient_check([](const Tensor& x) { return sum(x); }, random_tensor({3, 4}, 7));
  EXPECT_LE(err, 1e-9);
}

TEST(GradientCheck, SigmoidAtZero) {
  Tensor x = Tensor::parameter({5}, std::vector<double>(5, 0.0));
  sum(sigmoid(x)).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 0.25);
  const double err = gradient_check([](const Tensor& t) { return sum(sigmoid(t)); }, Tensor::zeros({5}));
  EXPECT_LT(err, 1e-6);
}

TEST(GradientCheck, NonFiniteNamesCoordinate) {
  // Finite at x, overflows once x[0] moves up by eps.
  const Tensor x({2}, std::vector<double>{1.0, 0.0});
  try {
    gradient_check([](const Tensor& t) { return sum(scale(t, 1.7976931348623e308)); }, x);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
#ifdef NDEBUG
    EXPECT_NE(std::string(e.what()).find("[0]"), std::string::npos) << e.what();
#endif
  }
}

TEST(GradientCheck, ElementwiseOpsSmallInputs) {
  const Tensor a = random_tensor({3, 4}, 8);
  const Tensor b = add_scalar(scale(mul(random_tensor({3, 4}, 9), random_tensor({3, 4}, 9)), 1.0), 0.5);
  EXPECT_LT(gradient_check([&](const Tensor& x) { return sum(mul(add(x, a), sub(x, a))); }, a), 1e-4);
  EXPECT_LT(gradient_check([&](const Tensor& x) { return sum(div(a, x)); }, b), 1e-4);
  EXPECT_LT(gradient_check([&](const Tensor& x) { return mean(log_clamped(x, 1e-12)); }, b), 1e-4);
  EXPECT_LT(gradient_check([&](const Tensor& x) { return sum(mul(transpose(x), transpose(a))); }, a), 1e-4);
  EXPECT_LT(gradient_check([&](const Tensor& x) { return sum(mul(row_sum(x), row_sum(a))); }, a), 1e-4);
}

// x^2 elementwise with a backward scaled by `slope` (1 is correct).
Tensor square_with_slope(const Tensor& x, double slope) {
  Buffer out(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x.at(i) * x.at(i);
  return Tensor::from_op("square", x.shape(), std::move(out), {x},
                         [x, slope](std::span<const double> grad, std::span<double* const> in) {
                           for (std::size_t i = 0; i < grad.size(); ++i) in[0][i] += grad[i] * slope * 2.0 * x.at(i);
                         });
}

TEST(GradientCheck, CatchesWrongBackward) {
  const Tensor x = random_tensor({6}, 10);
  EXPECT_LT(gradient_check([](const Tensor& t) { return sum(square_with_slope(t, 1.0)); }, x), 1e-8);
  EXPECT_GT(gradient_check([](const Tensor& t) { return sum(square_with_slope(t, 1.001)); }, x), 1e-4);
  // Tiny gradients are still compared: the loss is O(1) so the floor is 1e-6.
  const Tensor small({2}, std::vector<double>{1e-4, -2e-4});
  EXPECT_GT(gradient_check([](const Tensor& t) { return add_scalar(sum(square_with_slope(t, 3.0)), 1.0); }, small),
            1e-4);
}

TEST(GradientCheck, KinkInsideStepIsRecheckedNotHidden) {
  // 3e-6 sits inside the default step, so the central difference straddles
  // the ReLU corner.
  Tensor x = Tensor::parameter({3}, std::vector<double>{3e-6, 0.7, -0.4});
  const GradCheckResult ok = gradient_check([&] { return sum(relu(x)); }, {{"x", x}});
  EXPECT_LT(ok.max_rel_error, 1e-4);
  EXPECT_EQ(ok.kinks, 1u);
  EXPECT_EQ(ok.worst.empty(), false);

  // A wrong slope at the same point is still reported.
  Tensor y = Tensor::parameter({1}, std::vector<double>{3e-6});
  auto bad_relu = [&] {
    Buffer out{std::max(0.0, y.at(0))};
    return sum(Tensor::from_op("bad_relu", {1}, std::move(out), {y},
                               [](std::span<const double> grad, std::span<double* const> in) {
                                 in[0][0] += 0.5 * grad[0];
                               }));
  };
  EXPECT_GT(gradient_check(bad_relu, {{"y", y}}).max_rel_error, 1e-2);
}

TEST(Tensor, ShapeInvariant) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  const Tensor t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
}
