#include <gtest/gtest.h>

#include <random>

#include "semaforge/attention.hpp"
#include "semaforge/errors.hpp"
#include "semaforge/gradcheck.hpp"

using namespace semaforge;

namespace {

Tensor random_input(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

void perturb(const StateDict& s, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  for (const NamedTensor& t : s.parameters) {
    Tensor h = t.tensor;
    for (double& v : h.mutable_values()) v += d(rng);
  }
}

void zero(Tensor t) {
  for (double& v : t.mutable_values()) v = 0.0;
}

}  // namespace

TEST(Lam, ZeroLogitHeatmap) {
  Rng rng(1);
  Lam lam(rng);
  zero(lam.stream().conv_logits().kernel());
  zero(lam.stream().conv_logits().bias());
  const Tensor x = random_input({32, 32, 3}, 2);
  const Lam::Output out = lam.forward(x, Mode::eval);
  for (double h : out.h_att.values()) EXPECT_EQ(h, 0.5);
  const Tensor f = lam.conv1().forward(x);
  for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_EQ(out.x_att.at(i), 0.5 * f.at(i));
}

TEST(Lam, SaturatedHeatmapPassesInputThrough) {
  Rng rng(3);
  Lam lam(rng);
  Tensor k = lam.conv1().kernel();
  zero(k);
  for (std::size_t c = 0; c < 3; ++c) k.mutable_values()[((1 * 3 + 1) * 3 + c) * 3 + c] = 1.0;
  zero(lam.conv1().bias());
  zero(lam.stream().conv_logits().kernel());
  for (double& b : lam.stream().conv_logits().bias().mutable_values()) b = 50.0;
  const Tensor x = random_input({32, 32, 3}, 4);
  const Tensor y = lam.forward(x, Mode::eval).x_att;
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.at(i), x.at(i), 1e-6);
}

TEST(Lam, GradientsOfAttentiveFragment) {
  Rng rng(5);
  Lam lam(rng);
  StateDict s;
  lam.export_state(s, "lam");
  perturb(s, 6, 0.3);
  Tensor x = random_input({2, 8, 8, 3}, 7);
  x.set_requires_grad(true);
  std::vector<NamedTensor> wrt = s.parameters;
  wrt.push_back({"x", x});
  const GradCheckResult train = gradient_check([&] { return sum(lam.forward(x, Mode::train).x_att); }, wrt);
  EXPECT_LT(train.max_rel_error, 1e-4) << train.worst;
  const GradCheckResult eval = gradient_check([&] { return sum(lam.forward(x, Mode::eval).x_att); }, wrt);
  EXPECT_LT(eval.max_rel_error, 1e-4) << eval.worst;
}

TEST(Lam, HeatmapStrictlyInsideUnitInterval) {
  Rng rng(8);
  Lam lam(rng);
  StateDict s;
  lam.export_state(s, "lam");
  perturb(s, 9, 20.0);  // large weights push the logits far out
  const Tensor h = lam.forward(scale(random_input({32, 32, 3}, 10), 100.0), Mode::eval).h_att;
  for (double v : h.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Lam, PreservesSpatialShapeForAnySize) {
  Rng rng(11);
  Lam lam(rng);
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {5, 7}, {32, 32}}) {
    const Lam::Output out = lam.forward(random_input({h, w, 3}, 12), Mode::eval);
    EXPECT_EQ(out.x_att.shape(), (Shape{h, w, 3}));
    EXPECT_EQ(out.h_att.shape(), (Shape{h, w, 1}));
  }
}

TEST(Lam, WrongChannelCount) {
  Rng rng(13);
  Lam lam(rng);
  EXPECT_THROW(lam.forward(Tensor({8, 8, 4}), Mode::eval), DimensionError);
}

TEST(Sam, ZeroFinalLayerGivesHalf) {
  Rng rng(14);
  Sam sam(rng);
  zero(sam.mlp().layer(2).weight());
  zero(sam.mlp().layer(2).bias());
  const Tensor w = sam.forward(random_input({3, 40, 40, 3}, 15), Mode::eval);
  ASSERT_EQ(w.numel(), 3u);
  for (double v : w.values()) EXPECT_EQ(v, 0.5);
}

TEST(Sam, IdenticalInputsIdenticalWeights) {
  Rng rng(16);
  Sam sam(rng);
  const Tensor x = random_input({48, 48, 3}, 17);
  const double a = sam.forward(x, Mode::eval).item();
  const double b = sam.forward(Tensor({48, 48, 3}, std::vector<double>(x.values().begin(), x.values().end())),
                               Mode::eval).item();
  EXPECT_EQ(a, b);
}

TEST(Sam, GradientWrtMlpWeights) {
  Rng rng(18);
  Sam sam(rng, {1024, 16, 8, 1});
  StateDict s;
  sam.mlp().export_state(s, "mlp");
  perturb(s, 19, 0.05);
  const Tensor x = random_input({32, 32, 3}, 20);
  const GradCheckResult r = gradient_check([&] { return sum(sam.forward(x, Mode::eval)); }, s.parameters);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Sam, TooSmallFragmentRejected) {
  Rng rng(21);
  Sam sam(rng);
  EXPECT_THROW(sam.forward(Tensor({31, 31, 3}, 0.5), Mode::eval), ContractError);
}

TEST(Sam, PooledLengthAndRange) {
  Rng rng(22);
  Sam sam(rng);
  for (std::size_t s : {32, 33, 47, 64, 100}) {
    const Tensor p = sam.pooled(random_input({s, s, 3}, s), Mode::eval);
    EXPECT_EQ(p.numel(), 1024u) << s;
    const double w = sam.forward(random_input({s, s, 3}, s), Mode::eval).item();
    EXPECT_GT(w, 0.0);
    EXPECT_LT(w, 1.0);
  }
}

TEST(Attention, EvalOutputsIndependentOfBatch) {
  Rng rng(23);
  Lam lam(rng);
  Sam sam(rng);
  const Tensor a = random_input({32, 32, 3}, 24);
  const Tensor b = random_input({32, 32, 3}, 25);
  const Tensor c = random_input({32, 32, 3}, 26);
  auto stack = [](const Tensor& u, const Tensor& v) {
    std::vector<double> d(u.values().begin(), u.values().end());
    d.insert(d.end(), v.values().begin(), v.values().end());
    return Tensor({2, 32, 32, 3}, d);
  };
  const Tensor hab = lam.forward(stack(a, b), Mode::eval).h_att;
  const Tensor hac = lam.forward(stack(a, c), Mode::eval).h_att;
  for (std::size_t i = 0; i < 32 * 32; ++i) ASSERT_EQ(hab.at(i), hac.at(i));
  EXPECT_EQ(sam.forward(stack(a, b), Mode::eval).at(0), sam.forward(stack(a, c), Mode::eval).at(0));
  EXPECT_EQ(sam.forward(stack(a, b), Mode::eval).at(0), sam.forward(a, Mode::eval).item());
}
