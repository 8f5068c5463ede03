#include "semaforge/selfcheck.hpp"

#include <array>

#include "semaforge/attention.hpp"
#include "semaforge/backbone.hpp"
#include "semaforge/gradcheck.hpp"
#include "semaforge/nn.hpp"

namespace semaforge {

namespace {

Tensor random_leaf(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = d(rng);
  return Tensor::parameter(std::move(shape), std::move(v));
}

Tensor random_const(Shape shape, Rng& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Kernels, biases, gammas and betas all get random values so that no
// gradient path is trivially zero.
void randomize(const StateDict& state, Rng& rng, double scale = 0.3) {
  std::normal_distribution<double> d(0.0, scale);
  for (const NamedTensor& t : state.parameters) {
    Tensor h = t.tensor;
    for (double& x : h.mutable_values()) x += d(rng);
  }
  std::uniform_real_distribution<double> pos(0.5, 1.5);
  for (const NamedTensor& t : state.buffers) {
    Tensor h = t.tensor;
    const bool var = t.name.find("var") != std::string::npos;
    for (double& x : h.mutable_values()) x = var ? pos(rng) : d(rng);
  }
}

// Weighted sum so every output coordinate reaches the loss with a
// different coefficient.
Tensor probe(const Tensor& y, const Tensor& weights) { return sum(mul(y, weights)); }

std::vector<NamedTensor> with_input(std::vector<NamedTensor> params, const Tensor& x) {
  params.push_back({"input", x});
  return params;
}

LayerCheck run(const std::string& name, const std::function<Tensor()>& f,
               const std::vector<NamedTensor>& wrt) {
  const GradCheckResult r = gradient_check(f, wrt, 1e-5);
  return {name, r.max_rel_error, r.worst};
}

}  // namespace

std::vector<LayerCheck> gradcheck_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LayerCheck> out;

  {  // 3-channel conv (direct kernel)
    Conv2d conv(3, 3, rng);
    StateDict s;
    conv.export_state(s, "conv");
    randomize(s, rng);
    const Tensor x = random_leaf({2, 7, 6, 3}, rng);
    const Tensor w = random_const({2, 7, 6, 3}, rng);
    out.push_back(run("conv2d 3->3", [&] { return probe(conv.forward(x), w); }, with_input(s.parameters, x)));
  }
  {  // wider conv (im2col + GEMM path)
    Conv2d conv(4, 9, rng);
    StateDict s;
    conv.export_state(s, "conv");
    randomize(s, rng);
    const Tensor x = random_leaf({2, 5, 6, 4}, rng);
    const Tensor w = random_const({2, 5, 6, 9}, rng);
    out.push_back(run("conv2d 4->9", [&] { return probe(conv.forward(x), w); }, with_input(s.parameters, x)));
  }
  {
    BatchNorm bn(3);
    StateDict s;
    bn.export_state(s, "bn");
    randomize(s, rng);
    const Tensor x = random_leaf({3, 4, 5, 3}, rng);
    const Tensor w = random_const({3, 4, 5, 3}, rng);
    out.push_back(run("batch_norm (train)", [&] { return probe(bn.forward(x, Mode::train), w); },
                      with_input(s.parameters, x)));
    out.push_back(run("batch_norm (eval)", [&] { return probe(bn.forward(x, Mode::eval), w); },
                      with_input(s.parameters, x)));
  }
  {
    const Tensor x = random_leaf({4, 6, 2}, rng);
    const Tensor w = random_const({4, 6, 2}, rng);
    out.push_back(run("relu", [&] { return probe(relu(x), w); }, {{"input", x}}));
    out.push_back(run("sigmoid", [&] { return probe(sigmoid(x), w); }, {{"input", x}}));
  }
  {
    const Tensor x = random_leaf({2, 6, 8, 3}, rng);
    const Tensor w = random_const({2, 3, 4, 3}, rng);
    out.push_back(run("max_pool2x2", [&] { return probe(max_pool2x2(x), w); }, {{"input", x}}));
  }
  {
    const Tensor x = random_leaf({1, 11, 9, 2}, rng);
    const Tensor w = random_const({1, 4, 3, 2}, rng);
    out.push_back(run("adaptive_avg_pool", [&] { return probe(adaptive_avg_pool(x, 4, 3), w); }, {{"input", x}}));
  }
  {
    Linear fc(7, 5, rng);
    StateDict s;
    fc.export_state(s, "fc");
    randomize(s, rng);
    const Tensor x = random_leaf({3, 7}, rng);
    const Tensor w = random_const({3, 5}, rng);
    out.push_back(run("linear", [&] { return probe(fc.forward(x), w); }, with_input(s.parameters, x)));
  }
  {
    const Tensor z = random_leaf({4, 2}, rng);
    const std::array<int, 4> y = {0, 1, 1, 0};
    out.push_back(run("softmax + cross_entropy", [&] { return cross_entropy(softmax(z), y); }, {{"logits", z}}));
  }
  {
    const Tensor a = random_leaf({2, 6}, rng);
    const Tensor b = random_leaf({6, 3}, rng);
    const Tensor w = random_const({2, 3}, rng);
    out.push_back(run("matmul", [&] { return probe(matmul(a, b), w); }, {{"a", a}, {"b", b}}));
  }
  {
    const Tensor a = random_leaf({5, 4, 3}, rng);
    const Tensor h = random_leaf({5, 4, 1}, rng);
    const Tensor w = random_const({5, 4, 3}, rng);
    out.push_back(run("hadamard", [&] { return probe(hadamard(a, h), w); }, {{"features", a}, {"mask", h}}));
  }
  {
    MlpHead mlp({6, 5, 4, 2}, rng);
    StateDict s;
    mlp.export_state(s, "mlp");
    randomize(s, rng);
    const Tensor x = random_leaf({3, 6}, rng);
    const Tensor w = random_const({3, 2}, rng);
    out.push_back(run("mlp head", [&] { return probe(mlp.forward(x), w); }, with_input(s.parameters, x)));
  }
  {  // LAM + cross-entropy on two 8x8x3 fragments, batch-norm in train mode
    Lam lam(rng);
    Linear head(8 * 8 * 3, 2, rng);
    StateDict s;
    lam.export_state(s, "lam");
    randomize(s, rng);
    head.export_state(s, "head");
    // A small head keeps the predictions unsure, so no gradient is so tiny
    // that rounding noise in the differences dominates.
    for (double& v : head.weight().mutable_values()) v *= 0.2;
    const Tensor x = random_leaf({2, 8, 8, 3}, rng);
    const std::array<int, 2> y = {0, 1};
    out.push_back(run("lam + cross_entropy", [&] {
      const Tensor xa = lam.forward(x, Mode::train).x_att;
      return cross_entropy(softmax(head.forward(xa.reshape({2, 8 * 8 * 3}))), y);
    }, with_input(s.parameters, x)));
  }
  {  // LAM at 32x32, eval mode
    Lam lam(rng);
    StateDict s;
    lam.export_state(s, "lam");
    randomize(s, rng);
    const Tensor x = random_leaf({32, 32, 3}, rng);
    const Tensor w = random_const({32, 32, 3}, rng);
    out.push_back(run("lam 32x32 (input)", [&] { return probe(lam.forward(x, Mode::eval).x_att, w); }, {{"input", x}}));
  }
  {  // full-size SAM head w.r.t. its 32x32x3 input
    Sam sam(rng);
    StateDict s;
    sam.export_state(s, "sam");
    randomize(s, rng, 0.05);
    const Tensor x = random_leaf({32, 32, 3}, rng);
    out.push_back(run("sam 32x32 (input)", [&] { return sum(sam.forward(x, Mode::eval)); }, {{"input", x}}));
  }
  {  // SAM parameters (stream and MLP); narrow hidden layers keep it fast
    Sam sam(rng, {1024, 16, 8, 1});
    StateDict s;
    sam.export_state(s, "sam");
    randomize(s, rng, 0.05);
    const Tensor x = random_leaf({2, 32, 32, 3}, rng);
    const Tensor w = random_const({2}, rng);
    out.push_back(run("sam 32x32 (parameters)", [&] { return probe(sam.forward(x, Mode::train), w); }, s.parameters));
  }
  {
    Backbone net({{2, 3}, 4}, 8, rng);
    StateDict s;
    net.export_state(s, "backbone");
    randomize(s, rng);
    const Tensor x = random_leaf({2, 8, 8, 3}, rng);
    const std::array<int, 2> y = {1, 0};
    out.push_back(run("backbone + cross_entropy (eval)",
                      [&] { return cross_entropy(softmax(net.forward(x, Mode::eval)), y); },
                      with_input(s.parameters, x)));
    // In train mode a conv bias feeding batch-norm has an exactly zero
    // gradient (the batch mean absorbs it), so only rounding noise is left
    // to compare; those biases are covered by the eval-mode check.
    std::vector<NamedTensor> wrt;
    for (const NamedTensor& t : s.parameters) {
      const bool pre_bn_bias = t.name.find(".conv.bias") != std::string::npos;
      if (!pre_bn_bias) wrt.push_back(t);
    }
    out.push_back(run("backbone + cross_entropy (train)",
                      [&] { return cross_entropy(softmax(net.forward(x, Mode::train)), y); },
                      with_input(wrt, x)));
  }
  return out;
}

}  // namespace semaforge
