#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "semaforge/tensor.hpp"

namespace semaforge {

enum class Mode { train, eval };

using Rng = std::mt19937_64;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Handles to a module's learnable parameters and its non-learned buffers
// (batch-norm running statistics). Handles share storage with the module.
struct StateDict {
  std::vector<NamedTensor> parameters;
  std::vector<NamedTensor> buffers;

  void append(const StateDict& other);
  // Parameters followed by buffers, in registration order.
  std::vector<NamedTensor> all() const;
};

// --- functional layers -----------------------------------------------------

// 'same' cross-correlation: stride 1, zero padding kernel/2 on each side.
// input N x H x W x Cin (or H x W x Cin), kernel k x k x Cin x Cout, bias Cout.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
  double momentum = 0.1;
};

// Per-channel standardisation over every axis but the last. In train mode
// the batch (leading axis) must hold at least two samples and the running
// statistics are updated in place.
Tensor batch_norm(const Tensor& input, BatchNormState& state, Mode mode);

// 2x2 window, stride 2; odd trailing rows/columns are dropped.
Tensor max_pool2x2(const Tensor& input);

// N x H x W x C -> N x out_h x out_w x C. Bin i along an axis of length L
// spans [floor(i*L/out), floor((i+1)*L/out)). Requires L >= out.
Tensor adaptive_avg_pool(const Tensor& input, std::size_t out_h, std::size_t out_w);

// x: N x in, weight: in x out, bias: out.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Softmax over the last axis, max-subtracted.
Tensor softmax(const Tensor& logits);

// Mean over the batch of -log(max(probs[n, y_n], 1e-12)). probs is N x K or
// a single K-vector; labels must lie in [0, K).
Tensor cross_entropy(const Tensor& probs, std::span<const int> labels);

inline constexpr double kLogFloor = 1e-12;

// --- modules ---------------------------------------------------------------

class Conv2d {
 public:
  Conv2d() = default;
  // He-normal kernel, zero bias.
  Conv2d(std::size_t in_channels, std::size_t out_channels, Rng& rng, std::size_t kernel = 3);

  Tensor forward(const Tensor& x) const { return conv2d(x, kernel_, bias_); }
  void export_state(StateDict& out, const std::string& prefix) const;

  Tensor& kernel() { return kernel_; }
  Tensor& bias() { return bias_; }
  std::size_t in_channels() const { return kernel_.dim(2); }
  std::size_t out_channels() const { return kernel_.dim(3); }

 private:
  Tensor kernel_;
  Tensor bias_;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels, double eps = 1e-5, double momentum = 0.1);

  Tensor forward(const Tensor& x, Mode mode) { return batch_norm(x, state_, mode); }
  void export_state(StateDict& out, const std::string& prefix) const;
  BatchNormState& state() { return state_; }

 private:
  BatchNormState state_;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng);

  Tensor forward(const Tensor& x) const { return linear(x, weight_, bias_); }
  void export_state(StateDict& out, const std::string& prefix) const;

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

// Three fully-connected layers with relu between them; emits raw scores.
class MlpHead {
 public:
  MlpHead() = default;
  // widths = {in, hidden1, hidden2, out}
  MlpHead(const std::vector<std::size_t>& widths, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void export_state(StateDict& out, const std::string& prefix) const;

  Linear& layer(std::size_t i) { return layers_.at(i); }
  std::size_t in_features() const { return in_features_; }

 private:
  std::vector<Linear> layers_;
  std::size_t in_features_ = 0;
};

}  // namespace semaforge
