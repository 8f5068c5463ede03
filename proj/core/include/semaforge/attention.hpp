#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "semaforge/nn.hpp"

namespace semaforge {

// X_a = X + conv2(relu(bn(X))); M = conv3(X_a); H = sigmoid(M).
// Accepts H x W x C or N x H x W x C; H keeps the spatial shape with one channel.
class AttentionStream {
 public:
  AttentionStream() = default;
  AttentionStream(std::size_t channels, Rng& rng);

  struct Output {
    Tensor residual;  // X_a
    Tensor logits;    // M_att
    Tensor heatmap;   // H_att in (0, 1)
  };
  Output forward(const Tensor& x, Mode mode);
  void export_state(StateDict& out, const std::string& prefix) const;

  BatchNorm& bn() { return bn_; }
  Conv2d& conv_residual() { return conv_residual_; }
  Conv2d& conv_logits() { return conv_logits_; }

 private:
  BatchNorm bn_;
  Conv2d conv_residual_;  // same hyperparameters as the feature conv
  Conv2d conv_logits_;    // -> one channel
};

// Local attention module: X_att = conv1(X) * H_att.
class Lam {
 public:
  Lam() = default;
  explicit Lam(Rng& rng, std::size_t channels = 3);

  struct Output {
    Tensor x_att;
    Tensor h_att;
  };
  Output forward(const Tensor& x, Mode mode);
  // State names: <prefix>.conv1.*, <prefix>.bn.*, <prefix>.conv2.*, <prefix>.conv3.*
  void export_state(StateDict& out, const std::string& prefix) const;

  Conv2d& conv1() { return conv1_; }
  AttentionStream& stream() { return stream_; }

 private:
  std::size_t channels_ = 0;
  Conv2d conv1_;
  AttentionStream stream_;
};

inline constexpr std::size_t kSamPool = 32;

// Semantic attention module: attention stream -> 32x32 average pool ->
// 1024-vector -> MLP -> sigmoid, one weight per sample.
class Sam {
 public:
  Sam() = default;
  // mlp_widths = {1024, hidden1, hidden2, 1}
  Sam(Rng& rng, const std::vector<std::size_t>& mlp_widths = {1024, 256, 64, 1},
      std::size_t channels = 3);

  // N x 1024 (or 1024 for an unbatched input).
  Tensor pooled(const Tensor& x_att, Mode mode);
  // Weights in (0, 1): shape N, or a single-element tensor for an unbatched input.
  Tensor forward(const Tensor& x_att, Mode mode);
  // MLP on precomputed pooled vectors (N x 1024) -> N weights.
  Tensor weight_from_pooled(const Tensor& pooled) const;

  void export_state(StateDict& out, const std::string& prefix) const;

  AttentionStream& stream() { return stream_; }
  MlpHead& mlp() { return mlp_; }

 private:
  AttentionStream stream_;
  MlpHead mlp_;
};

}  // namespace semaforge
