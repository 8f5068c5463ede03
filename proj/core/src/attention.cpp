#include "semaforge/attention.hpp"

#include "semaforge/errors.hpp"

namespace semaforge {

namespace {

void check_channels(const Tensor& x, std::size_t channels, const char* who) {
  if ((x.rank() != 3 && x.rank() != 4) || x.shape().back() != channels) {
    throw DimensionError(std::string(who) + ": expected [N x] H x W x " +
                         std::to_string(channels) + " input, got " + shape_str(x.shape()));
  }
}

}  // namespace

AttentionStream::AttentionStream(std::size_t channels, Rng& rng)
    : bn_(channels), conv_residual_(channels, channels, rng), conv_logits_(channels, 1, rng) {}

AttentionStream::Output AttentionStream::forward(const Tensor& x, Mode mode) {
  Output out;
  out.residual = add(x, conv_residual_.forward(relu(bn_.forward(x, mode))));
  out.logits = conv_logits_.forward(out.residual);
  out.heatmap = sigmoid(out.logits);
  return out;
}

void AttentionStream::export_state(StateDict& out, const std::string& prefix) const {
  bn_.export_state(out, prefix + ".bn");
  conv_residual_.export_state(out, prefix + ".conv2");
  conv_logits_.export_state(out, prefix + ".conv3");
}

Lam::Lam(Rng& rng, std::size_t channels)
    : channels_(channels), conv1_(channels, channels, rng), stream_(channels, rng) {}

Lam::Output Lam::forward(const Tensor& x, Mode mode) {
  check_channels(x, channels_, "lam_forward");
  Output out;
  out.h_att = stream_.forward(x, mode).heatmap;
  out.x_att = hadamard(conv1_.forward(x), out.h_att);
  return out;
}

void Lam::export_state(StateDict& out, const std::string& prefix) const {
  conv1_.export_state(out, prefix + ".conv1");
  stream_.export_state(out, prefix);
}

Sam::Sam(Rng& rng, const std::vector<std::size_t>& mlp_widths, std::size_t channels)
    : stream_(channels, rng), mlp_(mlp_widths, rng) {
  if (mlp_widths.size() != 4 || mlp_widths.front() != kSamPool * kSamPool ||
      mlp_widths.back() != 1) {
    throw ContractError("Sam: MLP widths must be {1024, h1, h2, 1}");
  }
  // Zero output layer: every weight starts at exactly 0.5, so an untrained
  // G-Branch is the unweighted vote.
  for (double& v : mlp_.layer(2).weight().mutable_values()) v = 0.0;
}

Tensor Sam::pooled(const Tensor& x_att, Mode mode) {
  check_channels(x_att, stream_.conv_residual().in_channels(), "sam_weight");
  const bool batched = x_att.rank() == 4;
  const std::size_t n = batched ? x_att.dim(0) : 1;
  Tensor heat = stream_.forward(x_att, mode).heatmap;
  Tensor pooled = adaptive_avg_pool(heat, kSamPool, kSamPool);
  return batched ? pooled.reshape({n, kSamPool * kSamPool})
                 : pooled.reshape({kSamPool * kSamPool});
}

Tensor Sam::weight_from_pooled(const Tensor& pooled) const {
  Tensor logits = mlp_.forward(pooled);
  return sigmoid(logits.reshape({logits.dim(0)}));
}

Tensor Sam::forward(const Tensor& x_att, Mode mode) {
  Tensor v = pooled(x_att, mode);
  if (v.rank() == 1) return weight_from_pooled(v.reshape({1, v.dim(0)}));
  return weight_from_pooled(v);
}

void Sam::export_state(StateDict& out, const std::string& prefix) const {
  stream_.export_state(out, prefix + ".stream");
  mlp_.export_state(out, prefix + ".mlp");
}

}  // namespace semaforge
