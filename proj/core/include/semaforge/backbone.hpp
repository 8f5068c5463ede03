#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "semaforge/nn.hpp"

namespace semaforge {

struct BackboneConfig {
  std::vector<std::size_t> stages = {8, 16, 32};
  std::size_t hidden = 64;
};

// Stages of conv3x3 + batch-norm + relu, each followed by a 2x2 max-pool,
// then linear -> relu -> linear emitting two logits (fake, real).
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, std::size_t input_size, Rng& rng,
           std::size_t in_channels = 3);

  // N x S x S x C -> N x 2 (or S x S x C -> 2).
  Tensor forward(const Tensor& x, Mode mode);
  // State names: <prefix>.stage<i>.conv.*, <prefix>.stage<i>.bn.*, <prefix>.fc1.*, <prefix>.fc2.*
  void export_state(StateDict& out, const std::string& prefix) const;

  std::size_t flat_features() const { return flat_; }
  Linear& head_output() { return fc2_; }

 private:
  std::vector<Conv2d> convs_;
  std::vector<BatchNorm> norms_;
  Linear fc1_;
  Linear fc2_;
  std::size_t flat_ = 0;
};

}  // namespace semaforge
