#include "semaforge/backbone.hpp"

#include "semaforge/errors.hpp"

namespace semaforge {

Backbone::Backbone(const BackboneConfig& config, std::size_t input_size, Rng& rng,
                   std::size_t in_channels) {
  if (config.stages.empty()) throw ContractError("Backbone: at least one stage required");
  if (config.hidden == 0) throw ContractError("Backbone: hidden width must be positive");
  std::size_t side = input_size;
  std::size_t channels = in_channels;
  for (std::size_t width : config.stages) {
    if (width == 0) throw ContractError("Backbone: stage width must be positive");
    convs_.emplace_back(channels, width, rng);
    norms_.emplace_back(width);
    channels = width;
    side /= 2;
  }
  if (side == 0) {
    throw ContractError("Backbone: input size " + std::to_string(input_size) + " too small for " +
                        std::to_string(config.stages.size()) + " pooling stages");
  }
  flat_ = side * side * channels;
  fc1_ = Linear(flat_, config.hidden, rng);
  fc2_ = Linear(config.hidden, 2, rng);
}

Tensor Backbone::forward(const Tensor& x, Mode mode) {
  const bool batched = x.rank() == 4;
  Tensor h = batched ? x : x.reshape({1, x.dim(0), x.dim(1), x.dim(2)});
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    h = max_pool2x2(relu(norms_[i].forward(convs_[i].forward(h), mode)));
  }
  const std::size_t n = h.dim(0);
  if (h.numel() != n * flat_) {
    throw DimensionError("Backbone: input " + shape_str(x.shape()) +
                         " does not match the configured fragment size");
  }
  Tensor logits = fc2_.forward(relu(fc1_.forward(h.reshape({n, flat_}))));
  return batched ? logits : logits.reshape({2});
}

void Backbone::export_state(StateDict& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    const std::string stage = prefix + ".stage" + std::to_string(i);
    convs_[i].export_state(out, stage + ".conv");
    norms_[i].export_state(out, stage + ".bn");
  }
  fc1_.export_state(out, prefix + ".fc1");
  fc2_.export_state(out, prefix + ".fc2");
}

}  // namespace semaforge
