#include "semaforge/optim.hpp"

#include <cmath>
#include <string>

#include "semaforge/errors.hpp"

namespace semaforge {

double StepSchedule::lr_at_epoch(int epoch) const {
  if (epoch < 0) throw ContractError("lr_at_epoch: negative epoch " + std::to_string(epoch));
  if (epoch >= total_epochs) {
    throw ContractError("lr_at_epoch: epoch " + std::to_string(epoch) + " beyond the " +
                        std::to_string(total_epochs) + "-epoch schedule");
  }
  if (period <= 0) throw ContractError("lr_at_epoch: decay period must be positive");
  double lr = lr0;
  for (int i = 0; i < epoch / period; ++i) lr *= factor;
  return lr;
}

SgdMomentum::SgdMomentum(std::vector<NamedTensor> params, double lr, double momentum)
    : params_(std::move(params)), lr_(lr), momentum_(momentum) {
  velocity_.reserve(params_.size());
  for (const NamedTensor& p : params_) velocity_.emplace_back(p.tensor.numel(), 0.0);
}

void SgdMomentum::step() {
  for (const NamedTensor& p : params_) {
    if (!p.tensor.has_grad()) {
      throw ContractError("sgd_step: parameter '" + p.name + "' has no gradient");
    }
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    auto w = t.mutable_values();
    auto g = t.grad();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      w[j] -= lr_ * v[j];
    }
  }
  zero_grad();
}

void SgdMomentum::zero_grad() {
  for (NamedTensor& p : params_) p.tensor.zero_grad();
}

}  // namespace semaforge
