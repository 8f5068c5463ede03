#pragma once

#include <cstddef>
#include <vector>

#include "semaforge/nn.hpp"

namespace semaforge {

// lr(epoch) = lr0 * factor^floor(epoch / period), defined for 0 <= epoch < total.
struct StepSchedule {
  double lr0 = 1e-3;
  double factor = 0.1;
  int period = 5;
  int total_epochs = 15;

  double lr_at_epoch(int epoch) const;
};

// Polyak momentum: v <- mu * v + g; w <- w - lr * v. Gradients are cleared
// after every step.
class SgdMomentum {
 public:
  SgdMomentum(std::vector<NamedTensor> params, double lr, double momentum = 0.9);

  void step();
  void zero_grad();

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  double momentum() const { return momentum_; }
  const std::vector<double>& velocity(std::size_t param_index) const {
    return velocity_.at(param_index);
  }

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
};

}  // namespace semaforge
