#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "semaforge/nn.hpp"
#include "semaforge/tensor.hpp"

namespace semaforge {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor name>[<flat index>]"
  std::size_t kinks = 0;  // coordinates re-checked with smaller steps
};

// Compares the reverse-mode gradient of a scalar function against central
// differences, coordinate by coordinate, for every tensor in `wrt`. The
// tensors are perturbed in place (they must be leaves) and restored.
//
// Per coordinate: |analytic - numeric| / max(floor, |analytic| + |numeric|)
// with floor = 1e-6 * max(1, |f(x)|): below that, central differences only
// resolve rounding noise of f. A coordinate whose error is explained by the
// two one-sided slopes disagreeing (a ReLU or max-pool kink inside the step)
// is re-checked with steps eps/10 and eps/100 and keeps its best result.
// Throws NumericError naming the coordinate when f turns non-finite.
GradCheckResult gradient_check(const std::function<Tensor()>& f,
                               const std::vector<NamedTensor>& wrt, double eps = 1e-5);

// Single-input form: f is evaluated on a leaf copy of x.
double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                      double eps = 1e-5);

}  // namespace semaforge
