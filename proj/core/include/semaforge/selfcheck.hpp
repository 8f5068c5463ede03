#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace semaforge {

struct LayerCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst;  // coordinate with the largest error
};

// Finite-difference checks (eps 1e-5) of every layer and both attention
// modules on random inputs no larger than 32x32, with every parameter
// randomised (biases and batch-norm affine terms included).
std::vector<LayerCheck> gradcheck_suite(std::uint64_t seed = 0);

}  // namespace semaforge
