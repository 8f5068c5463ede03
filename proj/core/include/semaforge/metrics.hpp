#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace semaforge {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  // Samples scoring >= threshold are called positive; the first point uses +inf.
  double threshold = std::numeric_limits<double>::infinity();
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0, 0) to (1, 1)
  double auc = 0.0;
};

// Threshold sweep over the distinct scores (descending) with trapezoidal
// area. `positive[i]` is 1 for the positive class, 0 otherwise. Tied scores
// form a single step, so they contribute one half to the area.
// Throws ContractError when either class is absent or sizes differ.
RocCurve roc_auc(std::span<const double> scores, std::span<const int> positive);

// Positive class = fake.
struct ConfusionMatrix {
  std::size_t true_fake = 0;   // fake called fake
  std::size_t false_real = 0;  // fake called real
  std::size_t false_fake = 0;  // real called fake
  std::size_t true_real = 0;   // real called real

  std::size_t total() const { return true_fake + false_real + false_fake + true_real; }
  double accuracy() const;
};

// Labels and predictions use 0 = fake, 1 = real.
ConfusionMatrix confusion_matrix(std::span<const int> labels, std::span<const int> predicted);

}  // namespace semaforge
