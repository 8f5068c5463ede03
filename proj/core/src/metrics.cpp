#include "semaforge/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "semaforge/errors.hpp"

namespace semaforge {

RocCurve roc_auc(std::span<const double> scores, std::span<const int> positive) {
  if (scores.size() != positive.size()) {
    throw ContractError("roc_auc: " + std::to_string(scores.size()) + " scores but " +
                        std::to_string(positive.size()) + " labels");
  }
  std::size_t pos = 0;
  for (int p : positive) {
    if (p != 0 && p != 1) throw ContractError("roc_auc: labels must be 0 or 1");
    pos += static_cast<std::size_t>(p);
  }
  const std::size_t neg = positive.size() - pos;
  if (pos == 0 || neg == 0) {
    throw ContractError("roc_auc: need at least one positive and one negative sample");
  }

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve out;
  out.points.push_back({0.0, 0.0});
  // Integer counts keep the area exact up to the final division.
  std::size_t tp = 0, fp = 0;
  long double twice_area = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    const std::size_t tp_prev = tp, fp_prev = fp;
    for (; i < order.size() && scores[order[i]] == t; ++i) {
      if (positive[order[i]]) {
        ++tp;
      } else {
        ++fp;
      }
    }
    twice_area += static_cast<long double>(fp - fp_prev) * static_cast<long double>(tp + tp_prev);
    out.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos), t});
  }
  out.auc = static_cast<double>(twice_area / (2.0L * static_cast<long double>(pos) *
                                              static_cast<long double>(neg)));
  return out;
}

double ConfusionMatrix::accuracy() const {
  if (total() == 0) throw ContractError("accuracy: empty confusion matrix");
  return static_cast<double>(true_fake + true_real) / static_cast<double>(total());
}

ConfusionMatrix confusion_matrix(std::span<const int> labels, std::span<const int> predicted) {
  if (labels.size() != predicted.size()) throw ContractError("confusion_matrix: size mismatch");
  ConfusionMatrix c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool fake = labels[i] == 0, called_fake = predicted[i] == 0;
    if (fake && called_fake) ++c.true_fake;
    if (fake && !called_fake) ++c.false_real;
    if (!fake && called_fake) ++c.false_fake;
    if (!fake && !called_fake) ++c.true_real;
  }
  return c;
}

}  // namespace semaforge
