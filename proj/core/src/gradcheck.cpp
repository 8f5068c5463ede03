#include "semaforge/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "semaforge/errors.hpp"

namespace semaforge {

namespace {

double evaluate(const std::function<Tensor()>& f, const std::string& where) {
  NoGradGuard no_grad;
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("gradient_check: non-finite output at " + where);
  return v;
}

}  // namespace

GradCheckResult gradient_check(const std::function<Tensor()>& f,
                               const std::vector<NamedTensor>& wrt, double eps) {
  std::vector<NamedTensor> targets = wrt;
  for (NamedTensor& t : targets) {
    if (!t.tensor.is_leaf()) throw ContractError("gradient_check: '" + t.name + "' is not a leaf");
    t.tensor.set_requires_grad(true);
    t.tensor.zero_grad();
  }
  Tensor loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("gradient_check: non-finite loss at x");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  for (NamedTensor& t : targets) {
    analytic.emplace_back(t.tensor.numel(), 0.0);
    if (t.tensor.has_grad()) {
      auto g = t.tensor.grad();
      std::copy(g.begin(), g.end(), analytic.back().begin());
    }
  }

  GradCheckResult result;
  const double floor = 1e-6 * std::max(1.0, std::abs(loss.item()));
  for (std::size_t k = 0; k < targets.size(); ++k) {
    auto values = targets[k].tensor.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const std::string where = targets[k].name + "[" + std::to_string(i) + "]";
      const double original = values[i];
      const double a = analytic[k][i];
      struct Probe {
        double rel, kink;
      };
      auto probe = [&](double h) {
        values[i] = original + h;
        const double plus = evaluate(f, where);
        values[i] = original - h;
        const double minus = evaluate(f, where);
        values[i] = original;
        const double numeric = (plus - minus) / (2.0 * h);
        const double one_sided_gap = std::abs((plus - loss.item()) - (loss.item() - minus)) / h;
        const double error = std::abs(a - numeric);
        return Probe{error / std::max(floor, std::abs(a) + std::abs(numeric)),
                     one_sided_gap >= error ? 1.0 : 0.0};
      };
      Probe p = probe(eps);
      if (p.rel > 1e-4 && p.kink > 0.0) {
        ++result.kinks;
        for (double h : {eps / 10.0, eps / 100.0}) p.rel = std::min(p.rel, probe(h).rel);
      }
      if (p.rel > result.max_rel_error || result.worst.empty()) {
        result.max_rel_error = p.rel;
        result.worst = where;
      }
    }
    targets[k].tensor.zero_grad();
  }
  return result;
}

double gradient_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                      double eps) {
  Tensor leaf = Tensor::parameter(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
  return gradient_check([&] { return f(leaf); }, {{"x", leaf}}, eps).max_rel_error;
}

}  // namespace semaforge
