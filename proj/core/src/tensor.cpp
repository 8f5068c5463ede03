#include "semaforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "semaforge/errors.hpp"

namespace semaforge {

namespace detail {

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;
  bool requires_grad = false;
  bool consumed = false;
  const char* op_name = nullptr;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;

  bool interior() const { return static_cast<bool>(backward); }
};

}  // namespace detail

namespace {

thread_local bool g_grad_mode = true;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : Tensor(std::move(shape), Buffer(values.begin(), values.end())) {}

Tensor::Tensor(Shape shape, Buffer values) : impl_(std::make_shared<detail::TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  return t;
}

const detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw StateError("tensor: use of undefined tensor");
  return *impl_;
}

detail::TensorImpl& Tensor::impl() {
  if (!impl_) throw StateError("tensor: use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().data.size(); }

std::span<const double> Tensor::values() const { return impl().data; }

std::span<double> Tensor::mutable_values() {
  if (impl().interior()) throw StateError("tensor: cannot mutate the output of a recorded op");
  return impl().data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("tensor: item() on tensor of shape " + shape_str(shape()));
  }
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (impl().interior()) throw StateError("tensor: requires_grad is fixed on op outputs");
  impl().requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return !impl().interior(); }

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw StateError("tensor: no gradient has been populated");
  return impl().grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!has_grad()) impl().grad.assign(numel(), 0.0);
  return impl().grad;
}

void Tensor::zero_grad() { impl().grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), impl().data); }

Tensor Tensor::reshape(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(shape()) + " as " +
                         shape_str(new_shape));
  }
  return from_op("reshape", std::move(new_shape), impl().data, {*this},
                 [](std::span<const double> g, std::span<double* const> in) {
                   if (!in[0]) return;
                   for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                 });
}

Tensor Tensor::from_op(const char* op_name, Shape shape, Buffer values,
                       std::vector<Tensor> inputs, BackwardFn backward) {
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const Tensor& in : inputs) {
    for (double v : in.values()) inputs_finite = inputs_finite && std::isfinite(v);
  }
  if (inputs_finite) {
    for (double v : values) {
      if (!std::isfinite(v)) {
        throw NumericError(std::string(op_name) + ": non-finite output on finite inputs");
      }
    }
  }
#endif
  Tensor out(std::move(shape), std::move(values));
  if (!g_grad_mode) return out;
  bool any = false;
  for (const Tensor& in : inputs) any = any || in.requires_grad();
  if (!any) return out;

  auto& impl = *out.impl_;
  impl.requires_grad = true;
  impl.op_name = op_name;
  impl.backward = std::move(backward);
  impl.inputs.reserve(inputs.size());
  for (Tensor& in : inputs) impl.inputs.push_back(std::move(in.impl_));
  return out;
}

void Tensor::backward() const {
  auto& root = const_cast<detail::TensorImpl&>(impl());
  if (root.consumed) {
    throw StateError("backward: graph already consumed; rebuild the forward pass first");
  }
  if (root.data.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) {
    throw ContractError("backward: loss does not depend on any tensor requiring grad");
  }

  // Iterative post-order DFS gives a topological order with inputs first.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(&root, 0);
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::TensorImpl* child = node->inputs[next++].get();
      if (child->interior() && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  const bool root_is_op = root.interior();
  if (root_is_op) {
    root.grad.assign(1, 1.0);
  } else {
    // A bare leaf loss: d(loss)/d(loss) = 1.
    if (root.grad.empty()) root.grad.assign(1, 0.0);
    root.grad[0] += 1.0;
  }

  std::vector<double*> input_grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (!node->interior()) continue;
    if (node->grad.empty()) node->grad.assign(node->data.size(), 0.0);
    input_grads.clear();
    for (const auto& in : node->inputs) {
      if (!in->requires_grad) {
        input_grads.push_back(nullptr);
        continue;
      }
      if (in->grad.empty()) in->grad.assign(in->data.size(), 0.0);
      input_grads.push_back(in->grad.data());
    }
    node->backward(node->grad, input_grads);
    // Released as soon as it has been propagated so the pool can recycle it.
    if (node != &root) Buffer().swap(node->grad);
  }

  for (detail::TensorImpl* node : order) {
    if (!node->interior()) continue;
    node->backward = nullptr;
    node->inputs.clear();
    if (node != &root) Buffer().swap(node->grad);
  }
  root.consumed = root_is_op;
}

// --- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Buffer out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return Tensor::from_op("add", a.shape(), std::move(out), {a, b},
                         [](std::span<const double> g, std::span<double* const> in) {
                           for (double* dst : in) {
                             if (!dst) continue;
                             for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                           }
                         });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Buffer out(a.values().begin(), a.values().end());
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return Tensor::from_op("sub", a.shape(), std::move(out), {a, b},
                         [](std::span<const double> g, std::span<double* const> in) {
                           if (in[0])
                             for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                           if (in[1])
                             for (std::size_t i = 0; i < g.size(); ++i) in[1][i] -= g[i];
                         });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto av = a.values();
  auto bv = b.values();
  Buffer out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::from_op("mul", a.shape(), std::move(out), {a, b},
                         [a, b](std::span<const double> g, std::span<double* const> in) {
                           auto av = a.values();
                           auto bv = b.values();
                           if (in[0])
                             for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i] * bv[i];
                           if (in[1])
                             for (std::size_t i = 0; i < g.size(); ++i) in[1][i] += g[i] * av[i];
                         });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  auto av = a.values();
  auto bv = b.values();
  Buffer out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
  return Tensor::from_op("div", a.shape(), std::move(out), {a, b},
                         [a, b](std::span<const double> g, std::span<double* const> in) {
                           auto av = a.values();
                           auto bv = b.values();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             if (in[0]) in[0][i] += g[i] / bv[i];
                             if (in[1]) in[1][i] -= g[i] * av[i] / (bv[i] * bv[i]);
                           }
                         });
}

Tensor scale(const Tensor& a, double factor) {
  Buffer out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  return Tensor::from_op("scale", a.shape(), std::move(out), {a},
                         [factor](std::span<const double> g, std::span<double* const> in) {
                           if (!in[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += factor * g[i];
                         });
}

Tensor add_scalar(const Tensor& a, double offset) {
  Buffer out(a.values().begin(), a.values().end());
  for (double& v : out) v += offset;
  return Tensor::from_op("add_scalar", a.shape(), std::move(out), {a},
                         [](std::span<const double> g, std::span<double* const> in) {
                           if (!in[0]) return;
                           for (std::size_t i = 0; i < g.size(); ++i) in[0][i] += g[i];
                         });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  return Tensor::from_op("sum", Shape{}, {total}, {a},
                         [n = a.numel()](std::span<const double> g, std::span<double* const> in) {
                           if (!in[0]) return;
                           for (std::size_t i = 0; i < n; ++i) in[0][i] += g[0];
                         });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ContractError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor log_clamped(const Tensor& a, double floor) {
  auto av = a.values();
  Buffer out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(av[i], floor));
  return Tensor::from_op("log_clamped", a.shape(), std::move(out), {a},
                         [a, floor](std::span<const double> g, std::span<double* const> in) {
                           if (!in[0]) return;
                           auto av = a.values();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             if (av[i] > floor) in[0][i] += g[i] / av[i];
                           }
                         });
}

namespace {

void relu_grad(const double* __restrict x, const double* __restrict g, std::size_t n,
               double* __restrict dx) {
  for (std::size_t i = 0; i < n; ++i) dx[i] += x[i] > 0.0 ? g[i] : 0.0;
}

}  // namespace

Tensor relu(const Tensor& a) {
  auto av = a.values();
  Buffer out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
  return Tensor::from_op("relu", a.shape(), std::move(out), {a},
                         [a](std::span<const double> g, std::span<double* const> in) {
                           if (in[0]) relu_grad(a.values().data(), g.data(), g.size(), in[0]);
                         });
}

namespace {

// Clamped to the nearest doubles inside (0, 1): past |x| ~ 37 the exact
// value rounds to 1, and far enough below zero it underflows to 0.
double stable_sigmoid(double x) {
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  if (x >= 0.0) return std::min(hi, 1.0 / (1.0 + std::exp(-x)));
  const double e = std::exp(x);
  return std::max(lo, e / (1.0 + e));
}

}  // namespace

Tensor sigmoid(const Tensor& a) {
  auto av = a.values();
  Buffer out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(av[i]);
  auto saved = std::make_shared<Buffer>(out);
  return Tensor::from_op("sigmoid", a.shape(), std::move(out), {a},
                         [saved](std::span<const double> g, std::span<double* const> in) {
                           if (!in[0]) return;
                           const auto& s = *saved;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             in[0][i] += g[i] * s[i] * (1.0 - s[i]);
                           }
                         });
}

// --- matrix-shaped ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto av = a.values();
  auto bv = b.values();
  Buffer out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double x = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += x * bv[p * n + j];
    }
  }
  return Tensor::from_op(
      "matmul", Shape{m, n}, std::move(out), {a, b},
      [a, b, m, k, n](std::span<const double> g, std::span<double* const> in) {
        auto av = a.values();
        auto bv = b.values();
        if (in[0]) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
              in[0][i * k + p] += acc;
            }
        }
        if (in[1]) {
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double x = av[i * k + p];
              for (std::size_t j = 0; j < n; ++j) in[1][p * n + j] += x * g[i * n + j];
            }
        }
      });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto av = a.values();
  Buffer out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return Tensor::from_op("transpose", Shape{c, r}, std::move(out), {a},
                         [r, c](std::span<const double> g, std::span<double* const> in) {
                           if (!in[0]) return;
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < c; ++j) in[0][i * c + j] += g[j * r + i];
                         });
}

Tensor hadamard(const Tensor& features, const Tensor& mask) {
  const Shape& fs = features.shape();
  const Shape& ms = mask.shape();
  bool ok = fs.size() >= 2 && fs.size() == ms.size() && ms.back() == 1;
  for (std::size_t i = 0; ok && i + 1 < fs.size(); ++i) ok = fs[i] == ms[i];
  if (!ok) {
    throw DimensionError("hadamard: features " + shape_str(fs) + " and mask " + shape_str(ms) +
                         " must agree on all but a single-channel last axis");
  }
  const std::size_t channels = fs.back();
  const std::size_t sites = mask.numel();
  auto fv = features.values();
  auto mv = mask.values();
  Buffer out(fv.size());
  for (std::size_t s = 0; s < sites; ++s)
    for (std::size_t c = 0; c < channels; ++c) out[s * channels + c] = fv[s * channels + c] * mv[s];
  return Tensor::from_op(
      "hadamard", fs, std::move(out), {features, mask},
      [features, mask, channels, sites](std::span<const double> g, std::span<double* const> in) {
        auto fv = features.values();
        auto mv = mask.values();
        for (std::size_t s = 0; s < sites; ++s) {
          double acc = 0.0;
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t i = s * channels + c;
            if (in[0]) in[0][i] += g[i] * mv[s];
            acc += g[i] * fv[i];
          }
          if (in[1]) in[1][s] += acc;
        }
      });
}

Tensor row_sum(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("row_sum: expected N x K, got " + shape_str(a.shape()));
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  auto av = a.values();
  Buffer out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r] += av[r * cols + c];
  return Tensor::from_op("row_sum", Shape{rows}, std::move(out), {a},
                         [rows, cols](std::span<const double> g, std::span<double* const> in) {
                           if (!in[0]) return;
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < cols; ++c) in[0][r * cols + c] += g[r];
                         });
}

Tensor concat_columns(const std::vector<Tensor>& columns) {
  if (columns.empty()) throw ContractError("concat_columns: no columns");
  const std::size_t rows = columns.front().numel();
  for (const Tensor& c : columns) {
    if (c.numel() != rows || c.rank() > 2 || (c.rank() == 2 && c.dim(1) != 1)) {
      throw DimensionError("concat_columns: column of shape " + shape_str(c.shape()) +
                           " does not match " + std::to_string(rows) + " rows");
    }
  }
  const std::size_t k = columns.size();
  Buffer out(rows * k);
  for (std::size_t j = 0; j < k; ++j) {
    auto cv = columns[j].values();
    for (std::size_t r = 0; r < rows; ++r) out[r * k + j] = cv[r];
  }
  return Tensor::from_op("concat_columns", Shape{rows, k}, std::move(out), columns,
                         [rows, k](std::span<const double> g, std::span<double* const> in) {
                           for (std::size_t j = 0; j < k; ++j) {
                             if (!in[j]) continue;
                             for (std::size_t r = 0; r < rows; ++r) in[j][r] += g[r * k + j];
                           }
                         });
}

Tensor pick(const Tensor& x, std::span<const int> index) {
  if (x.rank() != 2 || x.dim(0) != index.size()) {
    throw DimensionError("pick: expected N x K with N == " + std::to_string(index.size()) +
                         ", got " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<std::size_t> idx(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] < 0 || static_cast<std::size_t>(index[r]) >= cols) {
      throw ContractError("pick: index " + std::to_string(index[r]) + " outside [0, " +
                          std::to_string(cols) + ")");
    }
    idx[r] = static_cast<std::size_t>(index[r]);
  }
  auto xv = x.values();
  Buffer out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = xv[r * cols + idx[r]];
  return Tensor::from_op("pick", Shape{rows}, std::move(out), {x},
                         [idx, cols](std::span<const double> g, std::span<double* const> in) {
                           if (!in[0]) return;
                           for (std::size_t r = 0; r < idx.size(); ++r) in[0][r * cols + idx[r]] += g[r];
                         });
}

}  // namespace semaforge
