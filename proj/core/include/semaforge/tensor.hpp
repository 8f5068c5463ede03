#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace semaforge {

using Shape = std::vector<std::size_t>;

namespace detail {

// Large activation buffers are recycled through a per-thread cache keyed by
// size, so a training step does not page-fault fresh memory every batch.
void* pool_allocate(std::size_t bytes);
void pool_deallocate(void* ptr, std::size_t bytes) noexcept;

// Default-initialises on resize: buffers that an op overwrites completely are
// never zero-filled first.
template <class T>
struct PooledAllocator {
  using value_type = T;

  PooledAllocator() = default;
  template <class U>
  PooledAllocator(const PooledAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(pool_allocate(n * sizeof(T))); }
  void deallocate(T* p, std::size_t n) noexcept { pool_deallocate(p, n * sizeof(T)); }

  template <class U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }

  template <class U>
  bool operator==(const PooledAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace detail

using Buffer = std::vector<double, detail::PooledAllocator<double>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Called during backward with the upstream gradient of the op's output and
// one pointer per input into that input's gradient buffer. A pointer is null
// when the corresponding input does not require a gradient. Implementations
// must accumulate (+=), never assign.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<double* const> input_grads)>;

namespace detail {
struct TensorImpl;
}

// Dense row-major float64 array with optional reverse-mode gradient tracking.
//
// Tensor is a handle: copies share storage, which is how parameters are
// shared between a layer, the graph built from it and the optimizer. Only
// leaves (tensors created directly, not produced by an op) may be mutated
// in place, and only outside of a recorded forward pass.
//
// Images and feature maps use height x width x channels, with an optional
// leading batch dimension (N x H x W x C).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);
  Tensor(Shape shape, Buffer values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }
  // Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Leaves only; throws StateError on op outputs.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse-mode sweep from this scalar. Frees the graph afterwards; a second
  // call on the same result throws StateError.
  void backward() const;

  // New leaf holding a copy of the values, detached from any graph.
  Tensor detach() const;
  // Differentiable view with a new shape of equal element count.
  Tensor reshape(Shape shape) const;

  // Records an op result. When gradient recording is off, or no input
  // requires a gradient, the result is a plain leaf and `backward` is dropped.
  static Tensor from_op(const char* op_name, Shape shape, Buffer values,
                        std::vector<Tensor> inputs, BackwardFn backward);

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  const detail::TensorImpl& impl() const;
  detail::TensorImpl& impl();

  std::shared_ptr<detail::TensorImpl> impl_;
};

// Gradient recording is per thread; each worker thread owns its own graphs.
bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// --- elementwise and reductions -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor neg(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// log(max(x, floor)); the clamped region has zero gradient.
Tensor log_clamped(const Tensor& a, double floor);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// --- matrix-shaped ops -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// [..., C] * [..., 1] with the single mask channel broadcast over C.
Tensor hadamard(const Tensor& features, const Tensor& mask);
// Sum over the last axis of an N x K tensor -> N.
Tensor row_sum(const Tensor& a);
// Joins k tensors of shape N (or N x 1) into N x k.
Tensor concat_columns(const std::vector<Tensor>& columns);
// out[n] = x[n, index[n]] for an N x K tensor.
Tensor pick(const Tensor& x, std::span<const int> index);

}  // namespace semaforge
