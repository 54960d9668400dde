#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace veil {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

/// Backward closure attached to a non-leaf tensor. Receives the output node
/// (its data and accumulated grad) and adds contributions to the inputs.
struct GradFn {
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(TensorImpl& out)> apply;
  const char* name = "";
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  bool consumed = false;  // set once backward() has run from this node
  std::shared_ptr<GradFn> grad_fn;

  /// Lazily allocates the gradient buffer and returns it.
  std::vector<float>& ensure_grad();
};

/// Dense row-major float tensor with optional reverse-mode autodiff.
///
/// Copies are shallow: two Tensor handles may share one buffer. Use clone()
/// for an independent copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0f); }
  static Tensor scalar(float v) { return Tensor(Shape{}, v); }
  static Tensor from_impl(std::shared_ptr<TensorImpl> impl);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  /// Size along `axis`; negative axes count from the end.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;

  std::span<float> data();
  std::span<const float> data() const;
  float* ptr() { return data().data(); }
  const float* ptr() const { return data().data(); }
  float item() const;
  float& operator[](std::int64_t i) { return data()[static_cast<std::size_t>(i)]; }
  float operator[](std::int64_t i) const { return data()[static_cast<std::size_t>(i)]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const;
  /// Gradient as a tensor of the same shape; zeros if none accumulated.
  Tensor grad() const;
  std::span<float> grad_span();
  void zero_grad();

  /// Runs reverse-mode differentiation from this scalar.
  void backward();

  /// Same values, no history.
  Tensor detach() const;
  Tensor clone() const;

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Disables graph recording for its lifetime (thread-local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

/// When enabled, every op verifies its output is finite.
void set_checked_mode(bool on);
bool checked_mode();

namespace detail {

/// True when an op on these inputs has to record history.
bool needs_grad(std::initializer_list<const Tensor*> inputs);
bool needs_grad(const std::vector<Tensor>& inputs);

/// Wires `out` into the graph with the given backward closure.
void attach(Tensor& out, const char* name, std::vector<Tensor> inputs,
            std::function<void(TensorImpl& out)> fn);

/// Throws NumericError if checked mode is on and `t` has non-finite values.
void check_finite(const Tensor& t, const char* op);

}  // namespace detail

}  // namespace veil
