#include "veil/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "veil/error.hpp"

namespace veil {

const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::data: return "data";
    case ErrorCategory::checkpoint: return "checkpoint";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::contract: return "contract";
  }
  return "unknown";
}

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<float>& TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  return grad;
}

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<bool> g_checked{false};

void validate_shape(const Shape& shape) {
  for (auto d : shape)
    if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
}

}  // namespace

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<TensorImpl>()) {
  validate_shape(shape);
  impl_->data.assign(static_cast<std::size_t>(numel_of(shape)), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : impl_(std::make_shared<TensorImpl>()) {
  validate_shape(shape);
  if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " +
                         shape_str(shape));
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::from_impl(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

const Shape& Tensor::shape() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(r));
  return impl_->shape[static_cast<std::size_t>(a)];
}

std::int64_t Tensor::numel() const { return numel_of(shape()); }

std::span<float> Tensor::data() {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

std::span<const float> Tensor::data() const {
  if (!impl_) throw ContractError("use of undefined tensor");
  return impl_->data;
}

float Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (impl_->grad_fn) throw ContractError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }

Tensor Tensor::grad() const {
  if (!has_grad()) return Tensor::zeros(shape());
  return Tensor(shape(), impl_->grad);
}

std::span<float> Tensor::grad_span() { return impl_->ensure_grad(); }

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

void Tensor::backward() {
  if (!impl_) throw ContractError("backward() on undefined tensor");
  if (numel() != 1) throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  if (impl_->consumed) throw ContractError("backward() already ran on this graph; rebuild it first");
  if (!impl_->requires_grad) throw ContractError("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->grad_fn && next < node->grad_fn->inputs.size()) {
      TensorImpl* child = node->grad_fn->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  impl_->ensure_grad();
  impl_->grad[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (!node->grad_fn) continue;
    node->ensure_grad();
    for (auto& in : node->grad_fn->inputs)
      if (in->requires_grad) in->ensure_grad();
    node->grad_fn->apply(*node);
  }
  // Release the graph; intermediates keep no history or gradient.
  for (TensorImpl* node : order) {
    if (node->grad_fn) {
      node->grad_fn.reset();
      if (node != impl_.get()) node->grad.clear();
    }
  }
  impl_->consumed = true;
}

Tensor Tensor::detach() const {
  Tensor t(shape(), impl_->data);
  return t;
}

Tensor Tensor::clone() const { return detach(); }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

void set_checked_mode(bool on) { g_checked.store(on); }
bool checked_mode() { return g_checked.load(); }

namespace detail {

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

bool needs_grad(const std::vector<Tensor>& inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor& t : inputs)
    if (t.defined() && t.requires_grad()) return true;
  return false;
}

void attach(Tensor& out, const char* name, std::vector<Tensor> inputs,
            std::function<void(TensorImpl& out)> fn) {
  auto gf = std::make_shared<GradFn>();
  gf->name = name;
  gf->inputs.reserve(inputs.size());
  for (auto& t : inputs)
    if (t.defined()) gf->inputs.push_back(t.impl());
  gf->apply = std::move(fn);
  auto impl = out.impl();
  impl->requires_grad = true;
  impl->grad_fn = std::move(gf);
}

void check_finite(const Tensor& t, const char* op) {
  if (!g_checked.load()) return;
  for (float v : t.data())
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
}

}  // namespace detail

}  // namespace veil
