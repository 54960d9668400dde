#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "veil/ops.hpp"
#include "veil/rng.hpp"
#include "veil/tensor.hpp"

namespace veil::testing {

inline Tensor random_tensor(Rng& rng, const Shape& shape, float scale = 1.0f) {
  Tensor t = rng.normal_tensor(shape);
  for (float& v : t.data()) v *= scale;
  return t;
}

inline Tensor leaf(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  float m = 0.0f;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

/// Result of comparing analytic and central-difference gradients; the
/// relative error is ||analytic - numeric|| / max(||analytic||, ||numeric||).
struct GradCheck {
  double rel_error = 0.0;
  double analytic_norm = 0.0;
};

/// Checks d/dx of <fn(inputs), R> for a fixed random projection R. Perturbs
/// every element of every input with step h.
inline GradCheck grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& fn, std::vector<Tensor> inputs,
                            std::uint64_t seed = 99, double h = 1e-3) {
  for (auto& t : inputs) {
    t.zero_grad();
    t.set_requires_grad(true);
  }
  Tensor out = fn(inputs);
  Rng rng(seed);
  Tensor proj = rng.normal_tensor(out.shape());
  Tensor loss = sum(mul(out, proj));
  loss.backward();

  auto objective = [&]() {
    NoGradGuard ng;
    Tensor o = fn(inputs);
    double acc = 0.0;
    for (std::int64_t i = 0; i < o.numel(); ++i) acc += static_cast<double>(o[i]) * proj[i];
    return acc;
  };

  double diff2 = 0.0, an2 = 0.0, num2 = 0.0;
  for (auto& t : inputs) {
    Tensor g = t.grad();
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const float orig = t[i];
      t[i] = static_cast<float>(orig + h);
      const double fp = objective();
      t[i] = static_cast<float>(orig - h);
      const double fm = objective();
      t[i] = orig;
      const double num = (fp - fm) / (2.0 * h);
      const double an = g[i];
      diff2 += (an - num) * (an - num);
      an2 += an * an;
      num2 += num * num;
    }
  }
  GradCheck r;
  r.analytic_norm = std::sqrt(an2);
  const double denom = std::max({std::sqrt(an2), std::sqrt(num2), 1e-12});
  r.rel_error = std::sqrt(diff2) / denom;
  return r;
}

}  // namespace veil::testing
