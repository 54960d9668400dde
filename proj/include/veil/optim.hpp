#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "veil/params.hpp"

namespace veil {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamMoments {
  std::vector<float> m;
  std::vector<float> v;
};

/// One bias-corrected Adam update of `param` in place. `step` counts from 1.
void adam_step(std::span<float> param, std::span<const float> grad, AdamMoments& state, std::int64_t step,
               const AdamConfig& cfg);

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Updates every parameter that currently holds a gradient and passes `filter`.
  void step(ParamStore& params, const std::function<bool(const std::string&)>& filter = {});
  std::int64_t steps() const { return steps_; }
  AdamConfig& config() { return cfg_; }

 private:
  AdamConfig cfg_;
  std::int64_t steps_ = 0;
  std::map<std::string, AdamMoments> state_;
};

/// Cosine decay from `base` at step 0 to `floor * base` at the last step.
float cosine_lr(float base, std::int64_t step, std::int64_t total, float floor = 0.05f);

/// Scales all gradients so their joint L2 norm is at most `max_norm`; returns the pre-clip norm.
double clip_grad_norm(ParamStore& params, double max_norm);

}  // namespace veil
