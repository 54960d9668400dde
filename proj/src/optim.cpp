#include "veil/optim.hpp"

#include <algorithm>
#include <cmath>

#include "veil/error.hpp"

namespace veil {

void adam_step(std::span<float> param, std::span<const float> grad, AdamMoments& state, std::int64_t step,
               const AdamConfig& cfg) {
  if (grad.size() != param.size())
    throw DimensionError("adam_step: grad has " + std::to_string(grad.size()) + " entries, param has " +
                         std::to_string(param.size()));
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0f);
    state.v.assign(param.size(), 0.0f);
  }
  if (state.m.size() != param.size() || state.v.size() != param.size())
    throw DimensionError("adam_step: optimizer state does not match parameter size");
  if (step < 1) throw ContractError("adam_step: step counts from 1");
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(step));
  const float step_size = static_cast<float>(cfg.lr / bc1);
  const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const float g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0f - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0f - cfg.beta2) * g * g;
    param[i] -= step_size * state.m[i] / (std::sqrt(state.v[i]) * inv_sqrt_bc2 + cfg.eps);
  }
}

void Adam::step(ParamStore& params, const std::function<bool(const std::string&)>& filter) {
  ++steps_;
  for (auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    if (filter && !filter(name)) continue;
    adam_step(t.data(), t.impl()->grad, state_[name], steps_, cfg_);
  }
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  double sq = 0.0;
  for (auto& [_, t] : params)
    if (t.has_grad())
      for (float g : t.impl()->grad) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const auto s = static_cast<float>(max_norm / norm);
    for (auto& [_, t] : params)
      if (t.has_grad())
        for (float& g : t.impl()->grad) g *= s;
  }
  return norm;
}

float cosine_lr(float base, std::int64_t step, std::int64_t total, float floor) {
  const double progress = total > 1 ? std::clamp(static_cast<double>(step) / static_cast<double>(total - 1), 0.0, 1.0) : 1.0;
  return static_cast<float>(base * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(M_PI * progress))));
}

}  // namespace veil
