#include "veil/diffusion.hpp"

#include <cmath>

#include "veil/error.hpp"
#include "veil/ops.hpp"

namespace veil {

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "cosine") return ScheduleKind::cosine;
  throw ConfigError("unknown schedule kind '" + s + "' (expected linear or cosine)");
}

std::string to_string(ScheduleKind k) { return k == ScheduleKind::linear ? "linear" : "cosine"; }

LossWeighting parse_loss_weighting(const std::string& s) {
  if (s == "uniform_v") return LossWeighting::uniform_v;
  if (s == "snr") return LossWeighting::snr;
  throw ConfigError("unknown loss weighting '" + s + "' (expected uniform_v or snr)");
}

std::string to_string(LossWeighting w) { return w == LossWeighting::uniform_v ? "uniform_v" : "snr"; }

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > steps) throw ContractError("beta index " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
  return betas[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps)
    throw ContractError("diffusion step " + std::to_string(t) + " outside [0, " + std::to_string(steps) + "]");
  return alpha_bars[static_cast<std::size_t>(t)];
}

NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
  if (betas.empty()) throw ConfigError("schedule needs at least one step");
  NoiseSchedule s;
  s.steps = static_cast<int>(betas.size());
  s.betas = betas;
  s.alpha_bars.assign(betas.size() + 1, 1.0);
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] > 0.0 && betas[i] < 1.0))
      throw ConfigError("beta_" + std::to_string(i + 1) + " = " + std::to_string(betas[i]) + " not in (0, 1)");
    s.alpha_bars[i + 1] = s.alpha_bars[i] * (1.0 - betas[i]);
  }
  return s;
}

NoiseSchedule make_schedule(int steps, ScheduleKind kind, double beta_min, double beta_max) {
  if (steps < 1) throw ConfigError("schedule step count must be >= 1");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
    throw ConfigError("schedule bounds must satisfy 0 < beta_min <= beta_max < 1");
  std::vector<double> betas(static_cast<std::size_t>(steps));
  if (kind == ScheduleKind::linear) {
    const double scale = 1000.0 / steps;
    // Very short chains would push beta past 1; cap like the cosine schedule.
    const double hi = std::min(beta_max * scale, 0.999);
    const double lo = std::min(beta_min * scale, hi);
    for (int i = 0; i < steps; ++i)
      betas[static_cast<std::size_t>(i)] = steps == 1 ? lo : lo + (hi - lo) * i / (steps - 1);
  } else {
    constexpr double s = 0.008;
    auto f = [&](double t) {
      const double c = std::cos((t / steps + s) / (1.0 + s) * M_PI / 2.0);
      return c * c;
    };
    for (int i = 0; i < steps; ++i)
      betas[static_cast<std::size_t>(i)] = std::min(1.0 - f(i + 1) / f(i), 0.999);
  }
  return schedule_from_betas(betas);
}

namespace {

// a * x + b * y elementwise, as a differentiable expression.
Tensor affine2(const Tensor& x, double a, const Tensor& y, double b) {
  if (x.shape() != y.shape())
    throw DimensionError("shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  return add(scale(x, static_cast<float>(a)), scale(y, static_cast<float>(b)));
}

}  // namespace

Tensor forward_marginal(const Tensor& x0, int t, const Tensor& noise, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  if (t == 0) {
    if (noise.shape() != x0.shape()) throw DimensionError("noise shape differs from x0");
    return x0.clone();
  }
  return affine2(x0, std::sqrt(ab), noise, std::sqrt(1.0 - ab));
}

Tensor forward_step(const Tensor& x_prev, int t, const Tensor& noise, const NoiseSchedule& sched) {
  const double b = sched.beta(t);
  return affine2(x_prev, std::sqrt(1.0 - b), noise, std::sqrt(b));
}

Posterior posterior_mean_var(const Tensor& x_t, const Tensor& x0, int t, const NoiseSchedule& sched) {
  if (t < 1) throw ContractError("posterior undefined at t = " + std::to_string(t) + "; need t >= 1");
  const double ab_t = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t - 1);
  const double b = sched.beta(t);
  const double c0 = std::sqrt(ab_prev) * b / (1.0 - ab_t);
  const double ct = std::sqrt(1.0 - b) * (1.0 - ab_prev) / (1.0 - ab_t);
  Posterior p;
  p.variance = b * (1.0 - ab_prev) / (1.0 - ab_t);
  if (t == 1) {
    // abar_0 = 1: the posterior collapses onto x0.
    if (x_t.shape() != x0.shape()) throw DimensionError("x_t and x0 shapes differ");
    p.mean = x0.clone();
    p.variance = 0.0;
    return p;
  }
  p.mean = affine2(x0, c0, x_t, ct);
  return p;
}

Tensor to_v(const Tensor& x0, const Tensor& noise, int t, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  return affine2(noise, std::sqrt(ab), x0, -std::sqrt(1.0 - ab));
}

VDecomposition from_v(const Tensor& z_t, const Tensor& v, int t, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  const double sa = std::sqrt(ab), so = std::sqrt(1.0 - ab);
  return {affine2(z_t, sa, v, -so), affine2(z_t, so, v, sa)};
}

Tensor training_loss(const Tensor& v_pred, const Tensor& x0, const Tensor& noise, const std::vector<int>& steps,
                     const NoiseSchedule& sched, const LossConfig& cfg) {
  if (v_pred.shape() != x0.shape() || noise.shape() != x0.shape())
    throw DimensionError("training_loss shape mismatch: v_pred " + shape_str(v_pred.shape()) + ", x0 " +
                         shape_str(x0.shape()) + ", noise " + shape_str(noise.shape()));
  const auto batch = x0.dim(0);
  if (static_cast<std::int64_t>(steps.size()) != batch)
    throw DimensionError("training_loss needs one diffusion step per batch element");
  const std::int64_t per = x0.numel() / batch;
  // Targets and weights are constants; only v_pred carries gradient.
  Tensor target(x0.shape());
  Tensor weight(x0.shape());
  for (std::int64_t b = 0; b < batch; ++b) {
    const double ab = sched.alpha_bar(steps[static_cast<std::size_t>(b)]);
    const float sa = static_cast<float>(std::sqrt(ab)), so = static_cast<float>(std::sqrt(1.0 - ab));
    const float w = cfg.weighting == LossWeighting::uniform_v ? 1.0f : static_cast<float>(ab);
    for (std::int64_t i = b * per; i < (b + 1) * per; ++i) {
      target[i] = sa * noise[i] - so * x0[i];
      weight[i] = w;
    }
  }
  return mean(mul(square(sub(v_pred, target)), weight));
}

Tensor training_loss(const Tensor& v_pred, const Tensor& x0, const Tensor& noise, int t, const NoiseSchedule& sched,
                     const LossConfig& cfg) {
  return training_loss(v_pred, x0, noise, std::vector<int>(static_cast<std::size_t>(x0.dim(0)), t), sched, cfg);
}

}  // namespace veil
