#pragma once

#include <string>
#include <vector>

#include "veil/tensor.hpp"

namespace veil {

enum class ScheduleKind { linear, cosine };

ScheduleKind parse_schedule_kind(const std::string& s);
std::string to_string(ScheduleKind k);

/// Variance schedule of the forward chain. Index t runs over [1, T] for beta
/// and [0, T] for alpha_bar, with alpha_bar(0) == 1.
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> betas;       // betas[t - 1] = beta_t
  std::vector<double> alpha_bars;  // alpha_bars[t] = prod_{s <= t} (1 - beta_s)

  double beta(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const;
};

/// Linear schedules scale [beta_min, beta_max] by 1000 / T so that short
/// chains reach a comparable terminal noise level (betas capped at 0.999).
NoiseSchedule make_schedule(int steps, ScheduleKind kind, double beta_min = 1e-4, double beta_max = 0.02);
NoiseSchedule schedule_from_betas(const std::vector<double>& betas);

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Tensor forward_marginal(const Tensor& x0, int t, const Tensor& noise, const NoiseSchedule& sched);
/// One forward transition x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps.
Tensor forward_step(const Tensor& x_prev, int t, const Tensor& noise, const NoiseSchedule& sched);

struct Posterior {
  Tensor mean;
  double variance = 0.0;
};

/// Mean and variance of q(x_{t-1} | x_t, x0); t >= 1.
Posterior posterior_mean_var(const Tensor& x_t, const Tensor& x0, int t, const NoiseSchedule& sched);

/// v = sqrt(abar_t) eps - sqrt(1 - abar_t) x0. t = 0 is accepted and gives v = eps.
Tensor to_v(const Tensor& x0, const Tensor& noise, int t, const NoiseSchedule& sched);

struct VDecomposition {
  Tensor x0;
  Tensor noise;
};

/// Recovers (x0, eps) from a noisy latent and a v estimate.
VDecomposition from_v(const Tensor& z_t, const Tensor& v, int t, const NoiseSchedule& sched);

enum class LossWeighting {
  uniform_v,  // lambda_t = 1 on the v error
  snr,        // lambda_t = SNR / (1 + SNR) = abar_t, i.e. the eps-space error
};

LossWeighting parse_loss_weighting(const std::string& s);
std::string to_string(LossWeighting w);

struct LossConfig {
  LossWeighting weighting = LossWeighting::uniform_v;
};

/// lambda_t-weighted mean squared v error. `steps` holds one diffusion step
/// per leading-axis element of the tensors.
Tensor training_loss(const Tensor& v_pred, const Tensor& x0, const Tensor& noise, const std::vector<int>& steps,
                     const NoiseSchedule& sched, const LossConfig& cfg = {});
Tensor training_loss(const Tensor& v_pred, const Tensor& x0, const Tensor& noise, int t, const NoiseSchedule& sched,
                     const LossConfig& cfg = {});

}  // namespace veil
