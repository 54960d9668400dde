#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "veil/codec.hpp"
#include "veil/diffusion.hpp"
#include "veil/rng.hpp"
#include "veil/tensor.hpp"
#include "veil/unet.hpp"

namespace veil {

struct GuidanceConfig {
  float omega = 7.5f;    // content guidance scale
  float omega_t = 1.0f;  // temporal guidance scale
  float eta = 0.0f;      // DDIM stochasticity
  int steps = 50;        // DDIM steps

  /// Throws ConfigError unless steps >= 1 and eta lies in [0, 1].
  void validate() const;
};

/// v_img(null) + omega_t (v(null) - v_img(null)) + omega (v(c) - v(null)),
/// evaluated as lerp(v(null), v(c), omega) + (1 - omega_t) (v_img(null) - v(null))
/// so that omega_t = 1 and omega = 1 reproduce their reductions bit for bit.
/// `image_null` may be undefined when omega_t == 1.
Tensor combine_guidance(const Tensor& image_null, const Tensor& video_null, const Tensor& video_cond, float omega,
                        float omega_t);

/// Guided v estimate. Runs the conditional video model, plus the unconditional
/// video model unless omega = omega_t = 1, plus the per-frame image model
/// unless omega_t = 1. `content` is [b, d].
Tensor guided_prediction(const UNet& unet, const Tensor& z_t, int t, const Tensor& structure, const Tensor& content,
                         const GuidanceConfig& g);

/// x0 and eps weights and the noise scale of one DDIM update.
struct DdimCoefficients {
  double x0 = 0.0;
  double eps = 0.0;
  double sigma = 0.0;
};
DdimCoefficients ddim_coefficients(int t, int t_prev, double eta, const NoiseSchedule& sched);

/// z_{t_prev} from z_t and a v estimate. Requires t > t_prev >= 0.
Tensor ddim_step(const Tensor& z_t, const Tensor& v, int t, int t_prev, double eta, const NoiseSchedule& sched,
                 Rng& rng);
/// Sample of N(mu, beta~_t) with mu the posterior mean at the predicted x0. Requires t >= 1.
Tensor ancestral_step(const Tensor& z_t, const Tensor& v, int t, const NoiseSchedule& sched, Rng& rng);

/// `steps` evenly spaced steps, descending from T; the step after the last is 0.
std::vector<int> ddim_timesteps(int total, int steps);

/// v predictor for a latent at step t.
using Predictor = std::function<Tensor(const Tensor& z_t, int t)>;
/// Called on the latent about to be denoised at step t, and with t = 0 on the result.
using LatentHook = std::function<Tensor(const Tensor& z, int t)>;

/// DDIM from z_T through ddim_timesteps(T, steps). Step i draws its noise from
/// rng.substream(i).
Tensor sample_ddim(const Predictor& predict, const Tensor& z_T, int steps, double eta, const NoiseSchedule& sched,
                   const Rng& rng, const LatentHook& hook = {});
/// Ancestral sampling through every step T..1.
Tensor sample_ancestral(const Predictor& predict, const Tensor& z_T, const NoiseSchedule& sched, const Rng& rng);

struct EditModels {
  const UNet& unet;
  const Codec& codec;
  const NoiseSchedule& sched;
};

struct EditRequest {
  Tensor frames;   // [n, 3, H, W] in [-1, 1]
  Tensor depth;    // [n, 1, H, W] in [0, 1]
  Tensor content;  // [d]
  int t_s = 0;
  GuidanceConfig guidance;
  std::uint64_t seed = 0;
};

/// Structure from depth, guided DDIM from noise, decode. Returns [n, 3, H, W].
Tensor edit_video(const EditModels& m, const EditRequest& req);

/// Frame-resolution keep mask [n, 1, H, W] (1 = keep) to latent resolution by
/// strict majority vote over each factor x factor block.
Tensor downsample_mask(const Tensor& mask, int factor);

/// edit_video that, before each step and after the last, replaces latents
/// inside the keep mask with the input's latents noised to the current step.
Tensor masked_edit(const EditModels& m, const EditRequest& req, const Tensor& keep_mask);

/// `mask_%05d.png` files in `dir`; 8-bit gray values >= 128 mean keep.
/// Returns [n, 1, H, W] in {0, 1}.
Tensor read_masks(const std::filesystem::path& dir);

}  // namespace veil
