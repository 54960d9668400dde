#include "veil/sampler.hpp"

#include <cmath>

#include "veil/conditioning.hpp"
#include "veil/error.hpp"
#include "veil/image_io.hpp"
#include "veil/ops.hpp"

namespace veil {

namespace {

// a + w (b - a), returning b itself when w == 1.
Tensor lerp(const Tensor& a, const Tensor& b, float w) {
  if (w == 1.0f) return b;
  return add(a, scale(sub(b, a), w));
}

// Where keep [1, n, 1, h, w] is set take `a`, elsewhere `b`; both [1, n, c, h, w].
Tensor select(const Tensor& keep, const Tensor& a, const Tensor& b) {
  const std::int64_t n = a.dim(1), c = a.dim(2), plane = a.dim(3) * a.dim(4);
  Tensor out = b.clone();
  for (std::int64_t f = 0; f < n; ++f)
    for (std::int64_t p = 0; p < plane; ++p) {
      if (keep[f * plane + p] == 0.0f) continue;
      for (std::int64_t k = 0; k < c; ++k) out[(f * c + k) * plane + p] = a[(f * c + k) * plane + p];
    }
  return out;
}

void check_request(const EditModels& m, const EditRequest& req) {
  req.guidance.validate();
  const Tensor& x = req.frames;
  const Tensor& d = req.depth;
  if (!x.defined() || x.rank() != 4 || x.dim(1) != 3)
    throw DimensionError("edit expects frames [n, 3, H, W]");
  if (!d.defined() || d.rank() != 4 || d.dim(1) != 1 || d.dim(0) != x.dim(0) || d.dim(2) != x.dim(2) ||
      d.dim(3) != x.dim(3))
    throw DimensionError("depth " + (d.defined() ? shape_str(d.shape()) : std::string("(none)")) +
                         " does not match frames " + shape_str(x.shape()));
  if (!req.content.defined() || req.content.numel() != m.unet.config().content_dim)
    throw DimensionError("content embedding must have " + std::to_string(m.unet.config().content_dim) + " values");
  if (m.codec.config().latent_channels != m.unet.config().latent_channels)
    throw ConfigError("codec and unet disagree on latent channels");
}

Tensor run_edit(const EditModels& m, const EditRequest& req, const Tensor* keep) {
  check_request(m, req);
  NoGradGuard ng;
  const std::int64_t n = req.frames.dim(0), H = req.frames.dim(2), W = req.frames.dim(3);
  const Tensor structure =
      make_structure_signal(reshape(req.depth, {1, n, 1, H, W}), req.t_s, m.codec).combined();
  const Tensor content = reshape(req.content, {1, m.unet.config().content_dim});
  const Rng root(req.seed);
  Rng init = root.substream("init");
  const Tensor z_T = init.normal_tensor({1, n, m.unet.config().latent_channels, structure.dim(3), structure.dim(4)});

  Predictor predict = [&](const Tensor& z, int t) { return guided_prediction(m.unet, z, t, structure, content, req.guidance); };
  LatentHook hook;
  Tensor z_in, keep_latent;
  if (keep) {
    z_in = m.codec.encode(reshape(req.frames, {1, n, 3, H, W}));
    keep_latent = reshape(*keep, {1, n, 1, z_in.dim(3), z_in.dim(4)});
    const Rng mask_rng = root.substream("mask");
    hook = [&, mask_rng](const Tensor& z, int t) {
      if (t == 0) return select(keep_latent, z_in, z);
      Rng r = mask_rng.substream(static_cast<std::uint64_t>(t));
      return select(keep_latent, forward_marginal(z_in, t, r.normal_tensor(z_in.shape()), m.sched), z);
    };
  }
  const Tensor z0 = sample_ddim(predict, z_T, req.guidance.steps, req.guidance.eta, m.sched, root.substream("ddim"), hook);
  return reshape(m.codec.decode(z0), {n, 3, H, W});
}

}  // namespace

void GuidanceConfig::validate() const {
  if (steps < 1) throw ConfigError("guidance needs at least one sampling step");
  if (!(eta >= 0.0f && eta <= 1.0f)) throw ConfigError("eta must lie in [0, 1], got " + std::to_string(eta));
  if (!std::isfinite(omega) || !std::isfinite(omega_t)) throw ConfigError("guidance scales must be finite");
}

Tensor combine_guidance(const Tensor& image_null, const Tensor& video_null, const Tensor& video_cond, float omega,
                        float omega_t) {
  Tensor out = lerp(video_null, video_cond, omega);
  if (omega_t == 1.0f) return out;
  if (!image_null.defined()) throw ContractError("temporal guidance needs the image-model prediction");
  return add(out, scale(sub(image_null, video_null), 1.0f - omega_t));
}

Tensor guided_prediction(const UNet& unet, const Tensor& z_t, int t, const Tensor& structure, const Tensor& content,
                         const GuidanceConfig& g) {
  if (!unet.params().contains("null_content")) throw ContractError("model has no null content token");
  DenoiseInput in;
  in.z_t = z_t;
  in.t.assign(static_cast<std::size_t>(z_t.dim(0)), t);
  in.structure = structure;
  in.content = content;
  const Tensor cond = unet.forward(in);
  if (g.omega == 1.0f && g.omega_t == 1.0f) return cond;
  in.content = Tensor();
  const Tensor null = unet.forward(in);
  Tensor image;
  if (g.omega_t != 1.0f) {
    in.temporal_active = false;
    image = unet.forward(in);
  }
  return combine_guidance(image, null, cond, g.omega, g.omega_t);
}

DdimCoefficients ddim_coefficients(int t, int t_prev, double eta, const NoiseSchedule& sched) {
  if (t <= t_prev || t_prev < 0)
    throw ContractError("ddim step needs t > t_prev >= 0, got t=" + std::to_string(t) + " t_prev=" + std::to_string(t_prev));
  const double ab = sched.alpha_bar(t), ab_prev = sched.alpha_bar(t_prev);
  DdimCoefficients c;
  c.sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(std::max(0.0, 1.0 - ab / ab_prev));
  c.x0 = std::sqrt(ab_prev);
  c.eps = std::sqrt(std::max(0.0, 1.0 - ab_prev - c.sigma * c.sigma));
  return c;
}

Tensor ddim_step(const Tensor& z_t, const Tensor& v, int t, int t_prev, double eta, const NoiseSchedule& sched,
                 Rng& rng) {
  const DdimCoefficients c = ddim_coefficients(t, t_prev, eta, sched);
  const VDecomposition d = from_v(z_t, v, t, sched);
  Tensor out = c.x0 == 1.0 ? d.x0 : scale(d.x0, static_cast<float>(c.x0));
  if (c.eps > 0.0) out = add(out, scale(d.noise, static_cast<float>(c.eps)));
  if (c.sigma > 0.0) out = add(out, scale(rng.normal_tensor(z_t.shape()), static_cast<float>(c.sigma)));
  return out;
}

Tensor ancestral_step(const Tensor& z_t, const Tensor& v, int t, const NoiseSchedule& sched, Rng& rng) {
  if (t < 1) throw ContractError("ancestral step needs t >= 1, got " + std::to_string(t));
  const Posterior p = posterior_mean_var(z_t, from_v(z_t, v, t, sched).x0, t, sched);
  if (p.variance <= 0.0) return p.mean;
  return add(p.mean, scale(rng.normal_tensor(z_t.shape()), static_cast<float>(std::sqrt(p.variance))));
}

std::vector<int> ddim_timesteps(int total, int steps) {
  if (steps < 1 || steps > total)
    throw ConfigError("sampling steps must lie in [1, " + std::to_string(total) + "], got " + std::to_string(steps));
  std::vector<int> ts;
  for (int i = 0; i < steps; ++i)
    ts.push_back(static_cast<int>(std::lround(static_cast<double>(steps - i) * total / steps)));
  return ts;
}

Tensor sample_ddim(const Predictor& predict, const Tensor& z_T, int steps, double eta, const NoiseSchedule& sched,
                   const Rng& rng, const LatentHook& hook) {
  NoGradGuard ng;
  const auto ts = ddim_timesteps(sched.steps, steps);
  Tensor z = z_T;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i], t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    if (hook) z = hook(z, t);
    Rng r = rng.substream(static_cast<std::uint64_t>(i));
    z = ddim_step(z, predict(z, t), t, t_prev, eta, sched, r);
  }
  if (hook) z = hook(z, 0);
  return z;
}

Tensor sample_ancestral(const Predictor& predict, const Tensor& z_T, const NoiseSchedule& sched, const Rng& rng) {
  NoGradGuard ng;
  Tensor z = z_T;
  for (int t = sched.steps; t >= 1; --t) {
    Rng r = rng.substream(static_cast<std::uint64_t>(t));
    z = ancestral_step(z, predict(z, t), t, sched, r);
  }
  return z;
}

Tensor edit_video(const EditModels& m, const EditRequest& req) { return run_edit(m, req, nullptr); }

Tensor downsample_mask(const Tensor& mask, int factor) {
  if (mask.rank() != 4 || mask.dim(1) != 1) throw DimensionError("mask must be [n, 1, H, W], got " + shape_str(mask.shape()));
  const std::int64_t n = mask.dim(0), H = mask.dim(2), W = mask.dim(3);
  if (factor < 1 || H % factor != 0 || W % factor != 0)
    throw DimensionError("mask size " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by " +
                         std::to_string(factor));
  const std::int64_t h = H / factor, w = W / factor;
  Tensor out(Shape{n, 1, h, w});
  for (std::int64_t f = 0; f < n; ++f)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        int kept = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) kept += mask[(f * H + y * factor + dy) * W + x * factor + dx] >= 0.5f;
        out[(f * h + y) * w + x] = 2 * kept > factor * factor ? 1.0f : 0.0f;
      }
  return out;
}

Tensor masked_edit(const EditModels& m, const EditRequest& req, const Tensor& keep_mask) {
  if (!keep_mask.defined() || !req.frames.defined() || keep_mask.rank() != 4 || keep_mask.dim(1) != 1 ||
      keep_mask.dim(0) != req.frames.dim(0) || keep_mask.dim(2) != req.frames.dim(2) ||
      keep_mask.dim(3) != req.frames.dim(3))
    throw DimensionError("mask " + (keep_mask.defined() ? shape_str(keep_mask.shape()) : std::string("(none)")) +
                         " does not match the input frames");
  const Tensor keep = downsample_mask(keep_mask, m.codec.config().factor);
  return run_edit(m, req, &keep);
}

Tensor read_masks(const std::filesystem::path& dir) {
  const auto files = numbered_pngs(dir, "mask_");
  std::vector<Image> imgs;
  for (const auto& f : files) {
    imgs.push_back(read_png(f));
    const Image& img = imgs.back();
    if (img.channels != 1) throw DataError("mask is not grayscale: " + f.string());
    if (img.width != imgs.front().width || img.height != imgs.front().height)
      throw DataError("mask size differs from the first frame: " + f.string());
  }
  const std::int64_t n = static_cast<std::int64_t>(imgs.size()), H = imgs.front().height, W = imgs.front().width;
  Tensor out(Shape{n, 1, H, W});
  for (std::int64_t f = 0; f < n; ++f) {
    const Image& img = imgs[static_cast<std::size_t>(f)];
    const unsigned threshold = img.bit_depth == 16 ? 128u * 257u : 128u;
    for (std::int64_t p = 0; p < H * W; ++p) out[f * H * W + p] = img.samples[static_cast<std::size_t>(p)] >= threshold ? 1.0f : 0.0f;
  }
  return out;
}

}  // namespace veil
