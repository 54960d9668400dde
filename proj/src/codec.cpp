#include "veil/codec.hpp"

#include <spdlog/spdlog.h>

#include <cmath>

#include "veil/error.hpp"
#include "veil/nn.hpp"
#include "veil/optim.hpp"
#include "veil/rng.hpp"

namespace veil {

namespace {

constexpr const char* kPrefix = "codec.";
constexpr std::int64_t kChunk = 32;

// Runs `fn` over chunks of the leading axis and stitches the results.
template <class Fn>
Tensor chunked(const Tensor& x, Fn fn) {
  if (x.dim(0) <= kChunk) return fn(x);
  std::vector<Tensor> parts;
  for (std::int64_t s = 0; s < x.dim(0); s += kChunk) parts.push_back(fn(slice(x, 0, s, std::min(kChunk, x.dim(0) - s))));
  return concat(parts, 0);
}

// Normalizes the channels of each pixel on its own, so a decoded pixel depends
// only on latents inside its receptive field.
Tensor pixel_norm(const ParamStore& ps, const std::string& name, const Tensor& x) {
  return permute(nn::layer_norm(ps, name, permute(x, {0, 2, 3, 1})), {0, 3, 1, 2});
}

Tensor residual(const ParamStore& ps, const std::string& name, const Tensor& x, bool local) {
  const Tensor h = local ? pixel_norm(ps, name + ".norm", x) : nn::group_norm(ps, name + ".norm", x);
  return add(x, nn::conv2d(ps, name + ".conv", silu(h)));
}

}  // namespace

Codec::Codec(const CodecConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.latent_channels < 1 || cfg.base < 1) throw ConfigError("codec channels must be positive");
  if (cfg.factor < 1 || (cfg.factor & (cfg.factor - 1)) != 0) throw ConfigError("codec factor must be a power of two");
  Rng rng = Rng(seed).substream("codec");
  const int L = levels();
  auto add_residual = [&](const std::string& name, int ch) {
    nn::add_norm(params_, name + ".norm", ch);
    nn::add_conv2d(params_, name + ".conv", ch, ch, 3, rng);
  };
  nn::add_conv2d(params_, "enc.in", 3, channels_at(0), 3, rng);
  for (int l = 0; l < L; ++l) {
    nn::add_conv2d(params_, "enc.down" + std::to_string(l) + ".conv", channels_at(l), channels_at(l + 1), 3, rng);
    add_residual("enc.down" + std::to_string(l) + ".res", channels_at(l + 1));
  }
  add_residual("enc.mid", channels_at(L));
  nn::add_norm(params_, "enc.out.norm", channels_at(L));
  nn::add_conv2d(params_, "enc.out.conv", channels_at(L), cfg.latent_channels, 3, rng);

  nn::add_conv2d(params_, "dec.in", cfg.latent_channels, channels_at(L), 3, rng);
  add_residual("dec.mid", channels_at(L));
  for (int l = L - 1; l >= 0; --l) {
    nn::add_conv2d(params_, "dec.up" + std::to_string(l) + ".conv", channels_at(l + 1), channels_at(l), 3, rng);
    add_residual("dec.up" + std::to_string(l) + ".res", channels_at(l));
  }
  nn::add_norm(params_, "dec.out.norm", channels_at(0));
  nn::add_conv2d(params_, "dec.out.conv", channels_at(0), 3, 3, rng);
}

int Codec::levels() const {
  int l = 0;
  while ((1 << l) < cfg_.factor) ++l;
  return l;
}

int Codec::channels_at(int level) const { return level == 0 ? cfg_.base : 2 * cfg_.base; }

Tensor Codec::encode_raw(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != 3) throw DimensionError("codec expects frames [B, 3, H, W], got " + shape_str(x.shape()));
  if (x.dim(2) % cfg_.factor != 0 || x.dim(3) % cfg_.factor != 0)
    throw ConfigError("frame size " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                      " is not divisible by codec factor " + std::to_string(cfg_.factor));
  Tensor h = nn::conv2d(params_, "enc.in", x);
  for (int l = 0; l < levels(); ++l) {
    const std::string n = "enc.down" + std::to_string(l);
    h = residual(params_, n + ".res", nn::conv2d(params_, n + ".conv", h, 2), false);
  }
  h = residual(params_, "enc.mid", h, false);
  return nn::conv2d(params_, "enc.out.conv", silu(nn::group_norm(params_, "enc.out.norm", h)));
}

Tensor Codec::decode_raw(const Tensor& z) const {
  if (z.rank() != 4 || z.dim(1) != cfg_.latent_channels)
    throw DimensionError("codec decode expects [B, " + std::to_string(cfg_.latent_channels) + ", h, w], got " +
                         shape_str(z.shape()));
  Tensor h = nn::conv2d(params_, "dec.in", z);
  h = residual(params_, "dec.mid", h, true);
  for (int l = levels() - 1; l >= 0; --l) {
    const std::string n = "dec.up" + std::to_string(l);
    h = residual(params_, n + ".res", nn::conv2d(params_, n + ".conv", upsample_nearest2d(h)), true);
  }
  return nn::conv2d(params_, "dec.out.conv", silu(pixel_norm(params_, "dec.out.norm", h)));
}

Tensor Codec::reconstruct_raw(const Tensor& frames) const { return decode_raw(encode_raw(frames)); }

Tensor Codec::encode_frames(const Tensor& frames) const {
  return chunked(frames, [&](const Tensor& x) { return scale(encode_raw(x), latent_scale); });
}

Tensor Codec::decode_frames(const Tensor& latents) const {
  return chunked(latents, [&](const Tensor& z) { return clamp(decode_raw(scale(z, 1.0f / latent_scale)), -1.0f, 1.0f); });
}

Tensor Codec::encode(const Tensor& video) const {
  if (video.rank() != 5) throw DimensionError("encode expects [b, n, 3, H, W], got " + shape_str(video.shape()));
  const auto b = video.dim(0), n = video.dim(1);
  Tensor z = encode_frames(reshape(video, {b * n, video.dim(2), video.dim(3), video.dim(4)}));
  return reshape(z, {b, n, z.dim(1), z.dim(2), z.dim(3)});
}

Tensor Codec::decode(const Tensor& latents) const {
  if (latents.rank() != 5) throw DimensionError("decode expects [b, n, c, h, w], got " + shape_str(latents.shape()));
  const auto b = latents.dim(0), n = latents.dim(1);
  Tensor x = decode_frames(reshape(latents, {b * n, latents.dim(2), latents.dim(3), latents.dim(4)}));
  return reshape(x, {b, n, 3, x.dim(2), x.dim(3)});
}

std::map<std::string, Tensor> Codec::state() const {
  auto out = params_.snapshot(kPrefix);
  out[std::string(kPrefix) + "meta"] =
      Tensor(Shape{5}, std::vector<float>{static_cast<float>(cfg_.latent_channels), static_cast<float>(cfg_.factor),
                                          static_cast<float>(cfg_.base), latent_scale, recon_mse});
  return out;
}

Codec Codec::from_state(const std::map<std::string, Tensor>& tensors) {
  auto it = tensors.find(std::string(kPrefix) + "meta");
  if (it == tensors.end() || it->second.numel() != 5) throw CheckpointError("checkpoint has no codec metadata");
  const Tensor& meta = it->second;
  CodecConfig cfg{static_cast<int>(meta[0]), static_cast<int>(meta[1]), static_cast<int>(meta[2])};
  Codec c(cfg);
  const std::size_t loaded = c.params_.load_values(tensors, kPrefix);
  if (loaded != c.params_.size())
    throw CheckpointError("codec checkpoint provides " + std::to_string(loaded) + " of " +
                          std::to_string(c.params_.size()) + " parameters");
  c.latent_scale = meta[3];
  c.recon_mse = meta[4];
  return c;
}

double reconstruction_mse(const Codec& codec, const Tensor& frames) {
  NoGradGuard ng;
  Tensor rec = codec.decode_frames(codec.encode_frames(frames));
  double s = 0.0;
  for (std::int64_t i = 0; i < frames.numel(); ++i) {
    const double d = static_cast<double>(rec[i]) - frames[i];
    s += d * d;
  }
  return s / static_cast<double>(frames.numel());
}

CodecTrainReport train_codec(Codec& codec, const Tensor& frames, const Tensor& heldout, const CodecTrainConfig& cfg) {
  if (!frames.defined() || frames.rank() != 4) throw DataError("codec training needs a non-empty frame set [N, 3, H, W]");
  if (cfg.steps < 0 || cfg.batch < 1) throw ConfigError("codec steps must be >= 0 and batch >= 1");
  CodecTrainReport rep;
  const bool score = heldout.defined() && heldout.numel() > 0;
  if (score) rep.heldout_mse_before = reconstruction_mse(codec, heldout);

  Rng rng = Rng(cfg.seed).substream("codec.train");
  Adam opt(AdamConfig{cfg.lr});
  const std::int64_t per = frames.numel() / frames.dim(0);
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor x(Shape{cfg.batch, frames.dim(1), frames.dim(2), frames.dim(3)});
    for (int b = 0; b < cfg.batch; ++b) {
      const auto src = rng.uniform_int(0, frames.dim(0) - 1);
      std::copy_n(frames.ptr() + src * per, per, x.ptr() + b * per);
    }
    codec.params().zero_grad();
    Tensor loss = mse_loss(codec.reconstruct_raw(x), x);
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw NumericError("codec loss diverged at step " + std::to_string(step));
    loss.backward();
    opt.config().lr = cosine_lr(cfg.lr, step, cfg.steps);
    opt.step(codec.params());
    if (step == 0) rep.first_loss = lv;
    rep.last_loss = lv;
    if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0) spdlog::info("codec step {} loss {:.5f}", step + 1, lv);
  }
  codec.params().zero_grad();

  // Unit-variance latents keep the diffusion schedule meaningful.
  {
    NoGradGuard ng;
    codec.latent_scale = 1.0f;
    Tensor z = codec.encode_frames(slice(frames, 0, 0, std::min<std::int64_t>(frames.dim(0), 256)));
    double s = 0.0, s2 = 0.0;
    for (float v : z.data()) {
      s += v;
      s2 += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(z.numel());
    const double sd = std::sqrt(std::max(s2 / n - (s / n) * (s / n), 1e-12));
    codec.latent_scale = static_cast<float>(1.0 / sd);
  }
  if (score) {
    rep.heldout_mse_after = reconstruction_mse(codec, heldout);
    codec.recon_mse = static_cast<float>(rep.heldout_mse_after);
  }
  return rep;
}

}  // namespace veil
