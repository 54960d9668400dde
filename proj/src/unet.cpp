#include "veil/unet.hpp"

#include <algorithm>
#include <cmath>

#include "veil/error.hpp"
#include "veil/nn.hpp"
#include "veil/ops.hpp"

namespace veil {

namespace {

constexpr const char* kPrefix = "unet.";

std::string level_name(const char* stage, int level) { return std::string(stage) + std::to_string(level); }

// [B, C, h, w] <-> [B, h * w, C].
Tensor to_tokens(const Tensor& x) {
  return permute(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), {0, 2, 1});
}

Tensor from_tokens(const Tensor& t, std::int64_t h, std::int64_t w) {
  return reshape(permute(t, {0, 2, 1}), {t.dim(0), t.dim(2), h, w});
}

Tensor self_attention(const ParamStore& ps, const std::string& name, const Tensor& x) {
  return nn::linear(ps, name + ".o",
                    attention(nn::linear(ps, name + ".q", x), nn::linear(ps, name + ".k", x), nn::linear(ps, name + ".v", x)));
}

// Temporal 1-D convolution over [b * n, C, h, w] frames.
Tensor temporal_conv(const ParamStore& ps, const std::string& name, const Tensor& x, std::int64_t n) {
  const VideoDims d{x.dim(0) / n, n, x.dim(1), x.dim(2), x.dim(3)};
  Tensor seq = rearrange_video(reshape(x, {d.b, d.n, d.c, d.h, d.w}), VideoLayout::temporal_conv);
  seq = conv1d(seq, ps.get(name + ".weight"), ps.get(name + ".bias"), 1);
  return reshape(restore_video(seq, VideoLayout::temporal_conv, d), x.shape());
}

void add_identity_conv1d(ParamStore& ps, const std::string& name, int channels) {
  Tensor w(Shape{channels, channels, 3});
  for (int c = 0; c < channels; ++c) w[(c * channels + c) * 3 + 1] = 1.0f;
  ps.add(name + ".weight", std::move(w));
  ps.add(name + ".bias", Tensor(Shape{channels}));
}

}  // namespace

bool is_temporal_param(const std::string& name) {
  for (const char* tag : {".tconv", ".time.", ".tpos", ".ln4."})
    if (name.find(tag) != std::string::npos) return true;
  return false;
}

Tensor timestep_embedding(const std::vector<int>& t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw ConfigError("timestep embedding width must be even");
  const int half = dim / 2;
  Tensor out(Shape{static_cast<std::int64_t>(t.size()), dim});
  for (std::size_t i = 0; i < t.size(); ++i)
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      const double a = t[i] * freq;
      out[static_cast<std::int64_t>(i) * dim + k] = static_cast<float>(std::sin(a));
      out[static_cast<std::int64_t>(i) * dim + half + k] = static_cast<float>(std::cos(a));
    }
  return out;
}

UNet::UNet(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.mults.empty()) throw ConfigError("unet needs at least one channel multiplier");
  if (cfg.base < 4 || cfg.base % 2 != 0) throw ConfigError("unet base channels must be even and >= 4");
  if (cfg.res_blocks < 1 || cfg.content_dim < 1 || cfg.latent_channels < 1 || cfg.max_frames < 1)
    throw ConfigError("unet block, content, latent and frame counts must be positive");
  for (int m : cfg.mults)
    if (m < 1) throw ConfigError("unet channel multipliers must be positive");
  const int L = static_cast<int>(cfg.mults.size());
  if (cfg.latent_size < 1 || cfg.latent_size % (1 << (L - 1)) != 0)
    throw ConfigError("latent size " + std::to_string(cfg.latent_size) + " cannot be halved " + std::to_string(L - 1) +
                      " times");
  for (int r : cfg.attention_resolutions) {
    bool found = false;
    for (int l = 0; l < L; ++l) found = found || (cfg.latent_size >> l) == r;
    if (!found) throw ConfigError("attention resolution " + std::to_string(r) + " is not a level of the unet");
  }

  Rng rng = Rng(seed).substream("unet");
  const int cz = cfg.latent_channels, C0 = cfg.base * cfg.mults[0], E = 4 * cfg.base;

  // Structure channels start switched off so an unconditioned model ignores them.
  nn::add_conv2d(params_, "in", 2 * cz + 4, C0, 3, rng);
  {
    Tensor& w = params_.get("in.weight");
    for (int o = 0; o < C0; ++o)
      for (int c = cz; c < 2 * cz + 4; ++c)
        for (int k = 0; k < 9; ++k) w[(o * (2 * cz + 4) + c) * 9 + k] = 0.0f;
  }
  nn::add_linear(params_, "temb.l1", cfg.base, E, rng);
  nn::add_linear(params_, "temb.l2", E, E, rng);
  {
    Rng r = rng.substream("null_content");
    Tensor null = r.normal_tensor({cfg.content_dim});
    for (float& v : null.data()) v /= std::sqrt(static_cast<float>(cfg.content_dim));
    params_.add("null_content", std::move(null));
  }

  std::vector<int> skips = {C0};
  int ch = C0;
  for (int l = 0; l < L; ++l) {
    const int out = cfg.base * cfg.mults[static_cast<std::size_t>(l)];
    for (int r = 0; r < cfg.res_blocks; ++r) {
      add_residual_block(level_name("down", l) + ".res" + std::to_string(r), ch, out, rng);
      ch = out;
      if (attends_at(l)) add_transformer_block(level_name("down", l) + ".attn" + std::to_string(r), ch, rng);
      skips.push_back(ch);
    }
    if (l + 1 < L) {
      nn::add_conv2d(params_, level_name("down", l) + ".down", ch, ch, 3, rng);
      skips.push_back(ch);
    }
  }
  add_residual_block("mid.res0", ch, ch, rng);
  add_transformer_block("mid.attn", ch, rng);
  add_residual_block("mid.res1", ch, ch, rng);
  for (int l = L - 1; l >= 0; --l) {
    const int out = cfg.base * cfg.mults[static_cast<std::size_t>(l)];
    for (int r = 0; r <= cfg.res_blocks; ++r) {
      add_residual_block(level_name("up", l) + ".res" + std::to_string(r), ch + skips.back(), out, rng);
      skips.pop_back();
      ch = out;
      if (attends_at(l)) add_transformer_block(level_name("up", l) + ".attn" + std::to_string(r), ch, rng);
    }
    if (l > 0) nn::add_conv2d(params_, level_name("up", l) + ".up", ch, ch, 3, rng);
  }
  nn::add_norm(params_, "out.norm", ch);
  nn::add_conv2d(params_, "out.conv", ch, cz, 3, rng);
}

bool UNet::attends_at(int level) const {
  const int res = cfg_.latent_size >> level;
  return std::find(cfg_.attention_resolutions.begin(), cfg_.attention_resolutions.end(), res) !=
         cfg_.attention_resolutions.end();
}

void UNet::add_residual_block(const std::string& name, int in, int out, Rng& rng) {
  nn::add_norm(params_, name + ".norm1", in);
  nn::add_conv2d(params_, name + ".conv1", in, out, 3, rng);
  add_identity_conv1d(params_, name + ".tconv1", out);
  nn::add_linear(params_, name + ".temb", 4 * cfg_.base, out, rng);
  nn::add_norm(params_, name + ".norm2", out);
  nn::add_conv2d(params_, name + ".conv2", out, out, 3, rng);
  add_identity_conv1d(params_, name + ".tconv2", out);
  if (in != out) nn::add_conv2d(params_, name + ".skip", in, out, 1, rng);
}

void UNet::add_transformer_block(const std::string& name, int channels, Rng& rng) {
  const int C = channels, d = cfg_.content_dim;
  for (const char* ln : {".ln1", ".ln2", ".ln3", ".ln4"}) nn::add_norm(params_, name + ln, C);
  for (const char* p : {".self.q", ".self.k", ".self.v"}) nn::add_linear(params_, name + p, C, C, rng, 1.0f, false);
  nn::add_linear(params_, name + ".self.o", C, C, rng);
  nn::add_linear(params_, name + ".cross.q", C, C, rng, 1.0f, false);
  nn::add_linear(params_, name + ".cross.k", d, C, rng, 1.0f, false);
  nn::add_linear(params_, name + ".cross.v", d, C, rng, 1.0f, false);
  nn::add_linear(params_, name + ".cross.o", C, C, rng);
  nn::add_linear(params_, name + ".ff1", C, 4 * C, rng);
  nn::add_linear(params_, name + ".ff2", 4 * C, C, rng);
  {
    Rng r = rng.substream(name + ".tpos");
    Tensor pos = r.normal_tensor({cfg_.max_frames, C});
    for (float& v : pos.data()) v *= 0.1f;
    params_.add(name + ".tpos", std::move(pos));
  }
  for (const char* p : {".time.q", ".time.k", ".time.v"}) nn::add_linear(params_, name + p, C, C, rng, 1.0f, false);
  nn::add_zero_linear(params_, name + ".time.o", C, C);
}

Tensor UNet::time_features(const std::vector<int>& t) const {
  // A [b, 1, base] view keeps each row's result independent of the batch size.
  const auto b = static_cast<std::int64_t>(t.size());
  Tensor e = reshape(timestep_embedding(t, cfg_.base), {b, 1, cfg_.base});
  return reshape(nn::linear(params_, "temb.l2", silu(nn::linear(params_, "temb.l1", e))), {b, 4 * cfg_.base});
}

Tensor UNet::residual_block(const std::string& name, const Tensor& x, const Tensor& temb, std::int64_t n,
                            bool temporal) const {
  const Tensor& w1 = params_.get(name + ".conv1.weight");
  if (x.rank() != 4 || x.dim(1) != w1.dim(1))
    throw DimensionError(name + " expects " + std::to_string(w1.dim(1)) + " channels, got " + shape_str(x.shape()));
  const bool tmp = temporal && n > 1;
  Tensor h = nn::conv2d(params_, name + ".conv1", silu(nn::group_norm(params_, name + ".norm1", x)));
  if (tmp) {
    h = temporal_conv(params_, name + ".tconv1", h, n);
    ++*temporal_calls_;
  }
  Tensor tb = nn::linear(params_, name + ".temb", reshape(silu(temb), {temb.dim(0), 1, temb.dim(1)}));
  tb = repeat_interleave(reshape(tb, {temb.dim(0), tb.dim(2)}), n);
  h = add(h, reshape(tb, {tb.dim(0), tb.dim(1), 1, 1}));
  h = nn::conv2d(params_, name + ".conv2", silu(nn::group_norm(params_, name + ".norm2", h)));
  if (tmp) {
    h = temporal_conv(params_, name + ".tconv2", h, n);
    ++*temporal_calls_;
  }
  const Tensor skip = params_.contains(name + ".skip.weight") ? nn::conv2d(params_, name + ".skip", x) : x;
  return add(skip, h);
}

Tensor UNet::transformer_block(const std::string& name, const Tensor& x, const Tensor& content, std::int64_t n,
                               bool temporal) const {
  if (content.rank() != 3 || content.dim(2) != cfg_.content_dim || content.dim(0) != x.dim(0))
    throw DimensionError(name + " expects content [" + std::to_string(x.dim(0)) + ", 1, " +
                         std::to_string(cfg_.content_dim) + "], got " + shape_str(content.shape()));
  const std::int64_t B = x.dim(0), C = x.dim(1), h = x.dim(2), w = x.dim(3), hw = h * w;
  Tensor tok = to_tokens(x);
  tok = add(tok, self_attention(params_, name + ".self", nn::layer_norm(params_, name + ".ln1", tok)));
  {
    Tensor q = nn::linear(params_, name + ".cross.q", nn::layer_norm(params_, name + ".ln2", tok));
    Tensor a = attention(q, nn::linear(params_, name + ".cross.k", content), nn::linear(params_, name + ".cross.v", content));
    tok = add(tok, nn::linear(params_, name + ".cross.o", a));
  }
  tok = add(tok, nn::linear(params_, name + ".ff2",
                            silu(nn::linear(params_, name + ".ff1", nn::layer_norm(params_, name + ".ln3", tok)))));
  if (temporal && n > 1) {
    if (n > cfg_.max_frames)
      throw DimensionError("clip of " + std::to_string(n) + " frames exceeds the position table of " +
                           std::to_string(cfg_.max_frames));
    const std::int64_t b = B / n;
    Tensor seq = reshape(permute(reshape(tok, {b, n, hw, C}), {0, 2, 1, 3}), {b * hw, n, C});
    Tensor in = add(nn::layer_norm(params_, name + ".ln4", seq), slice(params_.get(name + ".tpos"), 0, 0, n));
    seq = add(seq, self_attention(params_, name + ".time", in));
    ++*temporal_calls_;
    tok = reshape(permute(reshape(seq, {b, hw, n, C}), {0, 2, 1, 3}), {B, hw, C});
  }
  return from_tokens(tok, h, w);
}

Tensor UNet::content_tokens(const Tensor& content, const std::vector<bool>& drop, std::int64_t batch) const {
  const Tensor null = reshape(null_content(), {1, cfg_.content_dim});
  if (!content.defined()) return concat(std::vector<Tensor>(static_cast<std::size_t>(batch), null), 0);
  if (content.rank() != 2 || content.dim(0) != batch || content.dim(1) != cfg_.content_dim)
    throw DimensionError("content must be [" + std::to_string(batch) + ", " + std::to_string(cfg_.content_dim) +
                         "], got " + shape_str(content.shape()));
  if (std::none_of(drop.begin(), drop.end(), [](bool v) { return v; })) return content;
  std::vector<Tensor> rows;
  for (std::int64_t i = 0; i < batch; ++i) {
    const bool d = static_cast<std::size_t>(i) < drop.size() && drop[static_cast<std::size_t>(i)];
    rows.push_back(d ? null : slice(content, 0, i, 1));
  }
  return concat(rows, 0);
}

Tensor UNet::forward(const DenoiseInput& in) const {
  const Tensor& z = in.z_t;
  if (!z.defined() || z.rank() != 5 || z.dim(2) != cfg_.latent_channels)
    throw DimensionError("unet expects z_t [b, n, " + std::to_string(cfg_.latent_channels) + ", h, w]");
  const std::int64_t b = z.dim(0), n = z.dim(1), h = z.dim(3), w = z.dim(4);
  const Tensor& s = in.structure;
  if (!s.defined() || s.rank() != 5 || s.dim(0) != b || s.dim(1) != n || s.dim(2) != cfg_.latent_channels + 4 ||
      s.dim(3) != h || s.dim(4) != w)
    throw DimensionError("structure " + (s.defined() ? shape_str(s.shape()) : std::string("(none)")) +
                         " does not match z_t " + shape_str(z.shape()));
  if (static_cast<std::int64_t>(in.t.size()) != b)
    throw DimensionError("need one diffusion step per batch element, got " + std::to_string(in.t.size()));
  const int L = static_cast<int>(cfg_.mults.size());
  if (h % (1 << (L - 1)) != 0 || w % (1 << (L - 1)) != 0)
    throw DimensionError("latent " + std::to_string(h) + "x" + std::to_string(w) + " cannot be halved " +
                         std::to_string(L - 1) + " times");
  const bool temporal = cfg_.temporal_active && in.temporal_active && n > 1;

  const Tensor temb = time_features(in.t);
  const Tensor ctx = reshape(repeat_interleave(content_tokens(in.content, {}, b), n), {b * n, 1, cfg_.content_dim});

  Tensor x = reshape(concat({z, s}, 2), {b * n, 2 * cfg_.latent_channels + 4, h, w});
  x = nn::conv2d(params_, "in", x);
  std::vector<Tensor> skips = {x};
  for (int l = 0; l < L; ++l) {
    for (int r = 0; r < cfg_.res_blocks; ++r) {
      x = residual_block(level_name("down", l) + ".res" + std::to_string(r), x, temb, n, temporal);
      if (attends_at(l)) x = transformer_block(level_name("down", l) + ".attn" + std::to_string(r), x, ctx, n, temporal);
      skips.push_back(x);
    }
    if (l + 1 < L) {
      x = nn::conv2d(params_, level_name("down", l) + ".down", x, 2);
      skips.push_back(x);
    }
  }
  x = residual_block("mid.res0", x, temb, n, temporal);
  x = transformer_block("mid.attn", x, ctx, n, temporal);
  x = residual_block("mid.res1", x, temb, n, temporal);
  for (int l = L - 1; l >= 0; --l) {
    for (int r = 0; r <= cfg_.res_blocks; ++r) {
      x = concat({x, skips.back()}, 1);
      skips.pop_back();
      x = residual_block(level_name("up", l) + ".res" + std::to_string(r), x, temb, n, temporal);
      if (attends_at(l)) x = transformer_block(level_name("up", l) + ".attn" + std::to_string(r), x, ctx, n, temporal);
    }
    if (l > 0) x = nn::conv2d(params_, level_name("up", l) + ".up", upsample_nearest2d(x));
  }
  x = nn::conv2d(params_, "out.conv", silu(nn::group_norm(params_, "out.norm", x)));
  return reshape(x, {b, n, cfg_.latent_channels, h, w});
}

std::map<std::string, Tensor> UNet::state() const {
  auto out = params_.snapshot(kPrefix);
  std::vector<float> meta = {static_cast<float>(cfg_.base),           static_cast<float>(cfg_.res_blocks),
                             static_cast<float>(cfg_.content_dim),    static_cast<float>(cfg_.latent_channels),
                             static_cast<float>(cfg_.latent_size),    static_cast<float>(cfg_.max_frames),
                             cfg_.temporal_active ? 1.0f : 0.0f,      static_cast<float>(cfg_.mults.size())};
  for (int m : cfg_.mults) meta.push_back(static_cast<float>(m));
  for (int r : cfg_.attention_resolutions) meta.push_back(static_cast<float>(r));
  const auto len = static_cast<std::int64_t>(meta.size());
  out[std::string(kPrefix) + "meta"] = Tensor(Shape{len}, std::move(meta));
  return out;
}

UNet UNet::from_state(const std::map<std::string, Tensor>& tensors) {
  auto it = tensors.find(std::string(kPrefix) + "meta");
  if (it == tensors.end() || it->second.numel() < 9) throw CheckpointError("checkpoint has no unet metadata");
  const Tensor& m = it->second;
  auto at = [&](std::int64_t i) { return static_cast<int>(m[i]); };
  UNetConfig cfg;
  cfg.base = at(0);
  cfg.res_blocks = at(1);
  cfg.content_dim = at(2);
  cfg.latent_channels = at(3);
  cfg.latent_size = at(4);
  cfg.max_frames = at(5);
  cfg.temporal_active = at(6) != 0;
  const int nm = at(7);
  if (nm < 1 || 8 + nm > m.numel()) throw CheckpointError("unet metadata is malformed");
  cfg.mults.clear();
  for (int i = 0; i < nm; ++i) cfg.mults.push_back(at(8 + i));
  cfg.attention_resolutions.clear();
  for (std::int64_t i = 8 + nm; i < m.numel(); ++i) cfg.attention_resolutions.push_back(at(i));
  UNet u(cfg);
  const std::size_t loaded = u.params_.load_values(tensors, kPrefix);
  if (loaded != u.params_.size()) {
    if (!tensors.count(std::string(kPrefix) + "null_content"))
      throw CheckpointError("unet checkpoint has no null content token");
    throw CheckpointError("unet checkpoint provides " + std::to_string(loaded) + " of " +
                          std::to_string(u.params_.size()) + " parameters");
  }
  return u;
}

}  // namespace veil
