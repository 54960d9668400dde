#include "veil/conditioning.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>

#include "veil/error.hpp"
#include "veil/image_io.hpp"
#include "veil/nn.hpp"
#include "veil/optim.hpp"
#include "veil/rng.hpp"

namespace veil {

namespace fs = std::filesystem;

namespace {

constexpr const char* kPrefix = "content.";
constexpr const char* kProtoPrefix = "content.proto.";
constexpr std::int64_t kChunk = 64;

Tensor gather_frames(const Tensor& frames, const std::vector<std::int64_t>& idx) {
  const std::int64_t per = frames.numel() / frames.dim(0);
  Tensor out(Shape{static_cast<std::int64_t>(idx.size()), frames.dim(1), frames.dim(2), frames.dim(3)});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(frames.ptr() + idx[i] * per, per, out.ptr() + static_cast<std::int64_t>(i) * per);
  return out;
}

Tensor embed_all(const ContentEncoder& enc, const Tensor& frames) {
  NoGradGuard ng;
  if (frames.dim(0) <= kChunk) return enc.forward(frames);
  std::vector<Tensor> parts;
  for (std::int64_t s = 0; s < frames.dim(0); s += kChunk)
    parts.push_back(enc.forward(slice(frames, 0, s, std::min(kChunk, frames.dim(0) - s))));
  return concat(parts, 0);
}

}  // namespace

ContentEncoder::ContentEncoder(const ContentConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.dim < 1 || cfg.base < 1) throw ConfigError("content encoder sizes must be positive");
  if (!(cfg.temperature > 0.0f)) throw ConfigError("contrastive temperature must be positive");
  Rng rng = Rng(seed).substream("content");
  const int c = cfg.base, c2 = 2 * cfg.base;
  nn::add_conv2d(params_, "in", 3, c, 3, rng);
  nn::add_conv2d(params_, "b1.conv", c, c2, 3, rng);
  nn::add_norm(params_, "b1.norm", c2);
  nn::add_conv2d(params_, "b2.conv", c2, c2, 3, rng);
  nn::add_norm(params_, "b2.norm", c2);
  nn::add_conv2d(params_, "b3.conv", c2, c2, 3, rng);
  nn::add_norm(params_, "b3.norm", c2);
  nn::add_linear(params_, "proj", c2, cfg.dim, rng);
}

Tensor ContentEncoder::forward(const Tensor& frames) const {
  if (frames.rank() != 4 || frames.dim(1) != 3)
    throw DimensionError("content encoder expects frames [B, 3, H, W], got " + shape_str(frames.shape()));
  Tensor h = silu(nn::conv2d(params_, "in", frames));
  h = silu(nn::group_norm(params_, "b1.norm", nn::conv2d(params_, "b1.conv", h, 2)));
  h = silu(nn::group_norm(params_, "b2.norm", nn::conv2d(params_, "b2.conv", h, 2)));
  h = silu(nn::group_norm(params_, "b3.norm", nn::conv2d(params_, "b3.conv", h)));
  h = mean_axis(mean_axis(h, 3), 2);  // global average pool -> [B, C]
  return l2_normalize(nn::linear(params_, "proj", h));
}

Tensor ContentEncoder::embed(const Tensor& frames) const {
  if (!trained_) throw ContractError("content encoder has not been trained");
  return forward(frames);
}

void ContentEncoder::set_prototype(const std::string& name, const Tensor& frames) {
  if (!trained_) throw ContractError("content encoder has not been trained");
  if (frames.rank() != 4 || frames.dim(0) < 1) throw DataError("prototype '" + name + "' needs at least one frame");
  Tensor e = embed_all(*this, frames);
  NoGradGuard ng;
  prototypes_[name] = l2_normalize(mean_axis(e, 0));
}

Tensor ContentEncoder::prototype(const std::string& name) const {
  auto it = prototypes_.find(name);
  if (it == prototypes_.end()) {
    std::string known;
    for (const auto& [k, v] : prototypes_) known += (known.empty() ? "" : ", ") + k;
    throw ConfigError("unknown style '" + name + "' (known: " + (known.empty() ? "none" : known) + ")");
  }
  return it->second.clone();
}

std::vector<std::string> ContentEncoder::prototype_names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : prototypes_) out.push_back(k);
  return out;
}

std::map<std::string, Tensor> ContentEncoder::state() const {
  auto out = params_.snapshot(kPrefix);
  out[std::string(kPrefix) + "meta"] =
      Tensor(Shape{4}, std::vector<float>{static_cast<float>(cfg_.dim), static_cast<float>(cfg_.base), cfg_.temperature,
                                          trained_ ? 1.0f : 0.0f});
  for (const auto& [k, v] : prototypes_) out[kProtoPrefix + k] = v.clone();
  return out;
}

ContentEncoder ContentEncoder::from_state(const std::map<std::string, Tensor>& tensors) {
  auto it = tensors.find(std::string(kPrefix) + "meta");
  if (it == tensors.end() || it->second.numel() != 4) throw CheckpointError("checkpoint has no content encoder metadata");
  const Tensor& meta = it->second;
  ContentEncoder enc(ContentConfig{static_cast<int>(meta[0]), static_cast<int>(meta[1]), meta[2]});
  const std::size_t loaded = enc.params_.load_values(tensors, kPrefix);
  if (loaded != enc.params_.size())
    throw CheckpointError("content checkpoint provides " + std::to_string(loaded) + " of " +
                          std::to_string(enc.params_.size()) + " parameters");
  enc.trained_ = meta[3] != 0.0f;
  const std::string pp = kProtoPrefix;
  for (const auto& [k, v] : tensors)
    if (k.rfind(pp, 0) == 0) {
      if (v.numel() != enc.cfg_.dim) throw CheckpointError("prototype " + k + " has the wrong dimension");
      enc.prototypes_[k.substr(pp.size())] = v.clone();
    }
  return enc;
}

Tensor supervised_contrastive_loss(const Tensor& embeddings, const std::vector<int>& labels, float temperature) {
  if (embeddings.rank() != 2) throw DimensionError("contrastive loss expects embeddings [B, d]");
  const std::int64_t b = embeddings.dim(0);
  if (static_cast<std::int64_t>(labels.size()) != b) throw DimensionError("one label per embedding required");
  // Diagonal masked out of the softmax; -1e4 underflows exp() for any |s| <= 1/tau.
  Tensor mask(Shape{b, b});
  Tensor weight(Shape{b, b});
  int anchors = 0;
  for (std::int64_t i = 0; i < b; ++i) {
    mask[i * b + i] = -1e4f;
    int pos = 0;
    for (std::int64_t j = 0; j < b; ++j) pos += j != i && labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)];
    if (pos == 0) continue;
    ++anchors;
    for (std::int64_t j = 0; j < b; ++j)
      if (j != i && labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) weight[i * b + j] = 1.0f / static_cast<float>(pos);
  }
  if (anchors == 0) throw ContractError("contrastive batch has no positive pairs");
  for (float& w : weight.data()) w /= static_cast<float>(anchors);
  Tensor e = reshape(embeddings, {1, b, embeddings.dim(1)});
  Tensor logits = reshape(scale(matmul_transposed(e, e), 1.0f / temperature), {b, b});
  return neg(sum(mul(log_softmax(add(logits, mask)), weight)));
}

ContentTrainReport train_content_encoder(ContentEncoder& enc, const Tensor& frames, const std::vector<int>& labels,
                                         const ContentTrainConfig& cfg) {
  if (!frames.defined() || frames.rank() != 4) throw DataError("content training needs frames [N, 3, H, W]");
  if (static_cast<std::int64_t>(labels.size()) != frames.dim(0)) throw DataError("one style label per frame required");
  std::map<int, std::vector<std::int64_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(static_cast<std::int64_t>(i));
  if (by_label.size() < 2) throw ContractError("contrastive training needs at least two styles");
  if (cfg.batch < 4 || cfg.batch % 2 != 0) throw ConfigError("content batch must be even and >= 4");
  std::vector<int> keys;
  for (const auto& [k, v] : by_label) keys.push_back(k);

  // Pairs of same-label frames guarantee every anchor has a positive.
  auto draw = [&](Rng& rng, std::vector<std::int64_t>& idx, std::vector<int>& lab) {
    idx.clear();
    lab.clear();
    for (int p = 0; p < cfg.batch / 2; ++p) {
      const int k = keys[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(keys.size()) - 1))];
      const auto& pool = by_label[k];
      for (int r = 0; r < 2; ++r) {
        idx.push_back(pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]);
        lab.push_back(k);
      }
    }
  };
  auto eval_loss = [&]() {
    Rng rng = Rng(cfg.seed).substream("content.eval");
    std::vector<std::int64_t> idx;
    std::vector<int> lab;
    double s = 0.0;
    NoGradGuard ng;
    for (int i = 0; i < 4; ++i) {
      draw(rng, idx, lab);
      s += supervised_contrastive_loss(enc.forward(gather_frames(frames, idx)), lab, enc.config().temperature).item();
    }
    return s / 4.0;
  };

  ContentTrainReport rep;
  rep.loss_before = eval_loss();
  Rng rng = Rng(cfg.seed).substream("content.train");
  Adam opt(AdamConfig{cfg.lr});
  std::vector<std::int64_t> idx;
  std::vector<int> lab;
  for (int step = 0; step < cfg.steps; ++step) {
    draw(rng, idx, lab);
    enc.params().zero_grad();
    Tensor loss = supervised_contrastive_loss(enc.forward(gather_frames(frames, idx)), lab, enc.config().temperature);
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw NumericError("contrastive loss diverged at step " + std::to_string(step));
    loss.backward();
    opt.config().lr = cosine_lr(cfg.lr, step, cfg.steps);
    opt.step(enc.params());
    if (step == 0) rep.first_loss = lv;
    rep.last_loss = lv;
    if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0) spdlog::info("content step {} loss {:.4f}", step + 1, lv);
  }
  enc.params().zero_grad();
  rep.loss_after = eval_loss();
  enc.mark_trained();
  return rep;
}

double style_retrieval_accuracy(const ContentEncoder& enc, const Tensor& ref_frames, const std::vector<int>& ref_labels,
                                const Tensor& frames, const std::vector<int>& labels) {
  Tensor ref = embed_all(enc, ref_frames), q = embed_all(enc, frames);
  const std::int64_t d = ref.dim(1);
  std::map<int, std::vector<double>> proto;
  for (std::size_t i = 0; i < ref_labels.size(); ++i) {
    auto& p = proto[ref_labels[i]];
    p.resize(static_cast<std::size_t>(d), 0.0);
    for (std::int64_t j = 0; j < d; ++j) p[static_cast<std::size_t>(j)] += ref[static_cast<std::int64_t>(i) * d + j];
  }
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int best = -1;
    double best_s = -1e30;
    for (const auto& [k, p] : proto) {
      double dot = 0.0, nn = 0.0;
      for (std::int64_t j = 0; j < d; ++j) {
        dot += p[static_cast<std::size_t>(j)] * q[static_cast<std::int64_t>(i) * d + j];
        nn += p[static_cast<std::size_t>(j)] * p[static_cast<std::size_t>(j)];
      }
      const double s = dot / std::sqrt(std::max(nn, 1e-30));
      if (s > best_s) {
        best_s = s;
        best = k;
      }
    }
    hits += best == labels[i];
  }
  return labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
}

Tensor blur_chain(const Tensor& depth, int t_s, int max_level) {
  if (t_s < 0 || t_s > max_level)
    throw ConfigError("structure level t_s = " + std::to_string(t_s) + " outside [0, " + std::to_string(max_level) + "]");
  if (depth.rank() == 5) {
    const Shape s = depth.shape();
    return reshape(blur_chain(reshape(depth, {s[0] * s[1], s[2], s[3], s[4]}), t_s, max_level), s);
  }
  if (depth.rank() != 4) throw DimensionError("blur_chain expects [N, 1, H, W], got " + shape_str(depth.shape()));
  if (t_s == 0) return depth.clone();
  NoGradGuard ng;
  Tensor x = depth;
  for (int i = 0; i < t_s; ++i) x = avgpool2d(gaussian_blur2d(x, 5, 1.0f), 2);
  return resize_bilinear(x, depth.dim(2), depth.dim(3));
}

std::vector<float> ts_embedding(int t_s) {
  const double t = t_s;
  return {static_cast<float>(std::sin(t)), static_cast<float>(std::cos(t)), static_cast<float>(std::sin(t / 4.0)),
          static_cast<float>(std::cos(t / 4.0))};
}

Tensor StructureSignal::combined() const { return concat({latent, ts_channels}, 2); }

StructureSignal empty_structure(std::int64_t b, std::int64_t n, std::int64_t c_z, std::int64_t h, std::int64_t w) {
  StructureSignal s;
  s.latent = Tensor(Shape{b, n, c_z, h, w});
  s.ts_channels = Tensor(Shape{b, n, 4, h, w});
  s.t_s.assign(static_cast<std::size_t>(b), 0);
  return s;
}

StructureSignal make_structure_signal(const Tensor& depth, const std::vector<int>& t_s, const Codec& codec,
                                      int max_level) {
  if (depth.rank() != 5 || depth.dim(2) != 1)
    throw DimensionError("structure signal expects depth [b, n, 1, H, W], got " + shape_str(depth.shape()));
  const std::int64_t b = depth.dim(0), n = depth.dim(1), H = depth.dim(3), W = depth.dim(4);
  if (static_cast<std::int64_t>(t_s.size()) != b) throw DimensionError("one t_s per batch element required");
  const int f = codec.config().factor;
  if (H % f != 0 || W % f != 0)
    throw DimensionError("depth size " + std::to_string(H) + "x" + std::to_string(W) + " not divisible by codec factor " +
                         std::to_string(f));
  NoGradGuard ng;
  std::vector<Tensor> blurred;
  for (std::int64_t i = 0; i < b; ++i)
    blurred.push_back(blur_chain(slice(depth, 0, i, 1), t_s[static_cast<std::size_t>(i)], max_level));
  Tensor d = add_scalar(scale(concat(blurred, 0), 2.0f), -1.0f);
  Tensor rgb = concat({d, d, d}, 2);
  StructureSignal s;
  s.latent = codec.encode(rgb);
  s.t_s = t_s;
  const std::int64_t h = s.latent.dim(3), w = s.latent.dim(4), plane = h * w;
  s.ts_channels = Tensor(Shape{b, n, 4, h, w});
  for (std::int64_t i = 0; i < b; ++i) {
    const auto e = ts_embedding(t_s[static_cast<std::size_t>(i)]);
    for (std::int64_t k = 0; k < n; ++k)
      for (int c = 0; c < 4; ++c) std::fill_n(s.ts_channels.ptr() + ((i * n + k) * 4 + c) * plane, plane, e[static_cast<std::size_t>(c)]);
  }
  return s;
}

StructureSignal make_structure_signal(const Tensor& depth, int t_s, const Codec& codec, int max_level) {
  return make_structure_signal(depth, std::vector<int>(static_cast<std::size_t>(depth.dim(0)), t_s), codec, max_level);
}

Tensor read_depth_samples(const fs::path& dir) {
  const auto files = numbered_pngs(dir, "depth_");
  std::vector<Tensor> maps;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const Image img = read_png(files[i]);
    if (img.channels != 1) throw DataError("depth map is not grayscale: " + files[i].string());
    Tensor t = image_to_tensor(img);
    if (!maps.empty() && t.shape() != maps.front().shape())
      throw DataError("depth map size differs from the first frame: " + files[i].string());
    maps.push_back(std::move(t));
  }
  const auto& s = maps.front().shape();
  Tensor out(Shape{static_cast<std::int64_t>(maps.size()), 1, s[1], s[2]});
  const std::int64_t per = maps.front().numel();
  for (std::size_t i = 0; i < maps.size(); ++i) std::copy_n(maps[i].ptr(), per, out.ptr() + static_cast<std::int64_t>(i) * per);
  return out;
}

Tensor normalize_depth(const Tensor& depth) {
  const auto values = depth.data();
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const float mn = *lo, mx = *hi;
  Tensor out(depth.shape());
  if (mx == mn) {
    for (float& v : out.data()) v = 0.5f;
    return out;
  }
  const float inv = 1.0f / (mx - mn);
  for (std::int64_t i = 0; i < depth.numel(); ++i) out[i] = (depth[i] - mn) * inv;
  return out;
}

Tensor ingest_depth(const fs::path& dir) { return normalize_depth(read_depth_samples(dir)); }

}  // namespace veil
