#include "veil/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "veil/error.hpp"
#include "veil/ops.hpp"
#include "veil/optim.hpp"
#include "veil/parallel.hpp"
#include "veil/params.hpp"

namespace veil {

namespace fs = std::filesystem;

namespace {

constexpr const char* kEmaPrefix = "ema.";
constexpr int kStartWindow = 10;

enum class StructureMode { none, zero_ts, ts_range };

struct StepInputs {
  Tensor frames;  // [b, n, 3, H, W]
  Tensor depth;   // [b, n, 1, H, W]
};

// Diffusion loss of one batch; differentiable in the unet parameters.
Tensor batch_loss(const UNet& unet, const Codec& codec, const ContentEncoder& enc, const StepInputs& in,
                  StructureMode mode, int max_ts, bool temporal, double p_drop, const NoiseSchedule& sched,
                  const LossConfig& loss_cfg, Rng& rng) {
  const std::int64_t b = in.frames.dim(0), n = in.frames.dim(1);
  Tensor z0, content, structure;
  {
    NoGradGuard ng;
    z0 = codec.encode(in.frames);
    // Content comes from one randomly chosen frame of each element.
    std::vector<Tensor> picks;
    for (std::int64_t i = 0; i < b; ++i) picks.push_back(slice(slice(in.frames, 0, i, 1), 1, rng.uniform_int(0, n - 1), 1));
    Tensor chosen = concat(picks, 0);
    content = enc.embed(reshape(chosen, {b, 3, chosen.dim(3), chosen.dim(4)}));
    if (mode == StructureMode::none) {
      structure = empty_structure(b, n, z0.dim(2), z0.dim(3), z0.dim(4)).combined();
    } else {
      std::vector<int> ts(static_cast<std::size_t>(b), 0);
      if (mode == StructureMode::ts_range)
        for (auto& t : ts) t = static_cast<int>(rng.uniform_int(0, max_ts));
      structure = make_structure_signal(in.depth, ts, codec, max_ts).combined();
    }
  }
  std::vector<bool> drop(static_cast<std::size_t>(b));
  for (std::size_t i = 0; i < drop.size(); ++i) drop[i] = rng.bernoulli(p_drop);
  std::vector<int> steps(static_cast<std::size_t>(b));
  for (auto& t : steps) t = static_cast<int>(rng.uniform_int(1, sched.steps));
  Tensor noise = rng.normal_tensor(z0.shape());
  Tensor z_t;
  {
    NoGradGuard ng;
    std::vector<Tensor> parts;
    for (std::int64_t i = 0; i < b; ++i)
      parts.push_back(forward_marginal(slice(z0, 0, i, 1), steps[static_cast<std::size_t>(i)], slice(noise, 0, i, 1), sched));
    z_t = concat(parts, 0);
  }
  DenoiseInput di;
  di.z_t = z_t;
  di.t = steps;
  di.structure = structure;
  di.content = unet.content_tokens(content, drop, b);
  di.temporal_active = temporal;
  return training_loss(unet.forward(di), z0, noise, steps, sched, loss_cfg);
}

StructureMode structure_mode(StageKind k) {
  switch (k) {
    case StageKind::image_only:
    case StageKind::joint_temporal: return StructureMode::none;
    case StageKind::add_structure: return StructureMode::zero_ts;
    case StageKind::ts_range: return StructureMode::ts_range;
  }
  return StructureMode::none;
}

void require_trained(const ContentEncoder& enc) {
  if (!enc.trained()) throw CheckpointError("content encoder checkpoint is untrained; run train-content first");
}

}  // namespace

StageKind parse_stage_kind(const std::string& s) {
  if (s == "image_only") return StageKind::image_only;
  if (s == "joint_temporal") return StageKind::joint_temporal;
  if (s == "add_structure") return StageKind::add_structure;
  if (s == "ts_range") return StageKind::ts_range;
  throw ConfigError("unknown stage '" + s + "' (expected image_only, joint_temporal, add_structure or ts_range)");
}

std::string to_string(StageKind k) {
  switch (k) {
    case StageKind::image_only: return "image_only";
    case StageKind::joint_temporal: return "joint_temporal";
    case StageKind::add_structure: return "add_structure";
    case StageKind::ts_range: return "ts_range";
  }
  return "?";
}

std::vector<TrainStage> default_stages() {
  return {{StageKind::image_only, 1000},
          {StageKind::joint_temporal, 12000},
          {StageKind::add_structure, 5000},
          {StageKind::ts_range, 2000}};
}

void validate_stages(const std::vector<TrainStage>& stages) {
  int last = -1;
  for (const auto& s : stages) {
    if (static_cast<int>(s.kind) <= last)
      throw ConfigError("stages must run in the order image_only, joint_temporal, add_structure, ts_range; '" +
                        to_string(s.kind) + "' is out of order");
    if (s.steps < 0) throw ConfigError("stage '" + to_string(s.kind) + "' has negative steps");
    last = static_cast<int>(s.kind);
  }
}

UNet copy_unet(const UNet& u) { return UNet::from_state(u.state()); }

DiffusionModel::DiffusionModel(const UNetConfig& cfg, std::uint64_t seed) : model(cfg, seed), ema(copy_unet(model)) {}

DiffusionModel::DiffusionModel(const UNet& weights) : model(copy_unet(weights)), ema(copy_unet(weights)) {}

std::map<std::string, Tensor> DiffusionModel::checkpoint() const {
  auto out = model.state();
  for (auto& [k, v] : ema.state()) out[kEmaPrefix + k] = v;
  return out;
}

DiffusionModel DiffusionModel::from_checkpoint(const std::map<std::string, Tensor>& tensors) {
  DiffusionModel dm(UNet::from_state(tensors));
  const auto ema_part = strip_prefix(tensors, kEmaPrefix);
  if (!ema_part.empty()) dm.ema = UNet::from_state(ema_part);
  return dm;
}

void ema_update(ParamStore& ema, const ParamStore& model, double decay) {
  const auto d = static_cast<float>(decay), w = static_cast<float>(1.0 - decay);
  for (auto& [name, e] : ema) {
    const Tensor& p = model.get(name);
    float* pe = e.ptr();
    const float* pp = p.ptr();
    for (std::int64_t i = 0; i < e.numel(); ++i) pe[i] = d * pe[i] + w * pp[i];
  }
}

std::string stage_checkpoint_name(StageKind kind) {
  return "stage" + std::to_string(static_cast<int>(kind) + 1) + "_" + to_string(kind) + ".vftn";
}

DiffusionTrainReport train_diffusion(DiffusionModel& dm, const Codec& codec, const ContentEncoder& enc,
                                     const std::vector<ClipRecord>& corpus, const NoiseSchedule& sched,
                                     const DiffusionTrainConfig& cfg) {
  validate_stages(cfg.stages);
  require_trained(enc);
  if (corpus.empty()) throw DataError("training corpus is empty");
  if (!(cfg.p_drop >= 0.0 && cfg.p_drop <= 1.0)) throw ConfigError("p_drop must lie in [0, 1]");
  if (!(cfg.weight_ema >= 0.0 && cfg.weight_ema < 1.0) || !(cfg.loss_ema >= 0.0 && cfg.loss_ema < 1.0))
    throw ConfigError("EMA decays must lie in [0, 1)");
  if (codec.config().latent_channels != dm.model.config().latent_channels)
    throw ConfigError("codec and unet disagree on latent channels");
  if (!cfg.checkpoint_dir.empty()) fs::create_directories(cfg.checkpoint_dir);

  DiffusionTrainReport report;
  const Rng root = Rng(cfg.seed).substream("diffusion");
  for (const auto& stage : cfg.stages) {
    StageReport sr;
    sr.kind = stage.kind;
    sr.steps = stage.steps;
    const std::int64_t calls_before = dm.model.temporal_calls();
    Rng rng = root.substream(static_cast<std::uint64_t>(stage.kind));
    const bool image_stage = stage.kind == StageKind::image_only;
    BatchConfig bc = cfg.batch;
    if (image_stage) bc.image_prob = 1.0;
    const auto filter = [image_stage](const std::string& name) { return !image_stage || !is_temporal_param(name); };

    Adam opt(AdamConfig{cfg.lr});
    double ema = 0.0, start_sum = 0.0;
    for (int step = 0; step < stage.steps; ++step) {
      Batch batch = make_batch(corpus, bc, rng);
      dm.model.params().zero_grad();
      Tensor loss = batch_loss(dm.model, codec, enc, {batch.frames, batch.depth}, structure_mode(stage.kind), cfg.max_ts,
                               !image_stage, cfg.p_drop, sched, cfg.loss, rng);
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw NumericError("diffusion loss diverged in stage " + to_string(stage.kind) + " at step " + std::to_string(step));
      loss.backward();
      if (cfg.grad_clip > 0.0f) clip_grad_norm(dm.model.params(), cfg.grad_clip);
      opt.config().lr = cosine_lr(cfg.lr, step, stage.steps);
      opt.step(dm.model.params(), filter);
      ema_update(dm.ema.params(), dm.model.params(), cfg.weight_ema);

      ema = cfg.loss_ema * ema + (1.0 - cfg.loss_ema) * lv;
      if (step < kStartWindow) start_sum += lv;
      sr.end_loss_ema = ema / (1.0 - std::pow(cfg.loss_ema, step + 1));
      if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0)
        spdlog::info("{} step {}/{} loss {:.4f} ema {:.4f}", to_string(stage.kind), step + 1, stage.steps, lv, sr.end_loss_ema);
    }
    dm.model.params().zero_grad();
    sr.start_loss = stage.steps > 0 ? start_sum / std::min(stage.steps, kStartWindow) : 0.0;
    sr.temporal_calls = dm.model.temporal_calls() - calls_before;
    report.stages.push_back(sr);
    if (!cfg.checkpoint_dir.empty()) save_checkpoint(cfg.checkpoint_dir / stage_checkpoint_name(stage.kind), dm.checkpoint());
  }
  return report;
}

CustomizeReport customize(UNet& unet, const Codec& codec, const ContentEncoder& enc, const Tensor& subject_frames,
                          const Tensor& subject_depth, const std::vector<ClipRecord>& base, const NoiseSchedule& sched,
                          const CustomizeConfig& cfg) {
  require_trained(enc);
  if (cfg.batch < 2 || cfg.batch % 2 != 0) throw ConfigError("customization batch must be even and >= 2");
  if (cfg.steps < 0) throw ConfigError("customization steps must be >= 0");
  if (!subject_frames.defined() || subject_frames.rank() != 4 || subject_frames.dim(1) != 3)
    throw DataError("subject images must be [N, 3, H, W]");
  if (!subject_depth.defined() || subject_depth.rank() != 4 || subject_depth.dim(0) != subject_frames.dim(0) ||
      subject_depth.dim(1) != 1 || subject_depth.dim(2) != subject_frames.dim(2) ||
      subject_depth.dim(3) != subject_frames.dim(3))
    throw DataError("subject depth must be [N, 1, H, W] matching the subject images");
  if (base.empty()) throw DataError("customization needs a base corpus");
  const std::int64_t N = subject_frames.dim(0), H = subject_frames.dim(2), W = subject_frames.dim(3);
  if (N < 15 || N > 30) spdlog::warn("customizing on {} subject images; 15 to 30 is the recommended range", N);

  CustomizeReport rep;
  rep.steps = cfg.steps;
  rep.min_subject_per_batch = std::numeric_limits<int>::max();
  Rng rng = Rng(cfg.seed).substream("customize");
  Adam opt(AdamConfig{cfg.lr});
  const int half = cfg.batch / 2;
  const std::int64_t plane = H * W;
  for (int step = 0; step < cfg.steps; ++step) {
    // Subject images first, then single base-corpus frames.
    StepInputs in{Tensor(Shape{cfg.batch, 1, 3, H, W}), Tensor(Shape{cfg.batch, 1, 1, H, W})};
    int subject = 0;
    for (int i = 0; i < half; ++i) {
      const auto s = rng.uniform_int(0, N - 1);
      std::copy_n(subject_frames.ptr() + s * 3 * plane, 3 * plane, in.frames.ptr() + i * 3 * plane);
      std::copy_n(subject_depth.ptr() + s * plane, plane, in.depth.ptr() + i * plane);
      ++subject;
    }
    BatchConfig bc{half, 1.0, 1, 1};
    Batch b = make_batch(base, bc, rng);
    if (b.frames.dim(3) != H || b.frames.dim(4) != W) throw DataError("base corpus resolution differs from the subject images");
    std::copy_n(b.frames.ptr(), half * 3 * plane, in.frames.ptr() + half * 3 * plane);
    std::copy_n(b.depth.ptr(), half * plane, in.depth.ptr() + half * plane);
    rep.min_subject_per_batch = std::min(rep.min_subject_per_batch, subject);
    rep.max_subject_per_batch = std::max(rep.max_subject_per_batch, subject);

    unet.params().zero_grad();
    Tensor loss = batch_loss(unet, codec, enc, in, StructureMode::ts_range, cfg.max_ts, true, cfg.p_drop, sched, cfg.loss, rng);
    const double lv = loss.item();
    if (!std::isfinite(lv)) throw NumericError("customization loss diverged at step " + std::to_string(step));
    loss.backward();
    if (cfg.grad_clip > 0.0f) clip_grad_norm(unet.params(), cfg.grad_clip);
    opt.step(unet.params());
    if (step == 0) rep.first_loss = lv;
    rep.last_loss = lv;
    if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0)
      spdlog::info("customize step {}/{} loss {:.4f}", step + 1, cfg.steps, lv);
  }
  unet.params().zero_grad();
  if (cfg.steps == 0) rep.min_subject_per_batch = 0;
  return rep;
}

// ---------------------------------------------------------------- metrics

namespace {

double cosine_rows(const float* a, const float* b, std::int64_t d) {
  double dot = 0, na = 0, nb = 0;
  for (std::int64_t i = 0; i < d; ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  const double den = std::sqrt(na * nb);
  return den > 0 ? std::clamp(dot / den, -1.0, 1.0) : 0.0;
}

Tensor embed_frames(const Tensor& frames, const ContentEncoder& enc) {
  if (!frames.defined() || frames.rank() != 4 || frames.dim(1) != 3) throw DimensionError("metrics expect frames [n, 3, H, W]");
  NoGradGuard ng;
  return enc.embed(frames);
}

std::vector<double> average_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

std::string fmt_value(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

double frame_consistency_of(const Tensor& e) {
  if (e.rank() != 2 || e.dim(0) < 2) throw ContractError("frame consistency needs at least two frames");
  const std::int64_t n = e.dim(0), d = e.dim(1);
  double s = 0.0;
  for (std::int64_t i = 0; i + 1 < n; ++i) s += cosine_rows(e.ptr() + i * d, e.ptr() + (i + 1) * d, d);
  return s / static_cast<double>(n - 1);
}

double prompt_consistency_of(const Tensor& e, const Tensor& target) {
  if (e.rank() != 2 || e.dim(0) < 1) throw ContractError("prompt consistency needs at least one frame");
  if (target.numel() != e.dim(1)) throw DimensionError("target embedding size differs from the frame embeddings");
  const std::int64_t n = e.dim(0), d = e.dim(1);
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += cosine_rows(e.ptr() + i * d, target.ptr(), d);
  return s / static_cast<double>(n);
}

double frame_consistency(const Tensor& frames, const ContentEncoder& enc) {
  if (frames.rank() == 4 && frames.dim(0) < 2) throw ContractError("frame consistency needs at least two frames");
  return frame_consistency_of(embed_frames(frames, enc));
}

double prompt_consistency(const Tensor& frames, const Tensor& target, const ContentEncoder& enc) {
  return prompt_consistency_of(embed_frames(frames, enc), target);
}

double warped_mse(const Tensor& frames, const SceneSpec& scene, const std::vector<int>& idx) {
  if (frames.rank() != 4 || frames.dim(0) < 2) throw ContractError("warped MSE needs at least two frames");
  if (static_cast<std::int64_t>(idx.size()) != frames.dim(0)) throw DimensionError("one frame index per frame required");
  const std::int64_t n = frames.dim(0), C = frames.dim(1), H = frames.dim(2), W = frames.dim(3), plane = H * W;
  if (H != scene.height || W != scene.width) throw DimensionError("frames do not match the scene resolution");
  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t k = 1; k < n; ++k) {
    const int gap = idx[static_cast<std::size_t>(k)] - idx[static_cast<std::size_t>(k - 1)];
    const Tensor flow = ground_truth_flow(scene, idx[static_cast<std::size_t>(k)]);
    const float* prev = frames.ptr() + (k - 1) * C * plane;
    const float* cur = frames.ptr() + k * C * plane;
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const double sx = x - gap * flow[y * W + x], sy = y - gap * flow[plane + y * W + x];
        if (sx < 0 || sy < 0 || sx > W - 1 || sy > H - 1) continue;
        const auto x0 = static_cast<std::int64_t>(std::floor(sx)), y0 = static_cast<std::int64_t>(std::floor(sy));
        const std::int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
        const double fx = sx - x0, fy = sy - y0;
        for (std::int64_t c = 0; c < C; ++c) {
          const float* p = prev + c * plane;
          const double v = (1 - fy) * ((1 - fx) * p[y0 * W + x0] + fx * p[y0 * W + x1]) +
                           fy * ((1 - fx) * p[y1 * W + x0] + fx * p[y1 * W + x1]);
          const double d = cur[c * plane + y * W + x] - v;
          total += d * d;
        }
        ++count;
      }
  }
  return count > 0 ? total / static_cast<double>(count * C) : 0.0;
}

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "omega_t") return SweepAxis::omega_t;
  if (s == "t_s" || s == "ts") return SweepAxis::t_s;
  if (s == "omega") return SweepAxis::omega;
  throw ConfigError("unknown sweep axis '" + s + "' (expected omega_t, t_s or omega)");
}

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::omega_t: return "omega_t";
    case SweepAxis::t_s: return "t_s";
    case SweepAxis::omega: return "omega";
  }
  return "?";
}

std::vector<EvalItem> make_eval_set(const std::vector<ClipRecord>& clips, const ContentEncoder& enc, int n_frames,
                                    int stride, std::uint64_t seed) {
  if (n_frames < 1 || stride < 1) throw ConfigError("evaluation frames and stride must be >= 1");
  const auto& styles = style_table();
  std::vector<EvalItem> items;
  Rng rng = Rng(seed).substream("eval");
  for (const auto& clip : clips) {
    if (!clip.depth) throw DataError("clip " + clip.id + " has no depth maps");
    const auto idx = clip_frame_indices(0, n_frames, stride);
    if (idx.back() >= clip.length()) throw DataError("clip " + clip.id + " is shorter than the evaluation window");
    EvalItem it;
    it.clip_id = clip.id;
    std::vector<Tensor> f, d;
    for (int i : idx) {
      f.push_back(slice(clip.frames, 0, i, 1));
      d.push_back(slice(*clip.depth, 0, i, 1));
    }
    it.frames = concat(f, 0).detach();
    it.depth = concat(d, 0).detach();
    it.scene = clip.scene;
    it.frame_indices = idx;
    it.target_name = styles[static_cast<std::size_t>((clip.style_id + 1) % kCorpusStyles)].name;
    it.target = enc.prototype(it.target_name);
    it.seed = rng.next_u64();
    items.push_back(std::move(it));
  }
  return items;
}

MetricRow score_edit(const EvalItem& item, const Tensor& output, const ContentEncoder& enc) {
  MetricRow r;
  r.clip_id = item.clip_id;
  const Tensor e = embed_frames(output, enc);
  r.frame_consistency = output.dim(0) >= 2 ? frame_consistency_of(e) : 1.0;
  r.prompt_consistency = prompt_consistency_of(e, item.target);
  r.warped_mse = item.scene && output.dim(0) >= 2 ? warped_mse(output, *item.scene, item.frame_indices)
                                                  : std::numeric_limits<double>::quiet_NaN();
  return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("spearman needs two equal-length samples of size >= 2");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

MetricReport run_sweep(SweepAxis axis, const std::vector<double>& values, const std::vector<EvalItem>& items,
                       const EditModels& models, const ContentEncoder& enc, const EditRequest& base) {
  if (items.empty()) throw DataError("sweep needs a non-empty evaluation set");
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  MetricReport rep;
  rep.axis = axis;
  const std::size_t nv = values.size(), ni = items.size();
  rep.rows.resize(nv * ni);
  for (double v : values)
    if (axis == SweepAxis::t_s && (v < 0 || v > kMaxStructureLevel || v != std::floor(v)))
      throw ConfigError("t_s sweep values must be integers in [0, " + std::to_string(kMaxStructureLevel) + "]");
  parallel_for(static_cast<std::int64_t>(nv * ni), [&](std::int64_t job) {
    const std::size_t vi = static_cast<std::size_t>(job) / ni, ii = static_cast<std::size_t>(job) % ni;
    const EvalItem& item = items[ii];
    EditRequest req = base;
    req.frames = item.frames;
    req.depth = item.depth;
    req.content = item.target;
    req.seed = item.seed;
    switch (axis) {
      case SweepAxis::omega_t: req.guidance.omega_t = static_cast<float>(values[vi]); break;
      case SweepAxis::omega: req.guidance.omega = static_cast<float>(values[vi]); break;
      case SweepAxis::t_s: req.t_s = static_cast<int>(values[vi]); break;
    }
    MetricRow row = score_edit(item, edit_video(models, req), enc);
    row.axis = axis;
    row.value = values[vi];
    rep.rows[job] = row;
  });
  std::vector<double> fc, pc, wm;
  for (std::size_t vi = 0; vi < nv; ++vi) {
    MetricMeans m;
    m.value = values[vi];
    for (std::size_t ii = 0; ii < ni; ++ii) {
      const auto& r = rep.rows[vi * ni + ii];
      m.frame_consistency += r.frame_consistency / static_cast<double>(ni);
      m.prompt_consistency += r.prompt_consistency / static_cast<double>(ni);
      m.warped_mse += r.warped_mse / static_cast<double>(ni);
    }
    rep.means.push_back(m);
    fc.push_back(m.frame_consistency);
    pc.push_back(m.prompt_consistency);
    wm.push_back(m.warped_mse);
  }
  if (nv >= 2) {
    rep.spearman_frame = spearman(values, fc);
    rep.spearman_prompt = spearman(values, pc);
    rep.spearman_warped = spearman(values, wm);
  }
  return rep;
}

void MetricReport::write_csv(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "clip_id,axis,value,frame_consistency,prompt_consistency,warped_mse\n";
  for (const auto& r : rows)
    out << r.clip_id << ',' << to_string(r.axis) << ',' << fmt_value(r.value) << ',' << fmt_value(r.frame_consistency)
        << ',' << fmt_value(r.prompt_consistency) << ',' << fmt_value(r.warped_mse) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

void MetricReport::write_gnuplot(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# " << to_string(axis) << " frame_consistency prompt_consistency warped_mse\n";
  for (const auto& m : means)
    out << fmt_value(m.value) << ' ' << fmt_value(m.frame_consistency) << ' ' << fmt_value(m.prompt_consistency) << ' '
        << fmt_value(m.warped_mse) << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace veil
