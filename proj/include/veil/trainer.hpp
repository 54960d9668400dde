#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "veil/codec.hpp"
#include "veil/conditioning.hpp"
#include "veil/datagen.hpp"
#include "veil/diffusion.hpp"
#include "veil/sampler.hpp"
#include "veil/unet.hpp"

namespace veil {

enum class StageKind { image_only, joint_temporal, add_structure, ts_range };
StageKind parse_stage_kind(const std::string& s);
std::string to_string(StageKind k);

struct TrainStage {
  StageKind kind = StageKind::image_only;
  int steps = 0;
};

/// 1k / 12k / 5k / 2k steps.
std::vector<TrainStage> default_stages();
/// Throws ConfigError unless each kind appears at most once, in order, with steps >= 0.
void validate_stages(const std::vector<TrainStage>& stages);

/// Trained weights plus their exponential moving average.
struct DiffusionModel {
  UNet model;
  UNet ema;

  explicit DiffusionModel(const UNetConfig& cfg = {}, std::uint64_t seed = 0);
  explicit DiffusionModel(const UNet& weights);
  /// "unet.*" for the weights and "ema.unet.*" for the average.
  std::map<std::string, Tensor> checkpoint() const;
  static DiffusionModel from_checkpoint(const std::map<std::string, Tensor>& tensors);
};

/// Deep copy of a model's weights.
UNet copy_unet(const UNet& u);
/// ema <- decay * ema + (1 - decay) * model, parameter by parameter.
void ema_update(ParamStore& ema, const ParamStore& model, double decay);

struct DiffusionTrainConfig {
  std::vector<TrainStage> stages = default_stages();
  BatchConfig batch;
  float lr = 2e-4f;
  float grad_clip = 1.0f;
  /// Probability of replacing the content embedding by the null token.
  double p_drop = 0.1;
  double weight_ema = 0.999;
  /// Decay of the reported loss average.
  double loss_ema = 0.99;
  int max_ts = kMaxStructureLevel;
  LossConfig loss;
  std::uint64_t seed = 0;
  int log_every = 100;
  /// Directory for per-stage checkpoints; empty disables them.
  std::filesystem::path checkpoint_dir;
};

struct StageReport {
  StageKind kind = StageKind::image_only;
  int steps = 0;
  /// Mean loss of the stage's first ten steps.
  double start_loss = 0.0;
  /// Bias-corrected loss average at the stage's last step.
  double end_loss_ema = 0.0;
  /// Temporal layer evaluations during the stage.
  std::int64_t temporal_calls = 0;
};

struct DiffusionTrainReport {
  std::vector<StageReport> stages;
};

/// File name of the checkpoint written after `kind`.
std::string stage_checkpoint_name(StageKind kind);

/// Runs the stages in order. Image-only trains on single frames with temporal
/// layers off and frozen; the first two stages see zero structure; the third
/// fixes t_s = 0; the last draws t_s uniformly from [0, max_ts]. Each stage
/// uses a fresh Adam and the random stream of its kind, so rerunning a stage
/// from the previous stage's checkpoint reproduces it.
DiffusionTrainReport train_diffusion(DiffusionModel& dm, const Codec& codec, const ContentEncoder& enc,
                                     const std::vector<ClipRecord>& corpus, const NoiseSchedule& sched,
                                     const DiffusionTrainConfig& cfg);

struct CustomizeConfig {
  int steps = 250;
  /// Even; half of every batch is subject images.
  int batch = 8;
  float lr = 1e-4f;
  float grad_clip = 1.0f;
  double p_drop = 0.1;
  int max_ts = kMaxStructureLevel;
  LossConfig loss;
  std::uint64_t seed = 0;
  int log_every = 50;
};

struct CustomizeReport {
  int steps = 0;
  int min_subject_per_batch = 0;
  int max_subject_per_batch = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
};

/// Finetunes on subject images [N, 3, H, W] with depth [N, 1, H, W], mixing
/// each batch half and half with single frames of the base corpus. Warns when
/// N lies outside [15, 30].
CustomizeReport customize(UNet& unet, const Codec& codec, const ContentEncoder& enc, const Tensor& subject_frames,
                          const Tensor& subject_depth, const std::vector<ClipRecord>& base, const NoiseSchedule& sched,
                          const CustomizeConfig& cfg);

/// Mean cosine similarity of consecutive rows of `embeddings` [n, d]; n >= 2.
double frame_consistency_of(const Tensor& embeddings);
/// Mean cosine similarity of each row of `embeddings` [n, d] with `target` [d].
double prompt_consistency_of(const Tensor& embeddings, const Tensor& target);
double frame_consistency(const Tensor& frames, const ContentEncoder& enc);
double prompt_consistency(const Tensor& frames, const Tensor& target, const ContentEncoder& enc);
/// Mean squared difference between each frame and its predecessor sampled
/// along the scene's true motion, over pixels whose source lies in frame.
/// `frame_indices` are the clip frame numbers of the rows of `frames`.
double warped_mse(const Tensor& frames, const SceneSpec& scene, const std::vector<int>& frame_indices);

enum class SweepAxis { omega_t, t_s, omega };
SweepAxis parse_sweep_axis(const std::string& s);
std::string to_string(SweepAxis a);

struct EvalItem {
  std::string clip_id;
  Tensor frames;  // [n, 3, H, W]
  Tensor depth;   // [n, 1, H, W]
  std::optional<SceneSpec> scene;
  std::vector<int> frame_indices;
  std::string target_name;
  Tensor target;  // [d]
  std::uint64_t seed = 0;
};

/// One window of n frames (stride `stride`) from each clip, with the
/// prototype of the next corpus style as target.
std::vector<EvalItem> make_eval_set(const std::vector<ClipRecord>& clips, const ContentEncoder& enc, int n_frames,
                                    int stride, std::uint64_t seed);

struct MetricRow {
  std::string clip_id;
  SweepAxis axis = SweepAxis::omega_t;
  double value = 0.0;
  double frame_consistency = 0.0;
  double prompt_consistency = 0.0;
  double warped_mse = 0.0;  // NaN without a scene
};

struct MetricMeans {
  double value = 0.0;
  double frame_consistency = 0.0;
  double prompt_consistency = 0.0;
  double warped_mse = 0.0;
};

struct MetricReport {
  SweepAxis axis = SweepAxis::omega_t;
  std::vector<MetricRow> rows;
  std::vector<MetricMeans> means;  // one per swept value, in sweep order
  /// Spearman correlation of the per-value means with the axis; set when the
  /// sweep has at least two values.
  std::optional<double> spearman_frame, spearman_prompt, spearman_warped;

  void write_csv(const std::filesystem::path& path) const;
  /// Whitespace-separated per-value means for gnuplot.
  void write_gnuplot(const std::filesystem::path& path) const;
};

/// Spearman rank correlation with average ranks for ties; NaN if either side is constant.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Edits every item at every value of the axis, starting from `base` for the
/// other settings, and scores the outputs.
MetricReport run_sweep(SweepAxis axis, const std::vector<double>& values, const std::vector<EvalItem>& items,
                       const EditModels& models, const ContentEncoder& enc, const EditRequest& base);

/// Scores one edited clip.
MetricRow score_edit(const EvalItem& item, const Tensor& output, const ContentEncoder& enc);

}  // namespace veil
