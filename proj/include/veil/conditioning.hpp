#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "veil/codec.hpp"
#include "veil/params.hpp"
#include "veil/tensor.hpp"

namespace veil {

struct ContentConfig {
  int dim = 64;
  int base = 16;
  float temperature = 0.07f;
};

/// Small CNN mapping frames to unit-norm style embeddings, trained with a
/// supervised contrastive loss on style labels. Also owns the named style
/// prototypes used in place of text prompts.
class ContentEncoder {
 public:
  explicit ContentEncoder(const ContentConfig& cfg = {}, std::uint64_t seed = 0);
  static ContentEncoder from_state(const std::map<std::string, Tensor>& tensors);

  const ContentConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  /// Frames [B, 3, H, W] -> unit-norm embeddings [B, d]. Differentiable;
  /// works before training so the loss can be evaluated.
  Tensor forward(const Tensor& frames) const;
  /// Like forward but refuses to run on an untrained encoder.
  Tensor embed(const Tensor& frames) const;

  /// Mean embedding of the frames, renormalized, stored under `name`.
  void set_prototype(const std::string& name, const Tensor& frames);
  Tensor prototype(const std::string& name) const;
  bool has_prototype(const std::string& name) const { return prototypes_.count(name) != 0; }
  std::vector<std::string> prototype_names() const;

  /// Parameters under "content.", metadata, and "content.proto.<name>".
  std::map<std::string, Tensor> state() const;

 private:
  ContentConfig cfg_;
  ParamStore params_;
  bool trained_ = false;
  std::map<std::string, Tensor> prototypes_;
};

/// Mean over anchors of -1/|P| sum_p log softmax_{a != i}(s_ia / tau)[p]
/// with P the other batch entries that share the anchor's label. Anchors
/// without positives are skipped.
Tensor supervised_contrastive_loss(const Tensor& embeddings, const std::vector<int>& labels, float temperature);

struct ContentTrainConfig {
  int steps = 1000;
  float lr = 1e-3f;
  int batch = 32;
  std::uint64_t seed = 0;
  int log_every = 200;
};

struct ContentTrainReport {
  double first_loss = 0.0;
  double last_loss = 0.0;
  /// Mean contrastive loss over fixed evaluation batches before and after.
  double loss_before = 0.0;
  double loss_after = 0.0;
};

/// Trains on frames [N, 3, H, W] with one style label per frame and marks the
/// encoder trained. Throws ContractError when fewer than two labels occur.
ContentTrainReport train_content_encoder(ContentEncoder& enc, const Tensor& frames, const std::vector<int>& labels,
                                         const ContentTrainConfig& cfg);

/// Nearest-prototype classification accuracy of `frames` against
/// prototypes built from (`ref_frames`, `ref_labels`).
double style_retrieval_accuracy(const ContentEncoder& enc, const Tensor& ref_frames, const std::vector<int>& ref_labels,
                                const Tensor& frames, const std::vector<int>& labels);

inline constexpr int kMaxStructureLevel = 7;

/// t_s rounds of (5x5 Gaussian blur, sigma 1, then 2x average pooling),
/// resampled bilinearly back to the input size. Depth [N, 1, H, W]; also
/// accepts [b, n, 1, H, W].
Tensor blur_chain(const Tensor& depth, int t_s, int max_level = kMaxStructureLevel);

struct StructureSignal {
  Tensor latent;       // [b, n, c_z, h, w]
  Tensor ts_channels;  // [b, n, 4, h, w]
  std::vector<int> t_s;

  /// Channel concatenation [b, n, c_z + 4, h, w] fed to the denoiser.
  Tensor combined() const;
};

/// sin(t), cos(t), sin(t / 4), cos(t / 4).
std::vector<float> ts_embedding(int t_s);

/// Depth [b, n, 1, H, W] in [0, 1] -> blurred, mapped to [-1, 1], replicated
/// to RGB and encoded frame-wise. One t_s per batch element.
StructureSignal make_structure_signal(const Tensor& depth, const std::vector<int>& t_s, const Codec& codec,
                                      int max_level = kMaxStructureLevel);
StructureSignal make_structure_signal(const Tensor& depth, int t_s, const Codec& codec,
                                      int max_level = kMaxStructureLevel);

/// All-zero structure input, used before structure conditioning is trained.
StructureSignal empty_structure(std::int64_t b, std::int64_t n, std::int64_t c_z, std::int64_t h, std::int64_t w);

/// Raw `depth_%05d.png` samples scaled by 1 / 65535 (or 1 / 255 for 8-bit),
/// [n, 1, H, W], in lexicographic order.
Tensor read_depth_samples(const std::filesystem::path& dir);
/// read_depth_samples, min-max normalized over the whole clip; a constant clip
/// maps to 0.5.
Tensor ingest_depth(const std::filesystem::path& dir);

/// Per-clip min-max normalization with the constant-input guard.
Tensor normalize_depth(const Tensor& depth);

}  // namespace veil
