#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <map>
#include <string>
#include <vector>

#include "veil/params.hpp"
#include "veil/rng.hpp"
#include "veil/tensor.hpp"

namespace veil {

struct UNetConfig {
  int base = 64;
  std::vector<int> mults = {1, 2, 4};
  /// Latent side lengths (at the configured latent_size) that get transformer blocks.
  std::vector<int> attention_resolutions = {8, 4};
  int res_blocks = 2;
  int content_dim = 64;
  int latent_channels = 4;
  /// Spatial side of the latent the attention resolutions refer to.
  int latent_size = 16;
  /// Length of the learnable frame position table.
  int max_frames = 32;
  bool temporal_active = true;
};

struct DenoiseInput {
  Tensor z_t;                  // [b, n, c_z, h, w]
  std::vector<int> t;          // one diffusion step per batch element
  Tensor structure;            // [b, n, c_z + 4, h, w]
  Tensor content;              // [b, d]; undefined selects the null token
  bool temporal_active = true;
};

/// Sinusoidal embedding [len(t), dim] with frequencies 10000^(-i / (dim / 2)).
Tensor timestep_embedding(const std::vector<int>& t, int dim);

/// True for parameters that belong to temporal layers.
bool is_temporal_param(const std::string& name);

/// Denoiser predicting v from noisy latents, structure and content. Every
/// spatial layer works frame by frame; temporal convolutions and attentions
/// run only on videos with temporal mode on.
class UNet {
 public:
  explicit UNet(const UNetConfig& cfg = {}, std::uint64_t seed = 0);
  static UNet from_state(const std::map<std::string, Tensor>& tensors);

  const UNetConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// v prediction shaped like input.z_t.
  Tensor forward(const DenoiseInput& input) const;

  /// The learned unconditional token [d].
  const Tensor& null_content() const { return params_.get("null_content"); }
  /// Rows of `content` [b, d], with the rows flagged in `drop` replaced by the
  /// null token (differentiably). An undefined `content` means all null.
  Tensor content_tokens(const Tensor& content, const std::vector<bool>& drop, std::int64_t batch) const;

  /// Number of temporal convolutions and attentions evaluated so far.
  std::int64_t temporal_calls() const { return temporal_calls_->load(); }

  /// Parameters under "unet." plus "unet.meta".
  std::map<std::string, Tensor> state() const;

  /// Single blocks on frames [b * n, C, h, w]; `n` is the frame count and
  /// `temb` is time_features output [b, 4 * base].
  Tensor residual_block(const std::string& name, const Tensor& x, const Tensor& temb, std::int64_t n,
                        bool temporal) const;
  Tensor transformer_block(const std::string& name, const Tensor& x, const Tensor& content, std::int64_t n,
                           bool temporal) const;
  /// Time embedding after the projection MLP, [b, 4 * base].
  Tensor time_features(const std::vector<int>& t) const;

 private:
  UNetConfig cfg_;
  ParamStore params_;
  std::shared_ptr<std::atomic<std::int64_t>> temporal_calls_ = std::make_shared<std::atomic<std::int64_t>>(0);

  bool attends_at(int level) const;
  void add_residual_block(const std::string& name, int in, int out, Rng& rng);
  void add_transformer_block(const std::string& name, int channels, Rng& rng);
};

}  // namespace veil
