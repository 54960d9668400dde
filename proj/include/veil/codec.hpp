#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "veil/params.hpp"
#include "veil/tensor.hpp"

namespace veil {

struct CodecConfig {
  int latent_channels = 4;
  int factor = 4;  // power of two
  int base = 32;
};

/// Frame-wise convolutional autoencoder. encode/decode work on videos
/// [b, n, C, H, W]; the *_frames variants on [B, C, H, W].
class Codec {
 public:
  explicit Codec(const CodecConfig& cfg = {}, std::uint64_t seed = 0);
  static Codec from_state(const std::map<std::string, Tensor>& tensors);

  const CodecConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Latents are multiplied by latent_scale so they have roughly unit variance.
  Tensor encode(const Tensor& video) const;
  /// Output clamped to [-1, 1].
  Tensor decode(const Tensor& latents) const;
  Tensor encode_frames(const Tensor& frames) const;
  Tensor decode_frames(const Tensor& latents) const;
  /// Differentiable unscaled, unclamped round trip used for training.
  Tensor reconstruct_raw(const Tensor& frames) const;

  float latent_scale = 1.0f;
  /// Held-out reconstruction MSE measured when training finished.
  float recon_mse = 0.0f;

  /// Parameters and metadata under the "codec." prefix.
  std::map<std::string, Tensor> state() const;

 private:
  Tensor encode_raw(const Tensor& frames) const;
  Tensor decode_raw(const Tensor& latents) const;
  int levels() const;
  int channels_at(int level) const;

  CodecConfig cfg_;
  ParamStore params_;
};

struct CodecTrainConfig {
  int steps = 2000;
  float lr = 1e-3f;
  int batch = 16;
  std::uint64_t seed = 0;
  int log_every = 200;
};

struct CodecTrainReport {
  double heldout_mse_before = 0.0;
  double heldout_mse_after = 0.0;
  double first_loss = 0.0;
  double last_loss = 0.0;
};

/// Trains on frames [N, 3, H, W]; `heldout` frames score the result and set
/// recon_mse. Also fits latent_scale on the training frames.
CodecTrainReport train_codec(Codec& codec, const Tensor& frames, const Tensor& heldout, const CodecTrainConfig& cfg);

/// Mean squared error of decode(encode(x)) against x.
double reconstruction_mse(const Codec& codec, const Tensor& frames);

}  // namespace veil
