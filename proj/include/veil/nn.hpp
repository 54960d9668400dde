#pragma once

#include <string>

#include "veil/ops.hpp"
#include "veil/params.hpp"
#include "veil/rng.hpp"

// Parameter registration and layer application keyed by name in a ParamStore.
// A layer "x" owns "x.weight" and, where present, "x.bias" (or "x.gamma" and
// "x.beta" for norms).
namespace veil::nn {

/// Weights ~ N(0, gain^2 / fan_in); biases zero.
void add_conv2d(ParamStore& ps, const std::string& name, int in, int out, int k, Rng& rng, float gain = 1.0f);
void add_linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng, float gain = 1.0f,
                bool bias = true);
void add_norm(ParamStore& ps, const std::string& name, int channels);
/// Zero-valued layer, used where a branch must start as a no-op.
void add_zero_linear(ParamStore& ps, const std::string& name, int in, int out);

Tensor conv2d(const ParamStore& ps, const std::string& name, const Tensor& x, int stride = 1);
Tensor linear(const ParamStore& ps, const std::string& name, const Tensor& x);
Tensor group_norm(const ParamStore& ps, const std::string& name, const Tensor& x);
Tensor layer_norm(const ParamStore& ps, const std::string& name, const Tensor& x);

/// Largest group count <= 8 that divides `channels` with at least four
/// channels per group. Single-channel groups erase spatially flat signals.
int norm_groups(int channels);

}  // namespace veil::nn
