#include "veil/nn.hpp"

#include <cmath>

#include "veil/error.hpp"

namespace veil::nn {

namespace {

Tensor scaled_normal(Rng& rng, const Shape& shape, float std) {
  Tensor t = rng.normal_tensor(shape);
  for (float& v : t.data()) v *= std;
  return t;
}

}  // namespace

void add_conv2d(ParamStore& ps, const std::string& name, int in, int out, int k, Rng& rng, float gain) {
  Rng r = rng.substream(name);
  ps.add(name + ".weight", scaled_normal(r, {out, in, k, k}, gain / std::sqrt(static_cast<float>(in * k * k))));
  ps.add(name + ".bias", Tensor(Shape{out}));
}

void add_linear(ParamStore& ps, const std::string& name, int in, int out, Rng& rng, float gain, bool bias) {
  Rng r = rng.substream(name);
  ps.add(name + ".weight", scaled_normal(r, {out, in}, gain / std::sqrt(static_cast<float>(in))));
  if (bias) ps.add(name + ".bias", Tensor(Shape{out}));
}

void add_zero_linear(ParamStore& ps, const std::string& name, int in, int out) {
  ps.add(name + ".weight", Tensor(Shape{out, in}));
  ps.add(name + ".bias", Tensor(Shape{out}));
}

void add_norm(ParamStore& ps, const std::string& name, int channels) {
  ps.add(name + ".gamma", Tensor(Shape{channels}, 1.0f));
  ps.add(name + ".beta", Tensor(Shape{channels}));
}

Tensor conv2d(const ParamStore& ps, const std::string& name, const Tensor& x, int stride) {
  const Tensor& w = ps.get(name + ".weight");
  const int pad = static_cast<int>(w.dim(2) / 2);
  return veil::conv2d(x, w, ps.get(name + ".bias"), stride, pad);
}

Tensor linear(const ParamStore& ps, const std::string& name, const Tensor& x) {
  const std::string b = name + ".bias";
  return veil::linear(x, ps.get(name + ".weight"), ps.contains(b) ? ps.get(b) : Tensor());
}

Tensor group_norm(const ParamStore& ps, const std::string& name, const Tensor& x) {
  return veil::group_norm(x, norm_groups(static_cast<int>(x.dim(1))), ps.get(name + ".gamma"), ps.get(name + ".beta"));
}

Tensor layer_norm(const ParamStore& ps, const std::string& name, const Tensor& x) {
  return veil::layer_norm(x, ps.get(name + ".gamma"), ps.get(name + ".beta"));
}

int norm_groups(int channels) {
  if (channels < 1) throw ConfigError("channel count must be positive");
  for (int g = 8; g > 1; --g)
    if (channels % g == 0 && channels / g >= 4) return g;
  return 1;
}

}  // namespace veil::nn
