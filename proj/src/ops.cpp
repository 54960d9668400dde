#include "veil/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gemm.hpp"
#include "veil/error.hpp"
#include "veil/parallel.hpp"

namespace veil {

using detail::attach;
using detail::check_finite;
using detail::needs_grad;

namespace {

using I64 = std::int64_t;

int norm_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return a;
}

Tensor finish(Tensor out, const char* op) {
  check_finite(out, op);
  return out;
}

// ---------------------------------------------------------------- broadcasting

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const I64 da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const I64 db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b) + " at axis " +
                           std::to_string(i));
    out[i] = std::max(da, db);
  }
  return out;
}

std::vector<I64> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<I64> st(r, 0);
  I64 s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = r - 1 - k;
    st[o] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return st;
}

template <class Fn>
void broadcast_each(const Shape& out, const Shape& as, const Shape& bs, Fn&& fn) {
  const I64 n = numel_of(out);
  if (as == out && bs == out) {
    for (I64 i = 0; i < n; ++i) fn(i, i, i);
    return;
  }
  const int r = static_cast<int>(out.size());
  auto sa = broadcast_strides(as, out);
  auto sb = broadcast_strides(bs, out);
  std::vector<I64> idx(static_cast<std::size_t>(r), 0);
  I64 ai = 0, bi = 0;
  for (I64 oi = 0; oi < n; ++oi) {
    fn(oi, ai, bi);
    for (int d = r - 1; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      if (++idx[du] < out[du]) {
        ai += sa[du];
        bi += sb[du];
        break;
      }
      ai -= sa[du] * (out[du] - 1);
      bi -= sb[du] * (out[du] - 1);
      idx[du] = 0;
    }
  }
}

enum class BinOp { add, sub, mul, div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  Shape os = broadcast_shape(a.shape(), b.shape());
  Tensor out(os);
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  float* po = out.ptr();
  broadcast_each(os, a.shape(), b.shape(), [&](I64 o, I64 i, I64 j) {
    switch (op) {
      case BinOp::add: po[o] = pa[i] + pb[j]; break;
      case BinOp::sub: po[o] = pa[i] - pb[j]; break;
      case BinOp::mul: po[o] = pa[i] * pb[j]; break;
      case BinOp::div: po[o] = pa[i] / pb[j]; break;
    }
  });
  if (needs_grad({&a, &b})) {
    attach(out, name, {a, b}, [a, b, op, os](TensorImpl& o) {
      const bool ga = a.requires_grad(), gb = b.requires_grad();
      float* da = ga ? a.impl()->grad.data() : nullptr;
      float* db = gb ? b.impl()->grad.data() : nullptr;
      const float* pa = a.ptr();
      const float* pb = b.ptr();
      const float* g = o.grad.data();
      broadcast_each(os, a.shape(), b.shape(), [&](I64 k, I64 i, I64 j) {
        switch (op) {
          case BinOp::add:
            if (ga) da[i] += g[k];
            if (gb) db[j] += g[k];
            break;
          case BinOp::sub:
            if (ga) da[i] += g[k];
            if (gb) db[j] -= g[k];
            break;
          case BinOp::mul:
            if (ga) da[i] += g[k] * pb[j];
            if (gb) db[j] += g[k] * pa[i];
            break;
          case BinOp::div:
            if (ga) da[i] += g[k] / pb[j];
            if (gb) db[j] -= g[k] * pa[i] / (pb[j] * pb[j]);
            break;
        }
      });
    });
  }
  return finish(out, name);
}

// Elementwise unary op; dfn(x, y) is dy/dx.
template <class F, class DF>
Tensor unary(const Tensor& x, const char* name, F fn, DF dfn) {
  Tensor out(x.shape());
  const float* px = x.ptr();
  float* po = out.ptr();
  const I64 n = x.numel();
  for (I64 i = 0; i < n; ++i) po[i] = fn(px[i]);
  if (needs_grad({&x})) {
    attach(out, name, {x}, [x, dfn](TensorImpl& o) {
      float* dx = x.impl()->grad.data();
      const float* px = x.ptr();
      const I64 n = x.numel();
      for (I64 i = 0; i < n; ++i) dx[i] += o.grad[static_cast<std::size_t>(i)] * dfn(px[i], o.data[static_cast<std::size_t>(i)]);
    });
  }
  return finish(out, name);
}

// Split a shape around `axis` into outer * len * inner.
struct AxisSplit {
  I64 outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit r;
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.len = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::div, "div"); }

Tensor scale(const Tensor& x, float s) {
  return unary(x, "scale", [s](float v) { return v * s; }, [s](float, float) { return s; });
}

Tensor add_scalar(const Tensor& x, float s) {
  return unary(x, "add_scalar", [s](float v) { return v + s; }, [](float, float) { return 1.0f; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0f); }

Tensor square(const Tensor& x) {
  return unary(x, "square", [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(x, "sqrt", [](float v) { return std::sqrt(v); }, [](float, float y) { return 0.5f / y; });
}

Tensor exp(const Tensor& x) {
  return unary(x, "exp", [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, "silu", [](float v) { return v / (1.0f + std::exp(-v)); },
      [](float v, float) {
        const float s = 1.0f / (1.0f + std::exp(-v));
        return s * (1.0f + v * (1.0f - s));
      });
}

Tensor tanh(const Tensor& x) {
  return unary(x, "tanh", [](float v) { return std::tanh(v); }, [](float, float y) { return 1.0f - y * y; });
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  return unary(
      x, "clamp", [lo, hi](float v) { return std::clamp(v, lo, hi); },
      [lo, hi](float v, float) { return (v > lo && v < hi) ? 1.0f : 0.0f; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (needs_grad({&x})) {
    attach(out, "sum", {x}, [x](TensorImpl& o) {
      const float g = o.grad[0];
      for (float& d : x.impl()->grad) d += g;
    });
  }
  return finish(out, "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0f / static_cast<float>(x.numel())); }

Tensor sum_axis(const Tensor& x, int axis, bool keepdim) {
  const int a = norm_axis(axis, x.rank());
  const AxisSplit sp = split_at(x.shape(), a);
  Shape os = x.shape();
  if (keepdim) os[static_cast<std::size_t>(a)] = 1;
  else os.erase(os.begin() + a);
  if (os.empty()) os = Shape{};
  Tensor out(os);
  const float* px = x.ptr();
  float* po = out.ptr();
  for (I64 o = 0; o < sp.outer; ++o)
    for (I64 l = 0; l < sp.len; ++l)
      for (I64 i = 0; i < sp.inner; ++i) po[o * sp.inner + i] += px[(o * sp.len + l) * sp.inner + i];
  if (needs_grad({&x})) {
    attach(out, "sum_axis", {x}, [x, sp](TensorImpl& o) {
      float* dx = x.impl()->grad.data();
      for (I64 oo = 0; oo < sp.outer; ++oo)
        for (I64 l = 0; l < sp.len; ++l)
          for (I64 i = 0; i < sp.inner; ++i)
            dx[(oo * sp.len + l) * sp.inner + i] += o.grad[static_cast<std::size_t>(oo * sp.inner + i)];
    });
  }
  return finish(out, "sum_axis");
}

Tensor mean_axis(const Tensor& x, int axis, bool keepdim) {
  const int a = norm_axis(axis, x.rank());
  return scale(sum_axis(x, a, keepdim), 1.0f / static_cast<float>(x.shape()[static_cast<std::size_t>(a)]));
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape())
    throw DimensionError("mse_loss shape mismatch: " + shape_str(prediction.shape()) + " vs " +
                         shape_str(target.shape()));
  return mean(square(sub(prediction, target)));
}

// ---------------------------------------------------------------- layout

Tensor reshape(const Tensor& x, Shape shape) {
  I64 known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one inferred axis");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0 && known > 0) shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  if (numel_of(shape) != x.numel())
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  Tensor out(shape, std::vector<float>(x.data().begin(), x.data().end()));
  if (needs_grad({&x})) {
    attach(out, "reshape", {x}, [x](TensorImpl& o) {
      auto& dx = x.impl()->grad;
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += o.grad[i];
    });
  }
  return out;
}

namespace {

// Offsets into the source for each output element of a permutation.
std::vector<I64> permute_offsets(const Shape& in, const std::vector<int>& perm, Shape& out_shape) {
  const std::size_t r = in.size();
  std::vector<I64> in_strides(r, 1);
  for (int i = static_cast<int>(r) - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(i) + 1] * in[static_cast<std::size_t>(i) + 1];
  out_shape.assign(r, 1);
  std::vector<I64> st(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in[static_cast<std::size_t>(perm[i])];
    st[i] = in_strides[static_cast<std::size_t>(perm[i])];
  }
  const I64 n = numel_of(in);
  std::vector<I64> offs(static_cast<std::size_t>(n));
  std::vector<I64> idx(r, 0);
  I64 off = 0;
  for (I64 o = 0; o < n; ++o) {
    offs[static_cast<std::size_t>(o)] = off;
    for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      if (++idx[du] < out_shape[du]) {
        off += st[du];
        break;
      }
      off -= st[du] * (out_shape[du] - 1);
      idx[du] = 0;
    }
  }
  return offs;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const std::size_t r = static_cast<std::size_t>(x.rank());
  if (perm.size() != r) throw DimensionError("permute: permutation length does not match rank");
  std::vector<int> check(perm);
  std::sort(check.begin(), check.end());
  for (std::size_t i = 0; i < r; ++i)
    if (check[i] != static_cast<int>(i)) throw DimensionError("permute: not a permutation");
  Shape os;
  auto offs = permute_offsets(x.shape(), perm, os);
  Tensor out(os);
  const float* px = x.ptr();
  float* po = out.ptr();
  for (std::size_t o = 0; o < offs.size(); ++o) po[o] = px[offs[o]];
  if (needs_grad({&x})) {
    attach(out, "permute", {x}, [x, offs = std::move(offs)](TensorImpl& o) {
      float* dx = x.impl()->grad.data();
      for (std::size_t k = 0; k < offs.size(); ++k) dx[offs[k]] += o.grad[k];
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw DimensionError("concat of zero tensors");
  const int a = norm_axis(axis, xs[0].rank());
  Shape os = xs[0].shape();
  I64 total = 0;
  for (const auto& t : xs) {
    if (t.rank() != xs[0].rank()) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < t.rank(); ++d)
      if (d != a && t.shape()[static_cast<std::size_t>(d)] != os[static_cast<std::size_t>(d)])
        throw DimensionError("concat: shape " + shape_str(t.shape()) + " disagrees with " +
                             shape_str(xs[0].shape()) + " at axis " + std::to_string(d));
    total += t.shape()[static_cast<std::size_t>(a)];
  }
  os[static_cast<std::size_t>(a)] = total;
  Tensor out(os);
  const AxisSplit sp = split_at(os, a);
  float* po = out.ptr();
  I64 at = 0;
  std::vector<I64> starts;
  for (const auto& t : xs) {
    const I64 len = t.shape()[static_cast<std::size_t>(a)];
    starts.push_back(at);
    const float* pt = t.ptr();
    for (I64 o = 0; o < sp.outer; ++o)
      std::copy_n(pt + o * len * sp.inner, len * sp.inner, po + (o * total + at) * sp.inner);
    at += len;
  }
  if (needs_grad(xs)) {
    attach(out, "concat", xs, [xs, starts, sp, a, total](TensorImpl& o) {
      for (std::size_t k = 0; k < xs.size(); ++k) {
        if (!xs[k].requires_grad()) continue;
        const I64 len = xs[k].shape()[static_cast<std::size_t>(a)];
        float* dx = xs[k].impl()->grad.data();
        for (I64 oo = 0; oo < sp.outer; ++oo) {
          const float* g = o.grad.data() + (oo * total + starts[k]) * sp.inner;
          float* d = dx + oo * len * sp.inner;
          for (I64 i = 0; i < len * sp.inner; ++i) d[i] += g[i];
        }
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, I64 start, I64 length) {
  const int a = norm_axis(axis, x.rank());
  const AxisSplit sp = split_at(x.shape(), a);
  if (start < 0 || length <= 0 || start + length > sp.len)
    throw DimensionError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") out of range on axis " +
                         std::to_string(a) + " of " + shape_str(x.shape()));
  Shape os = x.shape();
  os[static_cast<std::size_t>(a)] = length;
  Tensor out(os);
  const float* px = x.ptr();
  float* po = out.ptr();
  for (I64 o = 0; o < sp.outer; ++o)
    std::copy_n(px + (o * sp.len + start) * sp.inner, length * sp.inner, po + o * length * sp.inner);
  if (needs_grad({&x})) {
    attach(out, "slice", {x}, [x, sp, start, length](TensorImpl& o) {
      float* dx = x.impl()->grad.data();
      for (I64 oo = 0; oo < sp.outer; ++oo) {
        const float* g = o.grad.data() + oo * length * sp.inner;
        float* d = dx + (oo * sp.len + start) * sp.inner;
        for (I64 i = 0; i < length * sp.inner; ++i) d[i] += g[i];
      }
    });
  }
  return out;
}

std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<I64>& sizes) {
  std::vector<Tensor> parts;
  I64 at = 0;
  for (I64 s : sizes) {
    parts.push_back(slice(x, axis, at, s));
    at += s;
  }
  if (at != x.dim(axis)) throw DimensionError("split sizes do not cover the axis");
  return parts;
}

Tensor repeat_interleave(const Tensor& x, I64 times) {
  if (times < 1) throw ContractError("repeat_interleave: times must be >= 1");
  Shape os = x.shape();
  const I64 rows = os[0];
  const I64 inner = x.numel() / rows;
  os[0] = rows * times;
  Tensor out(os);
  const float* px = x.ptr();
  float* po = out.ptr();
  for (I64 r = 0; r < rows; ++r)
    for (I64 t = 0; t < times; ++t) std::copy_n(px + r * inner, inner, po + (r * times + t) * inner);
  if (needs_grad({&x})) {
    attach(out, "repeat_interleave", {x}, [x, rows, inner, times](TensorImpl& o) {
      float* dx = x.impl()->grad.data();
      for (I64 r = 0; r < rows; ++r)
        for (I64 t = 0; t < times; ++t)
          for (I64 i = 0; i < inner; ++i) dx[r * inner + i] += o.grad[static_cast<std::size_t>((r * times + t) * inner + i)];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<I64>& idx) {
  if (table.rank() != 2) throw DimensionError("gather_rows expects a 2-D table");
  const I64 rows = table.dim(0), d = table.dim(1);
  for (I64 i : idx)
    if (i < 0 || i >= rows) throw DimensionError("gather_rows index " + std::to_string(i) + " out of range");
  Tensor out(Shape{static_cast<I64>(idx.size()), d});
  for (std::size_t k = 0; k < idx.size(); ++k) std::copy_n(table.ptr() + idx[k] * d, d, out.ptr() + static_cast<I64>(k) * d);
  if (needs_grad({&table})) {
    attach(out, "gather_rows", {table}, [table, idx, d](TensorImpl& o) {
      float* dt = table.impl()->grad.data();
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (I64 j = 0; j < d; ++j) dt[idx[k] * d + j] += o.grad[k * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
    });
  }
  return out;
}

// ---------------------------------------------------------------- dense algebra

namespace {

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool trans_b, const char* name) {
  if (a.rank() < 2 || b.rank() < 2) throw DimensionError(std::string(name) + ": operands need rank >= 2");
  const I64 m = a.dim(-2), k = a.dim(-1);
  const I64 bk = trans_b ? b.dim(-1) : b.dim(-2);
  const I64 n = trans_b ? b.dim(-2) : b.dim(-1);
  if (bk != k)
    throw DimensionError(std::string(name) + ": inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const I64 batch = a.numel() / (m * k);
  const bool shared_b = b.rank() == 2;
  if (!shared_b) {
    if (b.rank() != a.rank() || b.numel() / (bk * n) != batch)
      throw DimensionError(std::string(name) + ": batch dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    for (int d = 0; d < a.rank() - 2; ++d)
      if (a.shape()[static_cast<std::size_t>(d)] != b.shape()[static_cast<std::size_t>(d)])
        throw DimensionError(std::string(name) + ": batch axis " + std::to_string(d) + " differs");
  }
  Shape os = a.shape();
  os.back() = n;
  Tensor out(os);
  const I64 bstride = shared_b ? 0 : k * n;
  for (I64 i = 0; i < batch; ++i)
    detail::gemm(false, trans_b, m, n, k, a.ptr() + i * m * k, b.ptr() + i * bstride, out.ptr() + i * m * n, false);
  if (needs_grad({&a, &b})) {
    attach(out, name, {a, b}, [a, b, m, n, k, batch, bstride, trans_b](TensorImpl& o) {
      const float* g = o.grad.data();
      if (a.requires_grad()) {
        float* da = a.impl()->grad.data();
        // dA = G op(B)^T
        for (I64 i = 0; i < batch; ++i)
          detail::gemm(false, !trans_b, m, k, n, g + i * m * n, b.ptr() + i * bstride, da + i * m * k, true);
      }
      if (b.requires_grad()) {
        float* db = b.impl()->grad.data();
        for (I64 i = 0; i < batch; ++i) {
          if (trans_b)  // dB (n x k) = G^T A
            detail::gemm(true, false, n, k, m, g + i * m * n, a.ptr() + i * m * k, db + i * bstride, true);
          else  // dB (k x n) = A^T G
            detail::gemm(true, false, k, n, m, a.ptr() + i * m * k, g + i * m * n, db + i * bstride, true);
        }
      }
    });
  }
  return finish(out, name);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return batched_matmul(a, b, false, "matmul"); }
Tensor matmul_transposed(const Tensor& a, const Tensor& b) { return batched_matmul(a, b, true, "matmul_transposed"); }

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) throw DimensionError("linear: weight must be [out, in]");
  const I64 in = weight.dim(1), outf = weight.dim(0);
  if (x.dim(-1) != in)
    throw DimensionError("linear: input feature axis " + std::to_string(x.dim(-1)) + " != weight in " + std::to_string(in));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) throw DimensionError("linear: bias must be [out]");
  const I64 rows = x.numel() / in;
  Shape os = x.shape();
  os.back() = outf;
  Tensor out(os);
  // Rank >= 3 inputs run one GEMM per leading index so each sample's result
  // is independent of the batch it sits in.
  const I64 blocks = x.rank() >= 3 ? x.dim(0) : 1, per = rows / blocks;
  for (I64 b = 0; b < blocks; ++b)
    detail::gemm(false, true, per, outf, in, x.ptr() + b * per * in, weight.ptr(), out.ptr() + b * per * outf, false);
  if (bias.defined()) {
    float* po = out.ptr();
    for (I64 r = 0; r < rows; ++r)
      for (I64 j = 0; j < outf; ++j) po[r * outf + j] += bias[j];
  }
  if (needs_grad({&x, &weight, &bias})) {
    attach(out, "linear", {x, weight, bias}, [x, weight, bias, rows, in, outf, blocks, per](TensorImpl& o) {
      const float* g = o.grad.data();
      if (x.requires_grad())
        for (I64 b = 0; b < blocks; ++b)
          detail::gemm(false, false, per, in, outf, g + b * per * outf, weight.ptr(), x.impl()->grad.data() + b * per * in,
                       true);
      if (weight.requires_grad()) detail::gemm(true, false, outf, in, rows, g, x.ptr(), weight.impl()->grad.data(), true);
      if (bias.defined() && bias.requires_grad()) {
        float* db = bias.impl()->grad.data();
        for (I64 r = 0; r < rows; ++r)
          for (I64 j = 0; j < outf; ++j) db[j] += g[r * outf + j];
      }
    });
  }
  return finish(out, "linear");
}

namespace {

struct ConvGeom {
  I64 b, c, h, w, o, kh, kw, stride, ph, pw, ho, wo;
  I64 ckk() const { return c * kh * kw; }
  I64 hw_out() const { return ho * wo; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && ph == 0 && pw == 0; }
};

void im2col(const ConvGeom& g, const float* x, float* col) {
  for (I64 c = 0; c < g.c; ++c)
    for (I64 ki = 0; ki < g.kh; ++ki)
      for (I64 kj = 0; kj < g.kw; ++kj) {
        float* row = col + ((c * g.kh + ki) * g.kw + kj) * g.hw_out();
        for (I64 oy = 0; oy < g.ho; ++oy) {
          const I64 iy = oy * g.stride - g.ph + ki;
          for (I64 ox = 0; ox < g.wo; ++ox) {
            const I64 ix = ox * g.stride - g.pw + kj;
            row[oy * g.wo + ox] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? x[(c * g.h + iy) * g.w + ix] : 0.0f;
          }
        }
      }
}

void col2im(const ConvGeom& g, const float* col, float* dx) {
  for (I64 c = 0; c < g.c; ++c)
    for (I64 ki = 0; ki < g.kh; ++ki)
      for (I64 kj = 0; kj < g.kw; ++kj) {
        const float* row = col + ((c * g.kh + ki) * g.kw + kj) * g.hw_out();
        for (I64 oy = 0; oy < g.ho; ++oy) {
          const I64 iy = oy * g.stride - g.ph + ki;
          if (iy < 0 || iy >= g.h) continue;
          for (I64 ox = 0; ox < g.wo; ++ox) {
            const I64 ix = ox * g.stride - g.pw + kj;
            if (ix >= 0 && ix < g.w) dx[(c * g.h + iy) * g.w + ix] += row[oy * g.wo + ox];
          }
        }
      }
}

Tensor conv2d_impl(const Tensor& input, const Tensor& kernel, const Tensor& bias, I64 stride, I64 ph, I64 pw,
                   const char* name) {
  if (input.rank() != 4) throw DimensionError(std::string(name) + ": input must be rank 4, got " + shape_str(input.shape()));
  if (kernel.rank() != 4) throw DimensionError(std::string(name) + ": kernel must be rank 4, got " + shape_str(kernel.shape()));
  ConvGeom g{};
  g.b = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.o = kernel.dim(0);
  g.kh = kernel.dim(2);
  g.kw = kernel.dim(3);
  g.stride = stride;
  g.ph = ph;
  g.pw = pw;
  if (kernel.dim(1) != g.c)
    throw DimensionError(std::string(name) + ": input channels (axis 1) = " + std::to_string(g.c) +
                         " but kernel channels (axis 1) = " + std::to_string(kernel.dim(1)));
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw DimensionError(std::string(name) + ": kernel size must be odd");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.o)) throw DimensionError(std::string(name) + ": bias must be [O]");
  if (stride < 1) throw ContractError(std::string(name) + ": stride must be >= 1");
  g.ho = (g.h + 2 * ph - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pw - g.kw) / stride + 1;
  if (g.ho <= 0 || g.wo <= 0) throw DimensionError(std::string(name) + ": kernel larger than padded input");

  Tensor out(Shape{g.b, g.o, g.ho, g.wo});
  const float* px = input.ptr();
  const float* pk = kernel.ptr();
  float* po = out.ptr();
  parallel_for(g.b, [&](I64 bi) {
    const float* xb = px + bi * g.c * g.h * g.w;
    float* ob = po + bi * g.o * g.hw_out();
    if (g.pointwise()) {
      detail::gemm(false, false, g.o, g.hw_out(), g.c, pk, xb, ob, false);
    } else {
      std::vector<float> col(static_cast<std::size_t>(g.ckk() * g.hw_out()));
      im2col(g, xb, col.data());
      detail::gemm(false, false, g.o, g.hw_out(), g.ckk(), pk, col.data(), ob, false);
    }
    if (bias.defined())
      for (I64 oc = 0; oc < g.o; ++oc) {
        const float bv = bias[oc];
        float* r = ob + oc * g.hw_out();
        for (I64 i = 0; i < g.hw_out(); ++i) r[i] += bv;
      }
  });

  if (needs_grad({&input, &kernel, &bias})) {
    attach(out, name, {input, kernel, bias}, [input, kernel, bias, g](TensorImpl& o) {
      const float* go = o.grad.data();
      const float* px = input.ptr();
      const float* pk = kernel.ptr();
      const bool gx = input.requires_grad(), gk = kernel.requires_grad();
      float* dk = gk ? kernel.impl()->grad.data() : nullptr;
      float* dx = gx ? input.impl()->grad.data() : nullptr;
      std::vector<float> col(g.pointwise() ? 0 : static_cast<std::size_t>(g.ckk() * g.hw_out()));
      // Serial over the batch so the kernel-gradient sum order is fixed.
      for (I64 bi = 0; bi < g.b; ++bi) {
        const float* gb = go + bi * g.o * g.hw_out();
        const float* xb = px + bi * g.c * g.h * g.w;
        if (gk) {
          if (g.pointwise()) {
            detail::gemm(false, true, g.o, g.c, g.hw_out(), gb, xb, dk, true);
          } else {
            im2col(g, xb, col.data());
            detail::gemm(false, true, g.o, g.ckk(), g.hw_out(), gb, col.data(), dk, true);
          }
        }
        if (gx) {
          float* dxb = dx + bi * g.c * g.h * g.w;
          if (g.pointwise()) {
            detail::gemm(true, false, g.c, g.hw_out(), g.o, pk, gb, dxb, true);
          } else {
            detail::gemm(true, false, g.ckk(), g.hw_out(), g.o, pk, gb, col.data(), false);
            col2im(g, col.data(), dxb);
          }
        }
      }
      if (bias.defined() && bias.requires_grad()) {
        float* db = bias.impl()->grad.data();
        for (I64 bi = 0; bi < g.b; ++bi)
          for (I64 oc = 0; oc < g.o; ++oc) {
            const float* r = go + (bi * g.o + oc) * g.hw_out();
            float acc = 0.0f;
            for (I64 i = 0; i < g.hw_out(); ++i) acc += r[i];
            db[oc] += acc;
          }
      }
    });
  }
  return finish(out, name);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding) {
  return conv2d_impl(input, kernel, bias, stride, padding, padding, "conv2d");
}

Tensor conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding) {
  if (input.rank() != 3) throw DimensionError("conv1d: input must be [B,C,N], got " + shape_str(input.shape()));
  if (kernel.rank() != 3) throw DimensionError("conv1d: kernel must be [O,C,k], got " + shape_str(kernel.shape()));
  Tensor x4 = reshape(input, {input.dim(0), input.dim(1), 1, input.dim(2)});
  Tensor k4 = reshape(kernel, {kernel.dim(0), kernel.dim(1), 1, kernel.dim(2)});
  Tensor y = conv2d_impl(x4, k4, bias, 1, 0, padding, "conv1d");
  return reshape(y, {y.dim(0), y.dim(1), y.dim(3)});
}

// ---------------------------------------------------------------- normalization

namespace {

// Normalizes `groups` contiguous chunks of each of `outer` rows; the affine
// parameters are indexed by channel = (position / per_channel) % channels.
struct NormGeom {
  I64 outer, groups, group_size, channels, per_channel;
  I64 channel_of(I64 g, I64 i) const { return (g * group_size + i) / per_channel % channels; }
};

Tensor normalize_groups(const Tensor& x, const NormGeom& ng, const Tensor& gamma, const Tensor& beta, float eps,
                        const char* name) {
  Tensor out(x.shape());
  const I64 nrows = ng.outer * ng.groups;
  std::vector<float> mean_v(static_cast<std::size_t>(nrows)), rstd_v(static_cast<std::size_t>(nrows));
  const float* px = x.ptr();
  float* po = out.ptr();
  for (I64 r = 0; r < nrows; ++r) {
    const float* xr = px + r * ng.group_size;
    double s = 0.0;
    for (I64 i = 0; i < ng.group_size; ++i) s += xr[i];
    const double mu = s / static_cast<double>(ng.group_size);
    double v = 0.0;
    for (I64 i = 0; i < ng.group_size; ++i) v += (xr[i] - mu) * (xr[i] - mu);
    v /= static_cast<double>(ng.group_size);
    const float rstd = static_cast<float>(1.0 / std::sqrt(v + eps));
    mean_v[static_cast<std::size_t>(r)] = static_cast<float>(mu);
    rstd_v[static_cast<std::size_t>(r)] = rstd;
    const I64 gi = r % ng.groups;
    float* yr = po + r * ng.group_size;
    for (I64 i = 0; i < ng.group_size; ++i) {
      const I64 c = ng.channel_of(gi, i);
      yr[i] = (xr[i] - static_cast<float>(mu)) * rstd * gamma[c] + beta[c];
    }
  }
  if (needs_grad({&x, &gamma, &beta})) {
    attach(out, name, {x, gamma, beta}, [x, gamma, beta, ng, mean_v, rstd_v](TensorImpl& o) {
      const float* px = x.ptr();
      const float* go = o.grad.data();
      float* dx = x.requires_grad() ? x.impl()->grad.data() : nullptr;
      float* dg = gamma.requires_grad() ? gamma.impl()->grad.data() : nullptr;
      float* db = beta.requires_grad() ? beta.impl()->grad.data() : nullptr;
      std::vector<float> xhat(static_cast<std::size_t>(ng.group_size));
      for (I64 r = 0; r < ng.outer * ng.groups; ++r) {
        const I64 gi = r % ng.groups;
        const float mu = mean_v[static_cast<std::size_t>(r)], rstd = rstd_v[static_cast<std::size_t>(r)];
        const float* xr = px + r * ng.group_size;
        const float* gr = go + r * ng.group_size;
        double s1 = 0.0, s2 = 0.0;
        for (I64 i = 0; i < ng.group_size; ++i) {
          const I64 c = ng.channel_of(gi, i);
          const float xh = (xr[i] - mu) * rstd;
          xhat[static_cast<std::size_t>(i)] = xh;
          const float dxh = gr[i] * gamma[c];
          s1 += dxh;
          s2 += dxh * xh;
          if (dg) dg[c] += gr[i] * xh;
          if (db) db[c] += gr[i];
        }
        if (!dx) continue;
        const float m1 = static_cast<float>(s1 / static_cast<double>(ng.group_size));
        const float m2 = static_cast<float>(s2 / static_cast<double>(ng.group_size));
        float* dr = dx + r * ng.group_size;
        for (I64 i = 0; i < ng.group_size; ++i) {
          const I64 c = ng.channel_of(gi, i);
          dr[i] += rstd * (gr[i] * gamma[c] - m1 - xhat[static_cast<std::size_t>(i)] * m2);
        }
      }
    });
  }
  return finish(out, name);
}

}  // namespace

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, float eps) {
  if (x.rank() < 2) throw DimensionError("group_norm: input needs a channel axis");
  const I64 c = x.dim(1);
  if (groups < 1 || c % groups != 0)
    throw DimensionError("group_norm: " + std::to_string(c) + " channels not divisible into " + std::to_string(groups) + " groups");
  if (gamma.numel() != c || beta.numel() != c) throw DimensionError("group_norm: affine parameters must have C entries");
  NormGeom ng{};
  ng.outer = x.dim(0);
  ng.groups = groups;
  ng.channels = c;
  ng.per_channel = x.numel() / (ng.outer * c);
  ng.group_size = (c / groups) * ng.per_channel;
  return normalize_groups(x, ng, gamma, beta, eps, "group_norm");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  const I64 d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) throw DimensionError("layer_norm: affine parameters must match last axis");
  NormGeom ng{};
  ng.outer = x.numel() / d;
  ng.groups = 1;
  ng.group_size = d;
  ng.channels = d;
  ng.per_channel = 1;
  return normalize_groups(x, ng, gamma, beta, eps, "layer_norm");
}

Tensor softmax(const Tensor& x) {
  const I64 d = x.dim(-1);
  const I64 rows = x.numel() / d;
  Tensor out(x.shape());
  const float* px = x.ptr();
  float* po = out.ptr();
  for (I64 r = 0; r < rows; ++r) {
    const float* xr = px + r * d;
    float* yr = po + r * d;
    const float mx = *std::max_element(xr, xr + d);
    double s = 0.0;
    for (I64 i = 0; i < d; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      s += yr[i];
    }
    const float inv = static_cast<float>(1.0 / s);
    for (I64 i = 0; i < d; ++i) yr[i] *= inv;
  }
  if (needs_grad({&x})) {
    attach(out, "softmax", {x}, [x, d, rows](TensorImpl& o) {
      float* dx = x.impl()->grad.data();
      for (I64 r = 0; r < rows; ++r) {
        const float* y = o.data.data() + r * d;
        const float* g = o.grad.data() + r * d;
        double dot = 0.0;
        for (I64 i = 0; i < d; ++i) dot += static_cast<double>(g[i]) * y[i];
        for (I64 i = 0; i < d; ++i) dx[r * d + i] += y[i] * (g[i] - static_cast<float>(dot));
      }
    });
  }
  return finish(out, "softmax");
}

Tensor log_softmax(const Tensor& x) {
  const I64 d = x.dim(-1);
  const I64 rows = x.numel() / d;
  Tensor out(x.shape());
  const float* px = x.ptr();
  float* po = out.ptr();
  for (I64 r = 0; r < rows; ++r) {
    const float* xr = px + r * d;
    const float mx = *std::max_element(xr, xr + d);
    double s = 0.0;
    for (I64 i = 0; i < d; ++i) s += std::exp(static_cast<double>(xr[i] - mx));
    const float lse = mx + static_cast<float>(std::log(s));
    for (I64 i = 0; i < d; ++i) po[r * d + i] = xr[i] - lse;
  }
  if (needs_grad({&x})) {
    attach(out, "log_softmax", {x}, [x, d, rows](TensorImpl& o) {
      float* dx = x.impl()->grad.data();
      for (I64 r = 0; r < rows; ++r) {
        const float* y = o.data.data() + r * d;
        const float* g = o.grad.data() + r * d;
        double gs = 0.0;
        for (I64 i = 0; i < d; ++i) gs += g[i];
        for (I64 i = 0; i < d; ++i) dx[r * d + i] += g[i] - std::exp(y[i]) * static_cast<float>(gs);
      }
    });
  }
  return finish(out, "log_softmax");
}

Tensor l2_normalize(const Tensor& x, float eps) {
  const I64 d = x.dim(-1);
  const I64 rows = x.numel() / d;
  Tensor out(x.shape());
  std::vector<float> norms(static_cast<std::size_t>(rows));
  for (I64 r = 0; r < rows; ++r) {
    const float* xr = x.ptr() + r * d;
    double s = 0.0;
    for (I64 i = 0; i < d; ++i) s += static_cast<double>(xr[i]) * xr[i];
    const float n = static_cast<float>(std::sqrt(s + eps));
    norms[static_cast<std::size_t>(r)] = n;
    for (I64 i = 0; i < d; ++i) out.ptr()[r * d + i] = xr[i] / n;
  }
  if (needs_grad({&x})) {
    attach(out, "l2_normalize", {x}, [x, d, rows, norms](TensorImpl& o) {
      float* dx = x.impl()->grad.data();
      for (I64 r = 0; r < rows; ++r) {
        const float* y = o.data.data() + r * d;
        const float* g = o.grad.data() + r * d;
        double dot = 0.0;
        for (I64 i = 0; i < d; ++i) dot += static_cast<double>(g[i]) * y[i];
        const float n = norms[static_cast<std::size_t>(r)];
        for (I64 i = 0; i < d; ++i) dx[r * d + i] += (g[i] - y[i] * static_cast<float>(dot)) / n;
      }
    });
  }
  return finish(out, "l2_normalize");
}

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  if (q.rank() != 3 || k.rank() != 3) throw DimensionError("attention: q and k must be [B,N,d] and [B,M,d]");
  if (q.dim(2) != k.dim(2))
    throw DimensionError("attention: query dim " + std::to_string(q.dim(2)) + " != key dim " + std::to_string(k.dim(2)));
  if (q.dim(0) != k.dim(0)) throw DimensionError("attention: batch sizes of q and k differ");
  const float s = 1.0f / std::sqrt(static_cast<float>(q.dim(2)));
  return softmax(scale(matmul_transposed(q, k), s));
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (v.rank() != 3 || v.dim(0) != k.dim(0) || v.dim(1) != k.dim(1))
    throw DimensionError("attention: v must be [B,M,dv] matching k");
  return matmul(attention_weights(q, k), v);
}

// ---------------------------------------------------------------- resampling

Tensor upsample_nearest2d(const Tensor& x, int factor) {
  if (x.rank() != 4) throw DimensionError("upsample_nearest2d expects [B,C,H,W]");
  const I64 bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const I64 H = h * factor, W = w * factor;
  Tensor out(Shape{x.dim(0), x.dim(1), H, W});
  const float* px = x.ptr();
  float* po = out.ptr();
  for (I64 p = 0; p < bc; ++p)
    for (I64 y = 0; y < H; ++y)
      for (I64 xx = 0; xx < W; ++xx) po[(p * H + y) * W + xx] = px[(p * h + y / factor) * w + xx / factor];
  if (needs_grad({&x})) {
    attach(out, "upsample_nearest2d", {x}, [x, bc, h, w, H, W, factor](TensorImpl& o) {
      float* dx = x.impl()->grad.data();
      for (I64 p = 0; p < bc; ++p)
        for (I64 y = 0; y < H; ++y)
          for (I64 xx = 0; xx < W; ++xx)
            dx[(p * h + y / factor) * w + xx / factor] += o.grad[static_cast<std::size_t>((p * H + y) * W + xx)];
    });
  }
  return out;
}

Tensor avgpool2d(const Tensor& x, int factor) {
  if (x.rank() != 4) throw DimensionError("avgpool2d expects [B,C,H,W]");
  const I64 bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const I64 fy = h > 1 ? factor : 1, fx = w > 1 ? factor : 1;
  const I64 H = (h + fy - 1) / fy, W = (w + fx - 1) / fx;
  // Partial windows at odd edges average over the pixels they cover.
  auto count = [=](I64 y, I64 xx) {
    return static_cast<float>((std::min(h, (y + 1) * fy) - y * fy) * (std::min(w, (xx + 1) * fx) - xx * fx));
  };
  Tensor out(Shape{x.dim(0), x.dim(1), H, W});
  const float* px = x.ptr();
  float* po = out.ptr();
  for (I64 p = 0; p < bc; ++p)
    for (I64 y = 0; y < H; ++y)
      for (I64 xx = 0; xx < W; ++xx) {
        float s = 0.0f;
        for (I64 iy = y * fy; iy < std::min(h, (y + 1) * fy); ++iy)
          for (I64 ix = xx * fx; ix < std::min(w, (xx + 1) * fx); ++ix) s += px[(p * h + iy) * w + ix];
        po[(p * H + y) * W + xx] = s / count(y, xx);
      }
  if (needs_grad({&x})) {
    attach(out, "avgpool2d", {x}, [x, bc, h, w, H, W, fy, fx, count](TensorImpl& o) {
      float* dx = x.impl()->grad.data();
      for (I64 p = 0; p < bc; ++p)
        for (I64 y = 0; y < H; ++y)
          for (I64 xx = 0; xx < W; ++xx) {
            const float g = o.grad[static_cast<std::size_t>((p * H + y) * W + xx)] / count(y, xx);
            for (I64 iy = y * fy; iy < std::min(h, (y + 1) * fy); ++iy)
              for (I64 ix = xx * fx; ix < std::min(w, (xx + 1) * fx); ++ix) dx[(p * h + iy) * w + ix] += g;
          }
    });
  }
  return out;
}

namespace {

// One separable blur pass along H (vertical) or W, replicate padding.
Tensor blur_pass(const Tensor& x, const std::vector<float>& taps, bool vertical) {
  const I64 bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const I64 r = static_cast<I64>(taps.size()) / 2;
  Tensor out(x.shape());
  auto src_index = [=](I64 p, I64 y, I64 xx, I64 k) {
    if (vertical) return (p * h + std::clamp(y + k - r, I64{0}, h - 1)) * w + xx;
    return (p * h + y) * w + std::clamp(xx + k - r, I64{0}, w - 1);
  };
  const float* px = x.ptr();
  float* po = out.ptr();
  for (I64 p = 0; p < bc; ++p)
    for (I64 y = 0; y < h; ++y)
      for (I64 xx = 0; xx < w; ++xx) {
        float s = 0.0f;
        for (I64 k = 0; k < static_cast<I64>(taps.size()); ++k) s += taps[static_cast<std::size_t>(k)] * px[src_index(p, y, xx, k)];
        po[(p * h + y) * w + xx] = s;
      }
  if (needs_grad({&x})) {
    attach(out, "gaussian_blur2d", {x}, [x, taps, bc, h, w, src_index](TensorImpl& o) {
      float* dx = x.impl()->grad.data();
      for (I64 p = 0; p < bc; ++p)
        for (I64 y = 0; y < h; ++y)
          for (I64 xx = 0; xx < w; ++xx) {
            const float g = o.grad[static_cast<std::size_t>((p * h + y) * w + xx)];
            for (I64 k = 0; k < static_cast<I64>(taps.size()); ++k) dx[src_index(p, y, xx, k)] += taps[static_cast<std::size_t>(k)] * g;
          }
    });
  }
  return out;
}

}  // namespace

Tensor gaussian_blur2d(const Tensor& x, int ksize, float sigma) {
  if (x.rank() != 4) throw DimensionError("gaussian_blur2d expects [B,C,H,W]");
  if (ksize < 1 || ksize % 2 == 0) throw ContractError("gaussian_blur2d: kernel size must be odd");
  std::vector<float> taps(static_cast<std::size_t>(ksize));
  const int r = ksize / 2;
  double s = 0.0;
  for (int i = 0; i < ksize; ++i) {
    const double d = i - r;
    taps[static_cast<std::size_t>(i)] = static_cast<float>(std::exp(-d * d / (2.0 * sigma * sigma)));
    s += taps[static_cast<std::size_t>(i)];
  }
  for (auto& t : taps) t = static_cast<float>(t / s);
  return finish(blur_pass(blur_pass(x, taps, true), taps, false), "gaussian_blur2d");
}

Tensor resize_bilinear(const Tensor& x, I64 height, I64 width) {
  if (x.rank() != 4) throw DimensionError("resize_bilinear expects [B,C,H,W]");
  const I64 bc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out(Shape{x.dim(0), x.dim(1), height, width});
  const float* px = x.ptr();
  float* po = out.ptr();
  auto coord = [](I64 o, I64 in_size, I64 out_size, I64& i0, I64& i1, float& f) {
    const double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in_size) / static_cast<double>(out_size) - 0.5;
    const double cl = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    i0 = static_cast<I64>(std::floor(cl));
    i1 = std::min(i0 + 1, in_size - 1);
    f = static_cast<float>(cl - static_cast<double>(i0));
  };
  for (I64 y = 0; y < height; ++y) {
    I64 y0, y1;
    float fy;
    coord(y, h, height, y0, y1, fy);
    for (I64 xx = 0; xx < width; ++xx) {
      I64 x0, x1;
      float fx;
      coord(xx, w, width, x0, x1, fx);
      for (I64 p = 0; p < bc; ++p) {
        const float* s = px + p * h * w;
        const float top = s[y0 * w + x0] * (1.0f - fx) + s[y0 * w + x1] * fx;
        const float bot = s[y1 * w + x0] * (1.0f - fx) + s[y1 * w + x1] * fx;
        po[(p * height + y) * width + xx] = top * (1.0f - fy) + bot * fy;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------- video layout

VideoDims VideoDims::of(const Tensor& video) {
  if (video.rank() != 5) throw DimensionError("expected a [b,n,c,h,w] video tensor, got " + shape_str(video.shape()));
  return VideoDims{video.dim(0), video.dim(1), video.dim(2), video.dim(3), video.dim(4)};
}

Tensor rearrange_video(const Tensor& x, VideoLayout mode) {
  const VideoDims d = VideoDims::of(x);
  switch (mode) {
    case VideoLayout::spatial: return reshape(x, {d.b * d.n, d.c, d.h, d.w});
    case VideoLayout::temporal_conv: return reshape(permute(x, {0, 3, 4, 2, 1}), {d.b * d.h * d.w, d.c, d.n});
    case VideoLayout::temporal_attn: return reshape(permute(x, {0, 3, 4, 1, 2}), {d.b * d.h * d.w, d.n, d.c});
  }
  throw ContractError("unknown video layout");
}

Tensor restore_video(const Tensor& x, VideoLayout mode, const VideoDims& d) {
  switch (mode) {
    case VideoLayout::spatial:
      if (x.rank() != 4) throw DimensionError("restore_video(spatial) expects rank 4");
      return reshape(x, {d.b, d.n, d.c, d.h, d.w});
    case VideoLayout::temporal_conv:
      if (x.rank() != 3) throw DimensionError("restore_video(temporal_conv) expects rank 3");
      return permute(reshape(x, {d.b, d.h, d.w, d.c, d.n}), {0, 4, 3, 1, 2});
    case VideoLayout::temporal_attn:
      if (x.rank() != 3) throw DimensionError("restore_video(temporal_attn) expects rank 3");
      return permute(reshape(x, {d.b, d.h, d.w, d.n, d.c}), {0, 3, 4, 1, 2});
  }
  throw ContractError("unknown video layout");
}

}  // namespace veil
