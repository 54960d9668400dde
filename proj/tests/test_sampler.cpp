#include <cmath>
#include <filesystem>

#include <unistd.h>

#include "doctest.h"
#include "test_util.hpp"
#include "veil/error.hpp"
#include "veil/image_io.hpp"
#include "veil/sampler.hpp"

using namespace veil;
using veil::testing::bit_equal;
using veil::testing::max_abs_diff;
using veil::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

UNetConfig toy_unet() {
  UNetConfig c;
  c.base = 8;
  c.mults = {1, 2};
  c.attention_resolutions = {2};
  c.res_blocks = 1;
  c.content_dim = 8;
  c.latent_channels = 4;
  c.latent_size = 4;
  c.max_frames = 8;
  return c;
}

void perturb_all(UNet& u, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : u.params())
    for (float& v : t.data()) v += static_cast<float>(0.2 * rng.normal());
}

// Exact posterior-mean denoiser for data x0 = +1 with probability p and -1
// otherwise, expressed as a v prediction.
Tensor two_point_v(const Tensor& z, int t, const NoiseSchedule& s, double p) {
  const double ab = s.alpha_bar(t), sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
  Tensor v(z.shape());
  for (std::int64_t i = 0; i < z.numel(); ++i) {
    const double x0 = std::tanh(0.5 * std::log(p / (1.0 - p)) + sa * z[i] / (1.0 - ab));
    const double eps = (z[i] - sa * x0) / sb;
    v[i] = static_cast<float>(sa * eps - sb * x0);
  }
  return v;
}

struct TinyModels {
  UNet unet{toy_unet(), 1};
  Codec codec{CodecConfig{4, 4, 8}, 2};
  NoiseSchedule sched = make_schedule(100, ScheduleKind::linear);
  EditModels models() const { return {unet, codec, sched}; }
};

EditRequest tiny_request(Rng& rng) {
  EditRequest r;
  r.frames = random_tensor(rng, {3, 3, 16, 16}, 0.5f);
  r.depth = Tensor(Shape{3, 1, 16, 16});
  for (float& v : r.depth.data()) v = static_cast<float>(rng.uniform());
  r.content = random_tensor(rng, {8});
  r.t_s = 2;
  r.guidance.steps = 5;
  r.guidance.omega = 3.0f;
  r.guidance.omega_t = 0.5f;
  r.seed = 11;
  return r;
}

}  // namespace

TEST_CASE("guidance combination") {
  Rng rng(1);
  Tensor a = random_tensor(rng, {2, 3, 4}), b = random_tensor(rng, {2, 3, 4}), c = random_tensor(rng, {2, 3, 4});
  CHECK(bit_equal(combine_guidance(a, b, c, 1.0f, 1.0f), c));
  CHECK(bit_equal(combine_guidance(Tensor(), b, c, 1.0f, 1.0f), c));
  Tensor cfg = combine_guidance(a, b, c, 7.5f, 1.0f);
  CHECK(bit_equal(cfg, add(b, scale(sub(c, b), 7.5f))));
  for (float w : {0.0f, 2.0f, 7.5f})
    for (float wt : {0.0f, 0.5f, 1.5f}) CHECK(bit_equal(combine_guidance(a, a, a, w, wt), a));

  Tensor g = combine_guidance(a, b, c, 7.5f, 0.5f);
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double want = a[i] + 0.5 * (b[i] - a[i]) + 7.5 * (c[i] - b[i]);
    CHECK(std::abs(g[i] - want) <= 1e-6 * std::max(1.0, std::abs(want)));
  }
  CHECK_THROWS_AS(combine_guidance(Tensor(), b, c, 2.0f, 0.5f), ContractError);

  GuidanceConfig bad;
  bad.eta = 1.5f;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.steps = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("guided prediction reduces to classifier-free guidance") {
  UNet u(toy_unet(), 3);
  perturb_all(u, 4);
  Rng rng(5);
  NoGradGuard ng;
  Tensor z = random_tensor(rng, {1, 2, 4, 4, 4}), s = random_tensor(rng, {1, 2, 8, 4, 4}), c = random_tensor(rng, {1, 8});
  DenoiseInput in{z, {40}, s, c, true};
  const Tensor cond = u.forward(in);
  in.content = Tensor();
  const Tensor null = u.forward(in);
  in.temporal_active = false;
  const Tensor image = u.forward(in);

  GuidanceConfig g;
  g.omega = 1.0f;
  CHECK(bit_equal(guided_prediction(u, z, 40, s, c, g), cond));
  g.omega = 7.5f;
  CHECK(bit_equal(guided_prediction(u, z, 40, s, c, g), add(null, scale(sub(cond, null), 7.5f))));
  g.omega_t = 0.5f;
  CHECK(bit_equal(guided_prediction(u, z, 40, s, c, g), combine_guidance(image, null, cond, 7.5f, 0.5f)));
}

TEST_CASE("ddim step") {
  const NoiseSchedule s = make_schedule(1000, ScheduleKind::linear);
  Rng rng(6);
  Tensor z = random_tensor(rng, {64}), v = random_tensor(rng, {64});
  Rng r1(7), r2(7);
  CHECK(bit_equal(ddim_step(z, v, 500, 400, 0.0, s, r1), ddim_step(z, v, 500, 400, 0.0, s, r2)));
  Rng r3(8);
  CHECK(bit_equal(ddim_step(z, v, 500, 0, 0.7, s, r3), from_v(z, v, 500, s).x0));
  CHECK_THROWS_AS(ddim_step(z, v, 400, 400, 0.0, s, r3), ContractError);
  CHECK_THROWS_AS(ddim_step(z, v, 300, 400, 0.0, s, r3), ContractError);

  // eta = 1 with t_prev = t - 1 is the ancestral update.
  for (int t : {2, 10, 300, 999}) {
    const auto c = ddim_coefficients(t, t - 1, 1.0, s);
    const double ab = s.alpha_bar(t), ab_p = s.alpha_bar(t - 1), beta = s.beta(t);
    const double var = (1.0 - ab_p) / (1.0 - ab) * beta;
    const double c_x0 = std::sqrt(ab_p) * beta / (1.0 - ab), c_zt = std::sqrt(s.alpha(t)) * (1.0 - ab_p) / (1.0 - ab);
    // mean = c_x0 x0 + c_zt (sqrt(ab) x0 + sqrt(1 - ab) eps)
    CHECK(c.sigma * c.sigma == doctest::Approx(var).epsilon(1e-6));
    CHECK(c.x0 == doctest::Approx(c_x0 + c_zt * std::sqrt(ab)).epsilon(1e-6));
    CHECK(c.eps == doctest::Approx(c_zt * std::sqrt(1.0 - ab)).epsilon(1e-6));
  }

  const auto ts = ddim_timesteps(1000, 50);
  CHECK(ts.size() == 50);
  CHECK(ts.front() == 1000);
  CHECK(ts.back() == 20);
  for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
  CHECK(ddim_timesteps(10, 10) == std::vector<int>{10, 9, 8, 7, 6, 5, 4, 3, 2, 1});
  CHECK_THROWS_AS(ddim_timesteps(10, 11), ConfigError);
}

TEST_CASE("perfect model on a single point lands on it") {
  const NoiseSchedule s = make_schedule(1000, ScheduleKind::linear);
  Rng rng(9);
  const Tensor x0 = random_tensor(rng, {2, 3, 4});
  Predictor oracle = [&](const Tensor& z, int t) {
    const double ab = s.alpha_bar(t);
    Tensor eps = scale(sub(z, scale(x0, static_cast<float>(std::sqrt(ab)))), static_cast<float>(1.0 / std::sqrt(1.0 - ab)));
    return to_v(x0, eps, t, s);
  };
  for (double eta : {0.0, 1.0}) {
    Tensor z = sample_ddim(oracle, random_tensor(rng, {2, 3, 4}), 50, eta, s, Rng(10));
    CHECK(max_abs_diff(z, x0) < 1e-3f);
  }
}

TEST_CASE("ancestral step") {
  const NoiseSchedule s = make_schedule(1000, ScheduleKind::linear);
  Rng rng(11);
  const Tensor x0 = random_tensor(rng, {16});
  const Tensor noise = random_tensor(rng, {16});
  Tensor z1 = forward_marginal(x0, 1, noise, s);
  Rng r(12);
  Tensor out = ancestral_step(z1, to_v(x0, noise, 1, s), 1, s, r);
  CHECK(max_abs_diff(out, x0) < 1e-5f);
  CHECK_THROWS_AS(ancestral_step(z1, z1, 0, s, r), ContractError);

  // Repeated draws at a fixed step spread with the posterior variance.
  const int t = 300, draws = 20000;
  Tensor zt(Shape{draws}, 0.3f), v(Shape{draws}, -0.2f);
  Tensor samples = ancestral_step(zt, v, t, s, r);
  const double mean_want = posterior_mean_var(Tensor(Shape{1}, 0.3f), from_v(Tensor(Shape{1}, 0.3f), Tensor(Shape{1}, -0.2f), t, s).x0, t, s).mean[0];
  const double var_want = posterior_mean_var(zt, zt, t, s).variance;
  double m = 0, m2 = 0;
  for (float x : samples.data()) m += x;
  m /= draws;
  for (float x : samples.data()) m2 += (x - m) * (x - m);
  m2 /= draws - 1;
  CHECK(std::abs(m - mean_want) < 3.0 * std::sqrt(var_want / draws));
  // Sample variance has standard error var * sqrt(2 / (N - 1)).
  CHECK(std::abs(m2 - var_want) < 3.0 * var_want * std::sqrt(2.0 / (draws - 1)));
}

TEST_CASE("ancestral and ddim agree on a two-point distribution") {
  const NoiseSchedule s = make_schedule(1000, ScheduleKind::linear);
  const double p = 0.7;
  Predictor model = [&](const Tensor& z, int t) { return two_point_v(z, t, s, p); };
  const int n = 4000;
  Tensor a = sample_ancestral(model, Rng(13).normal_tensor({n}), s, Rng(14));
  Tensor d = sample_ddim(model, Rng(15).normal_tensor({n}), 50, 1.0, s, Rng(16));
  auto stats = [](const Tensor& x) {
    double m = 0, v = 0;
    for (float e : x.data()) m += e;
    m /= static_cast<double>(x.numel());
    for (float e : x.data()) v += (e - m) * (e - m);
    return std::pair{m, v / static_cast<double>(x.numel() - 1)};
  };
  const auto [ma, va] = stats(a);
  const auto [md, vd] = stats(d);
  INFO("ancestral " << ma << " ddim " << md);
  CHECK(std::abs(ma - md) < 3.0 * std::sqrt(va / n + vd / n));
  // Both land near the data mean 2p - 1.
  CHECK(std::abs(ma - (2 * p - 1)) < 3.0 * std::sqrt(va / n) + 0.02);
}

TEST_CASE("edit pipeline") {
  TinyModels tm;
  perturb_all(tm.unet, 20);
  Rng rng(21);
  EditRequest req = tiny_request(rng);
  Tensor a = edit_video(tm.models(), req), b = edit_video(tm.models(), req);
  CHECK(a.shape() == req.frames.shape());
  CHECK(bit_equal(a, b));
  EditRequest other = req;
  other.seed = 12;
  CHECK(max_abs_diff(edit_video(tm.models(), other), a) > 0.0f);

  EditRequest bad = req;
  bad.depth = Tensor(Shape{2, 1, 16, 16});
  CHECK_THROWS_AS(edit_video(tm.models(), bad), DimensionError);
  bad = req;
  bad.content = Tensor(Shape{5});
  CHECK_THROWS_AS(edit_video(tm.models(), bad), DimensionError);

  SUBCASE("masked editing") {
    Tensor none(Shape{3, 1, 16, 16}), all(Shape{3, 1, 16, 16}, 1.0f);
    CHECK(bit_equal(masked_edit(tm.models(), req, none), a));
    NoGradGuard ng;
    Tensor recon = reshape(tm.codec.decode(tm.codec.encode(reshape(req.frames, {1, 3, 3, 16, 16}))), {3, 3, 16, 16});
    CHECK(max_abs_diff(masked_edit(tm.models(), req, all), recon) < 1e-5f);
    CHECK_THROWS_AS(masked_edit(tm.models(), req, Tensor(Shape{3, 1, 8, 16})), DimensionError);

    // Left half kept: kept latents and decoded pixels far from the seam follow the input.
    Tensor half(Shape{3, 1, 16, 16});
    for (int f = 0; f < 3; ++f)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 8; ++x) half[(f * 16 + y) * 16 + x] = 1.0f;
    Tensor out = masked_edit(tm.models(), req, half);
    CHECK(max_abs_diff(out, a) > 0.0f);
    CHECK(max_abs_diff(out, recon) > 0.0f);
  }
}

TEST_CASE("mask downsampling and files") {
  Tensor m(Shape{1, 1, 4, 4});
  // Block (0,0): 3 of 4 kept; block (0,1): 2 of 4 (tie, not kept); block (1,0): 1; block (1,1): 4.
  const float v[16] = {1, 1, 1, 0, 1, 0, 1, 0, 0, 0, 1, 1, 0, 1, 1, 1};
  for (int i = 0; i < 16; ++i) m[i] = v[i];
  Tensor d = downsample_mask(m, 2);
  CHECK(d.shape() == Shape{1, 1, 2, 2});
  CHECK(d[0] == 1.0f);
  CHECK(d[1] == 0.0f);
  CHECK(d[2] == 0.0f);
  CHECK(d[3] == 1.0f);
  CHECK_THROWS_AS(downsample_mask(Tensor(Shape{1, 1, 5, 4}), 2), DimensionError);

  const fs::path dir = fs::temp_directory_path() / ("veil_mask_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<std::uint16_t> px = {0, 127, 128, 255};
  write_png(dir / "mask_00000.png", Image{2, 2, 1, 8, px});
  write_png(dir / "mask_00001.png", Image{2, 2, 1, 8, {255, 255, 255, 255}});
  Tensor masks = read_masks(dir);
  CHECK(masks.shape() == Shape{2, 1, 2, 2});
  CHECK(masks[0] == 0.0f);
  CHECK(masks[1] == 0.0f);
  CHECK(masks[2] == 1.0f);
  CHECK(masks[3] == 1.0f);
  write_png(dir / "mask_00003.png", Image{2, 2, 1, 8, px});
  CHECK_THROWS_AS(read_masks(dir), DataError);
  fs::remove_all(dir);
}
