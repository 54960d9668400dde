#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "veil/error.hpp"
#include "veil/unet.hpp"

using namespace veil;
using veil::testing::bit_equal;
using veil::testing::grad_check;
using veil::testing::max_abs_diff;
using veil::testing::random_tensor;

namespace {

UNetConfig toy_config() {
  UNetConfig c;
  c.base = 8;
  c.mults = {1, 2};
  c.attention_resolutions = {4, 2};
  c.res_blocks = 1;
  c.content_dim = 8;
  c.latent_channels = 4;
  c.latent_size = 4;
  c.max_frames = 8;
  return c;
}

DenoiseInput random_input(Rng& rng, std::int64_t b, std::int64_t n, bool with_content = true) {
  DenoiseInput in;
  in.z_t = random_tensor(rng, {b, n, 4, 4, 4});
  in.structure = random_tensor(rng, {b, n, 8, 4, 4});
  for (std::int64_t i = 0; i < b; ++i) in.t.push_back(static_cast<int>(rng.uniform_int(1, 1000)));
  if (with_content) in.content = random_tensor(rng, {b, 8});
  return in;
}

// Moves every zero- or identity-initialized parameter off its initial value.
void perturb_all(UNet& u, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : u.params())
    for (float& v : t.data()) v += static_cast<float>(0.2 * rng.normal());
}

Tensor frame(const Tensor& video, std::int64_t b, std::int64_t f) {
  return slice(slice(video, 0, b, 1), 1, f, 1);
}

}  // namespace

TEST_CASE("timestep embedding") {
  Tensor e = timestep_embedding({0, 5}, 8);
  CHECK(e.shape() == Shape{2, 8});
  for (int k = 0; k < 4; ++k) {
    CHECK(e[k] == 0.0f);
    CHECK(e[4 + k] == 1.0f);
    const double f = std::exp(-std::log(10000.0) * k / 4);
    CHECK(e[8 + k] == doctest::Approx(std::sin(5 * f)));
    CHECK(e[12 + k] == doctest::Approx(std::cos(5 * f)));
  }
  CHECK_THROWS_AS(timestep_embedding({1}, 7), ConfigError);
}

TEST_CASE("unet output shape and frame independence") {
  UNet u(toy_config(), 1);
  Rng rng(2);
  NoGradGuard ng;
  DenoiseInput in = random_input(rng, 2, 3);
  Tensor v = u.forward(in);
  CHECK(v.shape() == in.z_t.shape());
  for (float x : v.data()) CHECK(std::isfinite(x));

  perturb_all(u, 3);
  DenoiseInput one = random_input(rng, 1, 1);
  DenoiseInput eight = one;
  eight.z_t = concat(std::vector<Tensor>(8, one.z_t), 1);
  eight.structure = concat(std::vector<Tensor>(8, one.structure), 1);
  eight.temporal_active = false;
  Tensor v8 = u.forward(eight), v1 = u.forward(one);
  for (int f = 0; f < 8; ++f) CHECK(bit_equal(frame(v8, 0, f), v1));

  DenoiseInput one_off = one;
  one_off.temporal_active = false;
  CHECK(bit_equal(u.forward(one), u.forward(one_off)));
}

TEST_CASE("temporal layers are the identity at initialization") {
  UNet u(toy_config(), 4);
  Rng rng(5);
  NoGradGuard ng;
  DenoiseInput in = random_input(rng, 2, 4);
  DenoiseInput off = in;
  off.temporal_active = false;
  CHECK(bit_equal(u.forward(in), u.forward(off)));

  Tensor x = random_tensor(rng, {8, 8, 4, 4});
  Tensor temb = u.time_features({3, 700});
  CHECK(bit_equal(u.residual_block("down0.res0", x, temb, 4, true), u.residual_block("down0.res0", x, temb, 4, false)));
  Tensor ctx = random_tensor(rng, {8, 1, 8});
  CHECK(bit_equal(u.transformer_block("down0.attn0", x, ctx, 4, true),
                  u.transformer_block("down0.attn0", x, ctx, 4, false)));
}

TEST_CASE("frame positions break permutation symmetry") {
  UNet u(toy_config(), 6);
  perturb_all(u, 7);
  Rng rng(8);
  NoGradGuard ng;
  DenoiseInput in = random_input(rng, 1, 4);
  const std::vector<std::int64_t> perm = {2, 0, 3, 1};
  auto permute_frames = [&](const Tensor& v) {
    std::vector<Tensor> parts;
    for (auto p : perm) parts.push_back(slice(v, 1, p, 1));
    return concat(parts, 1);
  };
  DenoiseInput p = in;
  p.z_t = permute_frames(in.z_t);
  p.structure = permute_frames(in.structure);
  Tensor a = permute_frames(u.forward(in)), b = u.forward(p);
  CHECK(max_abs_diff(a, b) > 1e-3f);

  DenoiseInput in_off = in, p_off = p;
  in_off.temporal_active = p_off.temporal_active = false;
  CHECK(bit_equal(permute_frames(u.forward(in_off)), u.forward(p_off)));
}

TEST_CASE("null content token") {
  UNet u(toy_config(), 9);
  Rng rng(10);
  DenoiseInput in = random_input(rng, 2, 2, false);
  Tensor v = u.forward(in);
  for (float x : v.data()) CHECK(std::isfinite(x));

  DenoiseInput explicit_null = in;
  explicit_null.content = concat({reshape(u.null_content(), {1, 8}), reshape(u.null_content(), {1, 8})}, 0).detach();
  CHECK(bit_equal(u.forward(explicit_null), v));

  Tensor content = random_tensor(rng, {3, 8});
  Tensor mixed = u.content_tokens(content, {false, true, false}, 3);
  CHECK(bit_equal(slice(mixed, 0, 1, 1), reshape(u.null_content(), {1, 8})));
  CHECK(bit_equal(slice(mixed, 0, 2, 1), slice(content, 0, 2, 1)));
  u.params().zero_grad();
  sum(mixed).backward();
  const Tensor g = u.null_content().grad();
  for (float v : g.data()) CHECK(v == 1.0f);
}

TEST_CASE("structure channels start switched off") {
  UNet u(toy_config(), 11);
  Rng rng(12);
  NoGradGuard ng;
  DenoiseInput in = random_input(rng, 1, 2);
  DenoiseInput other = in;
  other.structure = random_tensor(rng, {1, 2, 8, 4, 4});
  CHECK(bit_equal(u.forward(in), u.forward(other)));
}

TEST_CASE("unet errors") {
  UNet u(toy_config(), 13);
  Rng rng(14);
  DenoiseInput in = random_input(rng, 1, 2);
  DenoiseInput bad = in;
  bad.structure = random_tensor(rng, {1, 3, 8, 4, 4});
  CHECK_THROWS_AS(u.forward(bad), ContractError);
  bad = in;
  bad.structure = random_tensor(rng, {1, 2, 4, 4, 4});
  CHECK_THROWS_AS(u.forward(bad), ContractError);
  bad = in;
  bad.content = random_tensor(rng, {1, 6});
  CHECK_THROWS_AS(u.forward(bad), ContractError);
  bad = in;
  bad.t = {1, 2};
  CHECK_THROWS_AS(u.forward(bad), ContractError);
  CHECK_THROWS_AS(u.transformer_block("mid.attn", random_tensor(rng, {2, 16, 2, 2}), random_tensor(rng, {2, 1, 5}), 2, true),
                  ContractError);
  CHECK_THROWS_AS(u.residual_block("mid.res0", random_tensor(rng, {2, 8, 2, 2}), u.time_features({1, 1}), 2, true),
                  ContractError);

  UNetConfig c = toy_config();
  c.attention_resolutions = {3};
  CHECK_THROWS_AS(UNet{c}, ConfigError);
  c = toy_config();
  c.mults.clear();
  CHECK_THROWS_AS(UNet{c}, ConfigError);
}

TEST_CASE("unet checkpoint round trip") {
  UNet u(toy_config(), 15);
  perturb_all(u, 16);
  UNet back = UNet::from_state(u.state());
  CHECK(back.config().mults == u.config().mults);
  CHECK(back.config().attention_resolutions == u.config().attention_resolutions);
  Rng rng(17);
  NoGradGuard ng;
  DenoiseInput in = random_input(rng, 1, 3);
  CHECK(bit_equal(back.forward(in), u.forward(in)));

  auto st = u.state();
  st.erase("unet.null_content");
  CHECK_THROWS_AS(UNet::from_state(st), CheckpointError);
  st.erase("unet.meta");
  CHECK_THROWS_AS(UNet::from_state(st), CheckpointError);
}

TEST_CASE("gradient checks") {
  UNet u(toy_config(), 18);
  perturb_all(u, 19);
  Rng rng(20);

  SUBCASE("residual block") {
    Tensor temb = u.time_features({4, 900}).detach();
    auto r = grad_check(
        [&](const std::vector<Tensor>& v) { return u.residual_block("down1.res0", v[0], v[1], 3, true); },
        {random_tensor(rng, {6, 8, 2, 2}), temb}, 99, 1e-2);
    INFO("rel " << r.rel_error);
    CHECK(r.rel_error < 1e-3);
  }
  SUBCASE("transformer block") {
    auto r = grad_check(
        [&](const std::vector<Tensor>& v) { return u.transformer_block("down0.attn0", v[0], v[1], 3, true); },
        {random_tensor(rng, {6, 8, 4, 4}), random_tensor(rng, {6, 1, 8})}, 99, 1e-2);
    INFO("rel " << r.rel_error);
    CHECK(r.rel_error < 1e-3);
  }
  SUBCASE("full model, inputs and selected parameters") {
    DenoiseInput in = random_input(rng, 1, 2);
    std::vector<Tensor> leaves = {in.z_t, in.structure, in.content, u.params().get("mid.attn.tpos"),
                                  u.params().get("down0.res0.tconv1.weight"), u.params().get("null_content")};
    auto r = grad_check(
        [&](const std::vector<Tensor>& v) {
          DenoiseInput x = in;
          x.z_t = v[0];
          x.structure = v[1];
          x.content = v[2];
          return u.forward(x);
        },
        leaves, 99, 1e-2);
    INFO("rel " << r.rel_error);
    CHECK(r.rel_error < 1e-3);
  }
}
