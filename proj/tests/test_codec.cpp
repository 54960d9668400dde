#include "doctest.h"
#include "test_util.hpp"
#include "veil/codec.hpp"
#include "veil/datagen.hpp"
#include "veil/error.hpp"

using namespace veil;
using veil::testing::bit_equal;

namespace {

Tensor corpus_frames(int clips, int size, std::uint64_t seed) {
  CorpusSpec cs{clips, 4, size, size, 4, 1, 3, seed};
  std::vector<Tensor> parts;
  for (const auto& c : generate_corpus(cs)) parts.push_back(c.frames);
  return concat(parts, 0);
}

}  // namespace

TEST_CASE("codec shapes and frame independence") {
  Codec codec(CodecConfig{4, 4, 8}, 1);
  Rng rng(2);
  Tensor video = rng.normal_tensor({2, 8, 3, 64, 64});
  NoGradGuard ng;
  Tensor z = codec.encode(video);
  CHECK(z.shape() == Shape{2, 8, 4, 16, 16});
  CHECK(codec.decode(z).shape() == video.shape());

  Tensor frame = rng.normal_tensor({1, 1, 3, 16, 16});
  Tensor eight = concat(std::vector<Tensor>(8, frame), 1);
  Tensor z1 = codec.encode(frame), z8 = codec.encode(eight);
  const std::int64_t per = z1.numel();
  for (int f = 0; f < 8; ++f)
    for (std::int64_t i = 0; i < per; ++i) REQUIRE(z8[f * per + i] == z1[i]);
  Tensor x1 = codec.decode(z1), x8 = codec.decode(z8);
  for (int f = 0; f < 8; ++f)
    for (std::int64_t i = 0; i < x1.numel(); ++i) REQUIRE(x8[f * x1.numel() + i] == x1[i]);
  for (float v : x8.data()) REQUIRE((v >= -1.0f && v <= 1.0f));

  CHECK_THROWS_AS(codec.encode(rng.normal_tensor({1, 1, 3, 18, 16})), ConfigError);
  CHECK_THROWS_AS(codec.decode(rng.normal_tensor({1, 1, 3, 4, 4})), DimensionError);
  CHECK_THROWS_AS(Codec(CodecConfig{4, 3, 8}), ConfigError);
}

TEST_CASE("decoded pixels depend only on nearby latents") {
  Codec codec(CodecConfig{4, 4, 8}, 3);
  Rng rng(4);
  NoGradGuard ng;
  const Tensor z = rng.normal_tensor({1, 4, 8, 8});
  Tensor z2 = z.clone();
  for (std::int64_t c = 0; c < 4; ++c)
    for (std::int64_t y = 0; y < 8; ++y)
      for (std::int64_t x = 4; x < 8; ++x) z2[(c * 8 + y) * 8 + x] += 3.0f;
  const Tensor a = codec.decode_frames(z), b = codec.decode_frames(z2);
  // Receptive field of the decoder: two latent cells, two half-resolution
  // pixels and three output pixels, so only the first output column is out of reach.
  bool left_equal = true, right_differs = false;
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < 32; ++y) {
      left_equal = left_equal && a[(c * 32 + y) * 32] == b[(c * 32 + y) * 32];
      right_differs = right_differs || a[(c * 32 + y) * 32 + 31] != b[(c * 32 + y) * 32 + 31];
    }
  CHECK(left_equal);
  CHECK(right_differs);
}

TEST_CASE("codec training") {
  Tensor train = corpus_frames(12, 16, 3);
  Tensor held = corpus_frames(3, 16, 4);

  SUBCASE("zero steps leaves parameters alone") {
    Codec codec(CodecConfig{4, 4, 8}, 5);
    const auto before = codec.params().checksum();
    train_codec(codec, train, held, {0, 1e-3f, 4, 0, 0});
    CHECK(codec.params().checksum() == before);
  }
  SUBCASE("held-out loss drops") {
    Codec codec(CodecConfig{4, 4, 8}, 5);
    auto rep = train_codec(codec, train, held, {300, 2e-3f, 8, 0, 0});
    INFO("before " << rep.heldout_mse_before << " after " << rep.heldout_mse_after);
    CHECK(rep.heldout_mse_after < rep.heldout_mse_before);
    CHECK(codec.recon_mse == doctest::Approx(rep.heldout_mse_after));
    CHECK(reconstruction_mse(codec, held) == doctest::Approx(rep.heldout_mse_after));

    Codec back = Codec::from_state(codec.state());
    CHECK(back.latent_scale == codec.latent_scale);
    NoGradGuard ng;
    CHECK(bit_equal(back.encode_frames(held), codec.encode_frames(held)));
  }
  SUBCASE("constant colors reconstruct almost exactly") {
    // Colors uniform in [-0.8, 0.8] have variance 0.213; "almost exactly"
    // means under 1% of that on seen and 3% on unseen colors.
    Rng rng(6);
    Tensor flat(Shape{104, 3, 16, 16});
    for (int i = 0; i < 104; ++i)
      for (int c = 0; c < 3; ++c) {
        const float v = static_cast<float>(rng.uniform() * 1.6 - 0.8);
        for (int p = 0; p < 256; ++p) flat[(i * 3 + c) * 256 + p] = v;
      }
    Codec codec(CodecConfig{4, 4, 8}, 7);
    Tensor seen = slice(flat, 0, 0, 96).detach(), unseen = slice(flat, 0, 96, 8).detach();
    auto rep = train_codec(codec, seen, unseen, {1500, 3e-3f, 8, 0, 0});
    const double seen_mse = reconstruction_mse(codec, seen);
    INFO("seen " << seen_mse << " unseen " << rep.heldout_mse_after);
    CHECK(seen_mse < 2e-3);
    CHECK(rep.heldout_mse_after < 6e-3);
  }
  CHECK_THROWS_AS(train_codec(*std::make_unique<Codec>(), Tensor(), Tensor(), {}), DataError);
}

TEST_CASE("codec checkpoint validation") {
  Codec codec(CodecConfig{4, 2, 4}, 1);
  auto st = codec.state();
  st.erase("codec.dec.out.conv.weight");
  CHECK_THROWS_AS(Codec::from_state(st), CheckpointError);
  st.erase("codec.meta");
  CHECK_THROWS_AS(Codec::from_state(st), CheckpointError);
}
