#include <cmath>
#include <filesystem>
#include <numeric>

#include <unistd.h>

#include "doctest.h"
#include "test_util.hpp"
#include "veil/conditioning.hpp"
#include "veil/datagen.hpp"
#include "veil/error.hpp"
#include "veil/image_io.hpp"

using namespace veil;
using veil::testing::bit_equal;
using veil::testing::max_abs_diff;
using veil::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Frames {
  Tensor x;
  std::vector<int> labels;
};

// One frame per clip, taken from the middle of the clip.
Frames style_frames(int clips, int styles, std::uint64_t seed, int size = 16) {
  CorpusSpec cs{clips, 3, size, size, styles, 1, 3, seed};
  Frames f;
  std::vector<Tensor> parts;
  for (const auto& c : generate_corpus(cs)) {
    parts.push_back(slice(c.frames, 0, 1, 1));
    f.labels.push_back(c.style_id);
  }
  f.x = concat(parts, 0).detach();
  return f;
}

const ContentEncoder& trained_encoder() {
  static ContentEncoder enc = [] {
    ContentEncoder e(ContentConfig{32, 8, 0.07f}, 1);
    Frames f = style_frames(96, 4, 10);
    train_content_encoder(e, f.x, f.labels, {300, 3e-3f, 16, 2, 0});
    return e;
  }();
  return enc;
}

double cosine(const Tensor& a, const Tensor& b) {
  double d = 0, na = 0, nb = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    d += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return d / std::sqrt(na * nb);
}

double gradient_energy(const Tensor& m) {
  const std::int64_t h = m.dim(-2), w = m.dim(-1);
  double e = 0;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x + 1 < w; ++x) e += std::pow(m[y * w + x + 1] - m[y * w + x], 2);
  return e;
}

double total_variation(const Tensor& m) {
  const std::int64_t h = m.dim(-2), w = m.dim(-1);
  double tv = 0;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      if (x + 1 < w) tv += std::abs(m[y * w + x + 1] - m[y * w + x]);
      if (y + 1 < h) tv += std::abs(m[(y + 1) * w + x] - m[y * w + x]);
    }
  return tv;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("veil_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_gray16(const fs::path& p, int w, int h, const std::vector<std::uint16_t>& v) {
  write_png(p, Image{w, h, 1, 16, v});
}

}  // namespace

TEST_CASE("contrastive loss against a loop oracle") {
  Rng rng(1);
  Tensor e = l2_normalize(random_tensor(rng, {6, 5}));
  const std::vector<int> labels = {0, 1, 0, 2, 1, 0};
  const double tau = 0.5;
  double total = 0;
  int anchors = 0;
  for (int i = 0; i < 6; ++i) {
    double denom = 0;
    for (int a = 0; a < 6; ++a)
      if (a != i) denom += std::exp(cosine(slice(e, 0, i, 1), slice(e, 0, a, 1)) / tau);
    double s = 0;
    int pos = 0;
    for (int p = 0; p < 6; ++p)
      if (p != i && labels[p] == labels[i]) {
        s += std::log(std::exp(cosine(slice(e, 0, i, 1), slice(e, 0, p, 1)) / tau) / denom);
        ++pos;
      }
    if (pos == 0) continue;
    total += -s / pos;
    ++anchors;
  }
  CHECK(supervised_contrastive_loss(e, labels, tau).item() == doctest::Approx(total / anchors).epsilon(1e-5));

  auto r = veil::testing::grad_check(
      [&](const std::vector<Tensor>& v) { return supervised_contrastive_loss(l2_normalize(v[0]), labels, 0.5f); },
      {random_tensor(rng, {6, 5})});
  CHECK(r.rel_error < 1e-3);
  CHECK_THROWS_AS(supervised_contrastive_loss(e, {0, 1, 2, 3, 4, 5}, 0.1f), ContractError);
}

TEST_CASE("content encoder basics") {
  ContentEncoder enc(ContentConfig{16, 4, 0.07f}, 3);
  Rng rng(2);
  Tensor frames = random_tensor(rng, {3, 3, 16, 16});
  CHECK_THROWS_AS(enc.embed(frames), ContractError);
  Tensor e = enc.forward(frames);
  CHECK(e.shape() == Shape{3, 16});
  for (int i = 0; i < 3; ++i) {
    double n = 0;
    for (int j = 0; j < 16; ++j) n += e[i * 16 + j] * e[i * 16 + j];
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-5);
  }
  Tensor twice = concat({slice(frames, 0, 0, 1), slice(frames, 0, 0, 1)}, 0);
  Tensor et = enc.forward(twice);
  for (int j = 0; j < 16; ++j) CHECK(et[j] == et[16 + j]);

  Frames one = style_frames(4, 1, 3);
  CHECK_THROWS_AS(train_content_encoder(enc, one.x, one.labels, {}), ContractError);
  Frames two = style_frames(8, 2, 3);
  const auto before = enc.params().checksum();
  train_content_encoder(enc, two.x, two.labels, {0, 1e-3f, 8, 0, 0});
  CHECK(enc.params().checksum() == before);
}

TEST_CASE("contrastive training separates two styles") {
  // ember (dark red / yellow) against ocean (blue / white) is linearly separable by color.
  Frames train = style_frames(48, 2, 20), held = style_frames(32, 2, 21);
  ContentEncoder enc(ContentConfig{16, 4, 0.07f}, 4);
  auto rep = train_content_encoder(enc, train.x, train.labels, {120, 3e-3f, 16, 5, 0});
  CHECK(rep.loss_after < rep.loss_before);
  const double acc = style_retrieval_accuracy(enc, train.x, train.labels, held.x, held.labels);
  INFO("accuracy " << acc);
  CHECK(acc > 0.95);

  // Shuffled training labels carry no style information.
  std::vector<int> shuffled = train.labels;
  Rng rng(9);
  for (std::size_t i = shuffled.size() - 1; i > 0; --i)
    std::swap(shuffled[i], shuffled[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
  ContentEncoder null_enc(ContentConfig{16, 4, 0.07f}, 4);
  train_content_encoder(null_enc, train.x, shuffled, {120, 3e-3f, 16, 5, 0});
  const double null_acc = style_retrieval_accuracy(null_enc, train.x, shuffled, held.x, held.labels);
  INFO("shuffled accuracy " << null_acc);
  // Chance is 0.5; three binomial standard errors over 32 frames is 0.265.
  CHECK(std::abs(null_acc - 0.5) < 0.265);
}

TEST_CASE("embeddings track style rather than layout") {
  const ContentEncoder& enc = trained_encoder();
  Rng rng(30);
  int wins = 0, total = 0;
  for (int i = 0; i < 40; ++i) {
    const int s1 = static_cast<int>(rng.uniform_int(0, 3));
    const int s2 = (s1 + 1 + static_cast<int>(rng.uniform_int(0, 2))) % 4;
    Rng ra = rng.substream(static_cast<std::uint64_t>(2 * i)), rb = rng.substream(static_cast<std::uint64_t>(2 * i + 1));
    SceneSpec a = random_scene(ra, s1, 1, 16, 16), b = random_scene(rb, s1, 1, 16, 16);
    SceneSpec a_other = a;
    a_other.style_id = s2;
    NoGradGuard ng;
    Tensor e = enc.embed(concat({generate_clip(a).frames, generate_clip(b).frames, generate_clip(a_other).frames}, 0));
    const double same_style = cosine(slice(e, 0, 0, 1), slice(e, 0, 1, 1));
    const double same_layout = cosine(slice(e, 0, 0, 1), slice(e, 0, 2, 1));
    wins += same_style > same_layout;
    ++total;
  }
  INFO("wins " << wins << " of " << total);
  CHECK(wins >= 0.9 * total);
}

TEST_CASE("style prototypes") {
  ContentEncoder enc = trained_encoder();
  Frames held = style_frames(32, 4, 40);
  const auto& names = style_table();
  for (int s = 0; s < 4; ++s) {
    std::vector<Tensor> parts;
    for (std::size_t i = 0; i < held.labels.size(); ++i)
      if (held.labels[i] == s) parts.push_back(slice(held.x, 0, static_cast<std::int64_t>(i), 1));
    enc.set_prototype(names[static_cast<std::size_t>(s)].name, concat(parts, 0));
  }
  CHECK(max_abs_diff(enc.prototype("ember"), enc.prototype("ocean")) > 0.0f);
  try {
    enc.prototype("mauve");
    FAIL("expected lookup failure");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("ember") != std::string::npos);
  }

  Frames probe = style_frames(40, 4, 41);
  NoGradGuard ng;
  Tensor emb = enc.embed(probe.x);
  int correct = 0;
  for (std::size_t i = 0; i < probe.labels.size(); ++i) {
    int best = -1;
    double best_s = -2;
    for (int s = 0; s < 4; ++s) {
      const double c = cosine(slice(emb, 0, static_cast<std::int64_t>(i), 1), enc.prototype(names[static_cast<std::size_t>(s)].name));
      if (c > best_s) best_s = c, best = s;
    }
    correct += best == probe.labels[i];
  }
  CHECK(correct > static_cast<int>(probe.labels.size()) / 2);

  Tensor single = slice(probe.x, 0, 0, 1);
  enc.set_prototype("single", single);
  CHECK(max_abs_diff(enc.prototype("single"), reshape(enc.embed(single), {enc.config().dim})) < 1e-6f);

  ContentEncoder back = ContentEncoder::from_state(enc.state());
  CHECK(back.trained());
  CHECK(back.prototype_names() == enc.prototype_names());
  CHECK(bit_equal(back.prototype("ocean"), enc.prototype("ocean")));
  CHECK(bit_equal(back.embed(single), enc.embed(single)));
}

TEST_CASE("blur chain") {
  Rng rng(50);
  Tensor d = random_tensor(rng, {2, 1, 32, 32});
  CHECK(bit_equal(blur_chain(d, 0), d));
  Tensor flat(Shape{1, 1, 32, 32}, 0.37f);
  for (int t = 0; t <= 7; ++t) CHECK(max_abs_diff(blur_chain(flat, t), flat) < 1e-6f);
  CHECK_THROWS_AS(blur_chain(d, 8), ConfigError);
  CHECK_THROWS_AS(blur_chain(d, -1), ConfigError);

  // A 256 map keeps at least 2x2 samples after seven halvings. Total
  // variation of a monotone edge is fixed, so sharpness is squared gradient.
  Tensor edge(Shape{1, 1, 256, 256});
  for (int y = 0; y < 256; ++y)
    for (int x = 100; x < 256; ++x) edge[y * 256 + x] = 1.0f;
  double prev = gradient_energy(edge);
  for (int t = 1; t <= 7; ++t) {
    const double tv = gradient_energy(blur_chain(edge, t));
    INFO("t_s=" << t << " tv=" << tv << " prev=" << prev);
    CHECK(tv < prev);
    prev = tv;
  }
  for (int k = 0; k < 5; ++k) {
    Tensor m = random_tensor(rng, {1, 1, 32, 32});
    double p = total_variation(m);
    for (int t = 1; t <= 7; ++t) {
      const double tv = total_variation(blur_chain(m, t));
      CHECK(tv <= p + 1e-4);
      p = tv;
    }
  }
  Tensor video = random_tensor(rng, {2, 3, 1, 16, 16});
  CHECK(blur_chain(video, 2).shape() == video.shape());
}

TEST_CASE("structure signal") {
  Codec codec(CodecConfig{4, 4, 8}, 3);
  CorpusSpec cs{2, 3, 16, 16, 2, 2, 3, 60};
  auto clips = generate_corpus(cs);
  Tensor depth = reshape(concat({*clips[0].depth, *clips[1].depth}, 0), {2, 3, 1, 16, 16});
  auto a = make_structure_signal(depth, 0, codec), b = make_structure_signal(depth, 0, codec);
  CHECK(a.latent.shape() == Shape{2, 3, 4, 4, 4});
  CHECK(bit_equal(a.latent, b.latent));
  CHECK(a.ts_channels.shape() == Shape{2, 3, 4, 4, 4});
  const float expect0[] = {0, 1, 0, 1};
  for (std::int64_t i = 0; i < a.ts_channels.numel(); ++i) CHECK(a.ts_channels[i] == expect0[(i / 16) % 4]);
  CHECK(a.combined().shape() == Shape{2, 3, 8, 4, 4});

  auto c = make_structure_signal(depth, std::vector<int>{7, 3}, codec);
  double diff = 0, norm = 0;
  for (std::int64_t i = 0; i < 3 * 64; ++i) {
    diff += std::pow(c.latent[i] - a.latent[i], 2);
    norm += std::pow(a.latent[i], 2);
  }
  CHECK(std::sqrt(diff / norm) > 0.0);
  const auto e3 = ts_embedding(3);
  CHECK(c.ts_channels[3 * 64 + 16] == doctest::Approx(std::cos(3.0)));
  CHECK(e3[2] == doctest::Approx(std::sin(0.75)));

  CHECK_THROWS_AS(make_structure_signal(Tensor(Shape{1, 1, 1, 18, 16}), 0, codec), DimensionError);
  CHECK_THROWS_AS(make_structure_signal(depth, std::vector<int>{1}, codec), DimensionError);
}

TEST_CASE("depth ingestion") {
  TempDir tmp("depth");
  SUBCASE("constant clip maps to one half") {
    for (int f = 0; f < 3; ++f) write_gray16(tmp.path / ("depth_0000" + std::to_string(f) + ".png"), 4, 4, std::vector<std::uint16_t>(16, 777));
    Tensor d = ingest_depth(tmp.path);
    CHECK(d.shape() == Shape{3, 1, 4, 4});
    for (float v : d.data()) CHECK(v == 0.5f);
  }
  SUBCASE("min-max over the clip") {
    std::vector<std::uint16_t> a(16, 0), b(16, 65535);
    a[3] = 65535;
    write_gray16(tmp.path / "depth_00000.png", 4, 4, a);
    write_gray16(tmp.path / "depth_00001.png", 4, 4, b);
    Tensor d = ingest_depth(tmp.path);
    CHECK(d[0] == 0.0f);
    CHECK(d[3] == 1.0f);
    CHECK(d[16] == 1.0f);
  }
  SUBCASE("exporter round trip") {
    CorpusSpec cs{1, 4, 16, 16, 1, 2, 3, 70};
    auto clip = generate_corpus(cs)[0];
    export_clip(clip, tmp.path / "clip");
    Tensor raw = read_depth_samples(tmp.path / "clip");
    for (std::int64_t i = 0; i < raw.numel(); ++i)
      REQUIRE(std::lround(raw[i] * 65535.0) == std::lround(static_cast<double>((*clip.depth)[i]) * 65535.0));
  }
  SUBCASE("errors name the file") {
    write_gray16(tmp.path / "depth_00000.png", 4, 4, std::vector<std::uint16_t>(16, 1));
    write_gray16(tmp.path / "depth_00002.png", 4, 4, std::vector<std::uint16_t>(16, 2));
    try {
      ingest_depth(tmp.path);
      FAIL("expected missing frame");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("depth_00001.png") != std::string::npos);
    }
    write_gray16(tmp.path / "depth_00001.png", 4, 2, std::vector<std::uint16_t>(8, 2));
    CHECK_THROWS_AS(ingest_depth(tmp.path), DataError);
    write_png(tmp.path / "depth_00001.png", Image{4, 4, 3, 8, std::vector<std::uint16_t>(48, 9)});
    try {
      ingest_depth(tmp.path);
      FAIL("expected grayscale failure");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("depth_00001.png") != std::string::npos);
    }
  }
}
