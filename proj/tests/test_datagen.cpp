#include <cmath>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "doctest.h"
#include "test_util.hpp"
#include "veil/datagen.hpp"
#include "veil/error.hpp"
#include "veil/image_io.hpp"

using namespace veil;
using veil::testing::max_abs_diff;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("veil_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SceneSpec two_rects() {
  SceneSpec s;
  s.width = s.height = 24;
  s.frames = 3;
  s.style_id = 1;
  s.shapes.push_back({ShapeKind::rect, 8, 8, 5, 1, 0, 0});
  s.shapes.push_back({ShapeKind::rect, 12, 11, 5, 0, 1, 2});
  return s;
}

}  // namespace

TEST_CASE("png round trips") {
  TempDir tmp("png");
  Image rgb{5, 3, 3, 8, {}};
  for (int i = 0; i < 45; ++i) rgb.samples.push_back(static_cast<std::uint16_t>((i * 37) % 256));
  write_png(tmp.path / "a.png", rgb);
  Image back = read_png(tmp.path / "a.png");
  CHECK(back.width == 5);
  CHECK(back.height == 3);
  CHECK(back.channels == 3);
  CHECK(back.bit_depth == 8);
  CHECK(back.samples == rgb.samples);

  Image gray{4, 4, 1, 16, {}};
  for (int i = 0; i < 16; ++i) gray.samples.push_back(static_cast<std::uint16_t>(i * 4369));
  write_png(tmp.path / "d.png", gray);
  Image g2 = read_png(tmp.path / "d.png");
  CHECK(g2.bit_depth == 16);
  CHECK(g2.samples == gray.samples);

  Tensor t = image_to_tensor(g2);
  CHECK(t.shape() == Shape{1, 4, 4});
  CHECK(t[15] == 1.0f);
  CHECK(tensor_to_image(t, 16).samples == gray.samples);

  std::ofstream(tmp.path / "bad.png") << "not an image";
  CHECK_THROWS_AS(read_png(tmp.path / "bad.png"), DataError);
  CHECK_THROWS_AS(read_png(tmp.path / "missing.png"), DataError);
  // Truncated stream: valid signature, broken body.
  {
    std::ifstream in(tmp.path / "a.png", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream(tmp.path / "trunc.png", std::ios::binary) << bytes.substr(0, 40);
  }
  CHECK_THROWS_AS(read_png(tmp.path / "trunc.png"), DataError);
}

TEST_CASE("clip generation") {
  SUBCASE("zero velocity gives a still clip") {
    SceneSpec s = two_rects();
    for (auto& sh : s.shapes) sh.vx = sh.vy = 0;
    auto clip = generate_clip(s);
    const std::int64_t per = clip.frames.numel() / 3;
    for (std::int64_t i = 0; i < per; ++i) {
      CHECK(clip.frames[i] == clip.frames[per + i]);
      CHECK(clip.frames[i] == clip.frames[2 * per + i]);
    }
  }
  SUBCASE("determinism") {
    CorpusSpec cs{3, 6, 16, 16, 3, 1, 3, 99};
    auto a = generate_corpus(cs), b = generate_corpus(cs);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(veil::testing::bit_equal(a[i].frames, b[i].frames));
      CHECK(veil::testing::bit_equal(*a[i].depth, *b[i].depth));
      CHECK(a[i].style_id == static_cast<int>(i % 3));
    }
  }
  SUBCASE("occlusion follows z-order") {
    SceneSpec s = two_rects();
    auto clip = generate_clip(s);
    const Style& st = style_table()[1];
    const std::int64_t plane = 24 * 24;
    int overlap = 0;
    for (int f = 0; f < s.frames; ++f)
      for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) {
          const bool a = s.shapes[0].covers(x + 0.5f, y + 0.5f, f), b = s.shapes[1].covers(x + 0.5f, y + 0.5f, f);
          if (!(a && b)) continue;
          ++overlap;
          for (int k = 0; k < 3; ++k)
            CHECK(clip.frames[(f * 3 + k) * plane + y * 24 + x] == unit_from_u8(st.fg[2][static_cast<std::size_t>(k)]));
          CHECK((*clip.depth)[f * plane + y * 24 + x] == shape_depth(2));
        }
    CHECK(overlap > 0);
  }
  SUBCASE("invalid scenes") {
    SceneSpec s = two_rects();
    s.shapes[1].z = 0;
    CHECK_THROWS_AS(generate_clip(s), ConfigError);
    s = two_rects();
    s.shapes[0].vx = 10;
    CHECK_THROWS_AS(generate_clip(s), ConfigError);
  }
}

TEST_CASE("silhouettes agree with geometry") {
  CorpusSpec cs{10, 4, 32, 32, 8, 1, 3, 5};
  cs.styles = static_cast<int>(style_table().size());
  for (const auto& clip : generate_corpus(cs)) {
    const std::int64_t plane = 32 * 32;
    Tensor from_depth = silhouette_from_depth(*clip.depth);
    const Style& st = style_table()[static_cast<std::size_t>(clip.style_id)];
    for (int f = 0; f < 4; ++f) {
      Tensor frame = slice(clip.frames, 0, f, 1).detach();
      frame = reshape(frame, {3, 32, 32});
      Tensor from_frame = silhouette_from_frame(frame, st);
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          bool covered = false;
          for (const auto& s : clip.scene.shapes) covered = covered || s.covers(x + 0.5f, y + 0.5f, f);
          const std::int64_t p = y * 32 + x;
          REQUIRE(from_depth[f * plane + p] == (covered ? 1.0f : 0.0f));
          REQUIRE(from_frame[p] == from_depth[f * plane + p]);
        }
    }
  }
  Tensor a(Shape{4}, 0.0f), b(Shape{4}, 0.0f);
  a[0] = a[1] = 1;
  b[1] = b[2] = 1;
  CHECK(silhouette_iou(a, b) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("ground truth flow") {
  SceneSpec s = two_rects();
  Tensor flow = ground_truth_flow(s, 1);
  const std::int64_t plane = 24 * 24;
  // Pixel inside shape 0 only, inside shape 1 (on top), and background.
  CHECK(flow[5 * 24 + 5] == 1.0f);
  CHECK(flow[plane + 5 * 24 + 5] == 0.0f);
  CHECK(flow[plane + 13 * 24 + 13] == 1.0f);
  CHECK(flow[23 * 24 + 0] == 0.0f);
  CHECK(max_abs_diff(ground_truth_flow(s, 0), Tensor(Shape{2, 24, 24})) == 0.0f);
}

TEST_CASE("batch assembly") {
  CorpusSpec cs{6, 32, 8, 8, 2, 1, 2, 3};
  auto corpus = generate_corpus(cs);
  Rng rng(7);
  SUBCASE("image batches only") {
    for (int i = 0; i < 20; ++i) {
      auto b = make_batch(corpus, {2, 1.0, 8, 4}, rng);
      CHECK(b.image);
      CHECK(b.frames.shape() == Shape{16, 1, 3, 8, 8});
      CHECK(b.depth.shape() == Shape{16, 1, 1, 8, 8});
    }
  }
  SUBCASE("image fraction") {
    constexpr int kDraws = 10000;
    int images = 0;
    for (int i = 0; i < kDraws; ++i) images += make_batch(corpus, {1, 0.125, 2, 1}, rng).image;
    const double p = 0.125, sd = std::sqrt(p * (1 - p) / kDraws);
    CHECK(std::abs(static_cast<double>(images) / kDraws - p) < 3 * sd);
  }
  SUBCASE("stride sampling") {
    CHECK(clip_frame_indices(3, 8, 4) == std::vector<int>{3, 7, 11, 15, 19, 23, 27, 31});
    for (int i = 0; i < 50; ++i) {
      auto b = make_batch(corpus, {3, 0.0, 8, 4}, rng);
      CHECK(b.frames.shape() == Shape{3, 8, 3, 8, 8});
      for (std::size_t k = 0; k < b.clips.size(); ++k) {
        CHECK(b.starts[k] >= 0);
        CHECK(b.starts[k] <= 4);
        // The last sampled frame matches the source clip.
        const auto& clip = corpus[b.clips[k]];
        const std::int64_t per = 3 * 64;
        const std::int64_t src = (b.starts[k] + 28) * per, dst = (static_cast<std::int64_t>(k) * 8 + 7) * per;
        for (std::int64_t q = 0; q < per; ++q) REQUIRE(b.frames[dst + q] == clip.frames[src + q]);
      }
    }
  }
  SUBCASE("clips too short") {
    CHECK_THROWS_AS(make_batch(corpus, {1, 0.0, 8, 5}, rng), DataError);
    CHECK_THROWS_AS(make_batch({}, {}, rng), DataError);
  }
}

TEST_CASE("export and import") {
  TempDir tmp("clip");
  CorpusSpec cs{2, 5, 12, 16, 2, 1, 3, 11};
  auto corpus = generate_corpus(cs);
  export_corpus(corpus, tmp.path / "corpus");
  auto back = import_corpus(tmp.path / "corpus");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].id == corpus[i].id);
    CHECK(back[i].style_name == corpus[i].style_name);
    CHECK(veil::testing::bit_equal(back[i].frames, corpus[i].frames));
    REQUIRE(back[i].depth.has_value());
    CHECK(max_abs_diff(*back[i].depth, *corpus[i].depth) <= 1.0f / 65535.0f);
    CHECK(back[i].scene.shapes.size() == corpus[i].scene.shapes.size());
  }

  const fs::path clip0 = tmp.path / "corpus" / corpus[0].id;
  for (int f = 0; f < 5; ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "depth_%05d.png", f);
    fs::remove(clip0 / name);
  }
  CHECK_FALSE(import_clip(clip0).depth.has_value());

  fs::remove(clip0 / "frame_00003.png");
  CHECK_THROWS_AS(import_clip(clip0), DataError);
  std::ofstream(tmp.path / "corpus" / corpus[1].id / "clip.json") << "{\"id\": 3";
  CHECK_THROWS_AS(import_clip(tmp.path / "corpus" / corpus[1].id), DataError);
}
