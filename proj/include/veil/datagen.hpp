#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "veil/rng.hpp"
#include "veil/tensor.hpp"

namespace veil {

using Rgb8 = std::array<std::uint8_t, 3>;

enum class Texture { flat, stripes, checker, dots };

/// Palette plus background texture. Shapes at z-order k use fg[k].
struct Style {
  std::string name;
  Rgb8 bg_a, bg_b;
  std::array<Rgb8, 3> fg;
  Texture texture = Texture::flat;
};

/// Corpus styles followed by the held-out styles reserved for customization.
const std::vector<Style>& style_table();
inline constexpr int kCorpusStyles = 8;
int style_index(const std::string& name);

enum class ShapeKind { rect, circle, triangle };

/// Position is the shape center at frame 0 in pixels; it moves by (vx, vy)
/// per frame. `extent` is the half-width of the bounding box.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::rect;
  float cx = 0, cy = 0;
  float extent = 4;
  float vx = 0, vy = 0;
  int z = 0;  // 0..2, larger is nearer

  float x_at(int frame) const { return cx + vx * static_cast<float>(frame); }
  float y_at(int frame) const { return cy + vy * static_cast<float>(frame); }
  bool covers(float px, float py, int frame) const;
};

struct SceneSpec {
  std::vector<ShapeSpec> shapes;
  int style_id = 0;
  int frames = 8;
  int height = 32;
  int width = 32;
  std::uint64_t seed = 0;
};

/// Frames in [-1, 1] as [n, 3, H, W]; depth in [0, 1] as [n, 1, H, W].
struct ClipRecord {
  std::string id;
  Tensor frames;
  std::optional<Tensor> depth;
  int style_id = 0;
  std::string style_name;
  SceneSpec scene;

  int length() const { return static_cast<int>(frames.dim(0)); }
};

/// Depth value of a shape at z-order z; background depth is 0.
float shape_depth(int z);

/// Throws ConfigError if a shape leaves the frame or z-orders repeat.
void validate_scene(const SceneSpec& spec);
SceneSpec random_scene(Rng& rng, int style_id, int frames, int height, int width, int min_shapes = 1,
                       int max_shapes = 3);
ClipRecord generate_clip(const SceneSpec& spec);

struct CorpusSpec {
  int clips = 512;
  int frames = 32;
  int height = 64;
  int width = 64;
  int styles = kCorpusStyles;
  int min_shapes = 1;
  int max_shapes = 3;
  std::uint64_t seed = 0;
};

/// Clip i gets style i mod styles and a scene drawn from substream i.
std::vector<ClipRecord> generate_corpus(const CorpusSpec& spec);

/// Per-pixel displacement (dx, dy) of frame k relative to frame k - 1 taken
/// from the topmost shape at each pixel of frame k; [2, H, W].
Tensor ground_truth_flow(const SceneSpec& spec, int frame);

/// Foreground mask from depth: 1 where depth > 0.
Tensor silhouette_from_depth(const Tensor& depth);
/// Foreground mask of a rendered frame [3, H, W] by nearest palette color.
Tensor silhouette_from_frame(const Tensor& frame, const Style& style);
double silhouette_iou(const Tensor& a, const Tensor& b);

float unit_from_u8(std::uint16_t v);
std::uint16_t u8_from_unit(float x);

struct BatchConfig {
  int batch_size = 4;
  double image_prob = 0.125;
  int n_frames = 8;
  int stride = 4;
};

/// Image batches hold batch_size * n_frames single-frame samples so that both
/// batch kinds cost about the same.
struct Batch {
  Tensor frames;  // [b, n, 3, H, W]
  Tensor depth;   // [b, n, 1, H, W]
  std::vector<int> style_ids;
  std::vector<std::size_t> clips;
  std::vector<int> starts;
  bool image = false;
};

std::vector<int> clip_frame_indices(int start, int n_frames, int stride);
Batch make_batch(const std::vector<ClipRecord>& corpus, const BatchConfig& cfg, Rng& rng);
/// Batch assembled from explicit (clip, start) picks.
Batch assemble_batch(const std::vector<ClipRecord>& corpus, const std::vector<std::size_t>& clips,
                     const std::vector<int>& starts, int n_frames, int stride);

void export_clip(const ClipRecord& clip, const std::filesystem::path& dir);
ClipRecord import_clip(const std::filesystem::path& dir);
void export_corpus(const std::vector<ClipRecord>& corpus, const std::filesystem::path& dir);
std::vector<ClipRecord> import_corpus(const std::filesystem::path& dir);

/// Reads `frame_%05d.png` files of a directory as [n, 3, H, W] in [-1, 1].
Tensor read_frames(const std::filesystem::path& dir);
void write_frames(const Tensor& frames, const std::filesystem::path& dir);

}  // namespace veil
