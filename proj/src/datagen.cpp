#include "veil/datagen.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "veil/error.hpp"
#include "veil/image_io.hpp"

namespace veil {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::vector<Style>& style_table() {
  static const std::vector<Style> table = {
      {"ember", {40, 10, 10}, {90, 20, 20}, {{{255, 200, 40}, {255, 140, 0}, {255, 240, 150}}}, Texture::stripes},
      {"ocean", {10, 30, 90}, {20, 60, 140}, {{{230, 250, 255}, {120, 230, 240}, {0, 200, 180}}}, Texture::checker},
      {"forest", {20, 80, 30}, {40, 120, 50}, {{{255, 150, 50}, {250, 90, 60}, {240, 220, 120}}}, Texture::dots},
      {"desert", {220, 190, 130}, {200, 160, 100}, {{{90, 50, 20}, {60, 30, 60}, {30, 30, 30}}}, Texture::stripes},
      {"neon", {10, 10, 10}, {60, 0, 80}, {{{255, 0, 200}, {0, 255, 120}, {255, 255, 0}}}, Texture::dots},
      {"pastel", {250, 210, 220}, {250, 230, 200}, {{{0, 130, 130}, {80, 80, 200}, {30, 100, 60}}}, Texture::checker},
      {"slate", {110, 110, 120}, {150, 150, 160}, {{{220, 30, 30}, {30, 30, 220}, {240, 240, 240}}}, Texture::flat},
      {"violet", {70, 20, 110}, {110, 50, 150}, {{{180, 255, 60}, {255, 255, 255}, {255, 120, 180}}}, Texture::stripes},
      // Held out of the corpus.
      {"aurora", {0, 60, 60}, {0, 110, 90}, {{{255, 110, 200}, {255, 200, 230}, {200, 80, 255}}}, Texture::checker},
      {"copper", {50, 35, 20}, {95, 60, 30}, {{{120, 220, 255}, {200, 255, 230}, {255, 255, 255}}}, Texture::dots},
  };
  return table;
}

int style_index(const std::string& name) {
  const auto& t = style_table();
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t[i].name == name) return static_cast<int>(i);
  std::string known;
  for (const auto& s : t) known += (known.empty() ? "" : ", ") + s.name;
  throw ConfigError("unknown style '" + name + "' (known: " + known + ")");
}

float unit_from_u8(std::uint16_t v) { return static_cast<float>(v) * (2.0f / 255.0f) - 1.0f; }

std::uint16_t u8_from_unit(float x) {
  const double c = std::clamp(static_cast<double>(x), -1.0, 1.0);
  return static_cast<std::uint16_t>(std::lround((c + 1.0) * 127.5));
}

float shape_depth(int z) { return 0.25f * static_cast<float>(z + 1); }

bool ShapeSpec::covers(float px, float py, int frame) const {
  const float dx = px - x_at(frame), dy = py - y_at(frame);
  switch (kind) {
    case ShapeKind::rect:
      return std::abs(dx) <= extent && std::abs(dy) <= extent;
    case ShapeKind::circle:
      return dx * dx + dy * dy <= extent * extent;
    case ShapeKind::triangle: {
      // Apex up, base along the bottom edge of the bounding box.
      if (dy < -extent || dy > extent) return false;
      return std::abs(dx) <= 0.5f * (dy + extent);
    }
  }
  return false;
}

void validate_scene(const SceneSpec& spec) {
  if (spec.frames < 1 || spec.height < 1 || spec.width < 1) throw ConfigError("scene needs positive frames and size");
  if (spec.style_id < 0 || spec.style_id >= static_cast<int>(style_table().size()))
    throw ConfigError("style id " + std::to_string(spec.style_id) + " out of range");
  std::array<bool, 3> seen{};
  for (const auto& s : spec.shapes) {
    if (s.z < 0 || s.z > 2) throw ConfigError("shape z-order must be in [0, 2]");
    if (seen[static_cast<std::size_t>(s.z)]) throw ConfigError("duplicate shape z-order " + std::to_string(s.z));
    seen[static_cast<std::size_t>(s.z)] = true;
    if (!(s.extent >= 1.0f)) throw ConfigError("shape extent must be >= 1 pixel");
    for (int f : {0, spec.frames - 1}) {
      const float x = s.x_at(f), y = s.y_at(f);
      if (x - s.extent < 0 || y - s.extent < 0 || x + s.extent > spec.width || y + s.extent > spec.height)
        throw ConfigError("shape leaves the frame by frame " + std::to_string(f));
    }
  }
}

SceneSpec random_scene(Rng& rng, int style_id, int frames, int height, int width, int min_shapes, int max_shapes) {
  if (min_shapes < 0 || max_shapes > 3 || min_shapes > max_shapes) throw ConfigError("shape count range must lie in [0, 3]");
  SceneSpec spec;
  spec.style_id = style_id;
  spec.frames = frames;
  spec.height = height;
  spec.width = width;
  spec.seed = rng.key();
  const int count = static_cast<int>(rng.uniform_int(min_shapes, max_shapes));
  std::array<int, 3> z = {0, 1, 2};
  for (int i = 2; i > 0; --i) std::swap(z[static_cast<std::size_t>(i)], z[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  const float side = static_cast<float>(std::min(height, width));
  for (int i = 0; i < count; ++i) {
    ShapeSpec s;
    s.kind = static_cast<ShapeKind>(rng.uniform_int(0, 2));
    s.extent = std::max(1.0f, side * static_cast<float>(0.12 + 0.10 * rng.uniform()));
    s.z = z[static_cast<std::size_t>(i)];
    auto pick = [&](float lo, float hi) { return lo + (hi - lo) * static_cast<float>(rng.uniform()); };
    const float x0 = pick(s.extent, width - s.extent), y0 = pick(s.extent, height - s.extent);
    const float reach = 0.5f * side;
    const float x1 = std::clamp(pick(x0 - reach, x0 + reach), s.extent, width - s.extent);
    const float y1 = std::clamp(pick(y0 - reach, y0 + reach), s.extent, height - s.extent);
    s.cx = x0;
    s.cy = y0;
    if (frames > 1) {
      s.vx = (x1 - x0) / static_cast<float>(frames - 1);
      s.vy = (y1 - y0) / static_cast<float>(frames - 1);
    }
    spec.shapes.push_back(s);
  }
  // Float rounding in the velocity can nudge the last frame past the border.
  for (auto& s : spec.shapes) {
    const int last = frames - 1;
    if (s.x_at(last) + s.extent > width || s.x_at(last) - s.extent < 0) s.vx = 0;
    if (s.y_at(last) + s.extent > height || s.y_at(last) - s.extent < 0) s.vy = 0;
  }
  validate_scene(spec);
  return spec;
}

namespace {

bool texture_b(const Style& st, int x, int y, int width) {
  const int period = std::max(4, width / 8);
  const int half = period / 2;
  switch (st.texture) {
    case Texture::flat:
      return false;
    case Texture::stripes:
      return (x / half) % 2 == 1;
    case Texture::checker:
      return ((x / half) + (y / half)) % 2 == 1;
    case Texture::dots: {
      const float cx = (x % period) + 0.5f - period / 2.0f, cy = (y % period) + 0.5f - period / 2.0f;
      return cx * cx + cy * cy < (period / 4.0f) * (period / 4.0f);
    }
  }
  return false;
}

// Index into scene.shapes of the topmost shape at a pixel, or -1.
int top_shape(const SceneSpec& spec, int x, int y, int frame) {
  int best = -1, best_z = -1;
  const float px = x + 0.5f, py = y + 0.5f;
  for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
    const auto& s = spec.shapes[i];
    if (s.z > best_z && s.covers(px, py, frame)) {
      best = static_cast<int>(i);
      best_z = s.z;
    }
  }
  return best;
}

}  // namespace

ClipRecord generate_clip(const SceneSpec& spec) {
  validate_scene(spec);
  const Style& st = style_table()[static_cast<std::size_t>(spec.style_id)];
  const std::int64_t n = spec.frames, h = spec.height, w = spec.width, plane = h * w;
  Tensor frames(Shape{n, 3, h, w});
  Tensor depth(Shape{n, 1, h, w});
  for (int f = 0; f < spec.frames; ++f) {
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        const int top = top_shape(spec, x, y, f);
        Rgb8 c;
        float d = 0.0f;
        if (top >= 0) {
          const auto& s = spec.shapes[static_cast<std::size_t>(top)];
          c = st.fg[static_cast<std::size_t>(s.z)];
          d = shape_depth(s.z);
        } else {
          c = texture_b(st, x, y, spec.width) ? st.bg_b : st.bg_a;
        }
        const std::int64_t p = y * w + x;
        for (int k = 0; k < 3; ++k) frames[(f * 3 + k) * plane + p] = unit_from_u8(c[static_cast<std::size_t>(k)]);
        depth[f * plane + p] = d;
      }
  }
  ClipRecord rec;
  rec.frames = frames;
  rec.depth = depth;
  rec.style_id = spec.style_id;
  rec.style_name = st.name;
  rec.scene = spec;
  return rec;
}

std::vector<ClipRecord> generate_corpus(const CorpusSpec& spec) {
  if (spec.clips < 1) throw ConfigError("corpus needs at least one clip");
  if (spec.styles < 1 || spec.styles > static_cast<int>(style_table().size()))
    throw ConfigError("corpus style count out of range");
  Rng root(spec.seed);
  std::vector<ClipRecord> out;
  out.reserve(static_cast<std::size_t>(spec.clips));
  for (int i = 0; i < spec.clips; ++i) {
    Rng rng = root.substream(static_cast<std::uint64_t>(i));
    auto scene = random_scene(rng, i % spec.styles, spec.frames, spec.height, spec.width, spec.min_shapes, spec.max_shapes);
    auto rec = generate_clip(scene);
    char id[32];
    std::snprintf(id, sizeof(id), "clip_%05d", i);
    rec.id = id;
    out.push_back(std::move(rec));
  }
  return out;
}

Tensor ground_truth_flow(const SceneSpec& spec, int frame) {
  if (frame < 0 || frame >= spec.frames) throw ContractError("flow frame out of range");
  const std::int64_t plane = static_cast<std::int64_t>(spec.height) * spec.width;
  Tensor flow(Shape{2, spec.height, spec.width});
  if (frame == 0) return flow;
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      const int top = top_shape(spec, x, y, frame);
      if (top < 0) continue;
      const auto& s = spec.shapes[static_cast<std::size_t>(top)];
      flow[y * spec.width + x] = s.vx;
      flow[plane + y * spec.width + x] = s.vy;
    }
  return flow;
}

Tensor silhouette_from_depth(const Tensor& depth) {
  Tensor m(depth.shape());
  for (std::int64_t i = 0; i < depth.numel(); ++i) m[i] = depth[i] > 0.0f ? 1.0f : 0.0f;
  return m;
}

Tensor silhouette_from_frame(const Tensor& frame, const Style& style) {
  if (frame.shape().size() != 3 || frame.dim(0) != 3) throw DimensionError("silhouette_from_frame expects [3, H, W]");
  const std::int64_t h = frame.dim(1), w = frame.dim(2), plane = h * w;
  std::vector<std::pair<Rgb8, bool>> palette = {{style.bg_a, false}};
  if (style.texture != Texture::flat) palette.push_back({style.bg_b, false});
  for (const auto& c : style.fg) palette.push_back({c, true});
  Tensor m(Shape{1, h, w});
  for (std::int64_t p = 0; p < plane; ++p) {
    double best = 1e30;
    bool fg = false;
    for (const auto& [c, is_fg] : palette) {
      double d = 0;
      for (int k = 0; k < 3; ++k) {
        const double diff = frame[k * plane + p] - unit_from_u8(c[static_cast<std::size_t>(k)]);
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        fg = is_fg;
      }
    }
    m[p] = fg ? 1.0f : 0.0f;
  }
  return m;
}

double silhouette_iou(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw DimensionError("silhouette_iou size mismatch");
  std::int64_t inter = 0, uni = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const bool x = a[i] > 0.5f, y = b[i] > 0.5f;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<int> clip_frame_indices(int start, int n_frames, int stride) {
  std::vector<int> idx(static_cast<std::size_t>(n_frames));
  for (int i = 0; i < n_frames; ++i) idx[static_cast<std::size_t>(i)] = start + i * stride;
  return idx;
}

Batch assemble_batch(const std::vector<ClipRecord>& corpus, const std::vector<std::size_t>& clips,
                     const std::vector<int>& starts, int n_frames, int stride) {
  if (clips.empty() || clips.size() != starts.size()) throw ContractError("assemble_batch needs matching clip/start lists");
  const auto& first = corpus.at(clips[0]).frames;
  const std::int64_t h = first.dim(2), w = first.dim(3), plane = h * w;
  const auto b = static_cast<std::int64_t>(clips.size());
  Batch out;
  out.frames = Tensor(Shape{b, n_frames, 3, h, w});
  out.depth = Tensor(Shape{b, n_frames, 1, h, w});
  out.image = n_frames == 1;
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& clip = corpus.at(clips[static_cast<std::size_t>(i)]);
    if (clip.frames.dim(2) != h || clip.frames.dim(3) != w) throw DataError("clip " + clip.id + " has a different resolution");
    if (!clip.depth) throw DataError("clip " + clip.id + " has no depth maps");
    const auto idx = clip_frame_indices(starts[static_cast<std::size_t>(i)], n_frames, stride);
    if (idx.back() >= clip.length()) throw ContractError("frame window exceeds clip " + clip.id);
    for (int k = 0; k < n_frames; ++k) {
      const std::int64_t src = idx[static_cast<std::size_t>(k)];
      std::copy_n(clip.frames.ptr() + src * 3 * plane, 3 * plane, out.frames.ptr() + (i * n_frames + k) * 3 * plane);
      std::copy_n(clip.depth->ptr() + src * plane, plane, out.depth.ptr() + (i * n_frames + k) * plane);
    }
    out.style_ids.push_back(clip.style_id);
  }
  out.clips = clips;
  out.starts = starts;
  return out;
}

Batch make_batch(const std::vector<ClipRecord>& corpus, const BatchConfig& cfg, Rng& rng) {
  if (corpus.empty()) throw DataError("empty corpus");
  if (cfg.batch_size < 1 || cfg.n_frames < 1 || cfg.stride < 1) throw ConfigError("batch size, frames and stride must be >= 1");
  if (!(cfg.image_prob >= 0.0 && cfg.image_prob <= 1.0)) throw ConfigError("image_prob must lie in [0, 1]");
  const bool image = rng.bernoulli(cfg.image_prob);
  const int span = (cfg.n_frames - 1) * cfg.stride + 1;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (image || corpus[i].length() >= span) eligible.push_back(i);
  if (eligible.empty())
    throw DataError("no clip has the " + std::to_string(span) + " frames needed for n_frames=" +
                    std::to_string(cfg.n_frames) + ", stride=" + std::to_string(cfg.stride));
  if (!image && eligible.size() < corpus.size()) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true))
      spdlog::warn("{} of {} clips are shorter than {} frames and are skipped for video batches",
                   corpus.size() - eligible.size(), corpus.size(), span);
  }
  const int count = image ? cfg.batch_size * cfg.n_frames : cfg.batch_size;
  std::vector<std::size_t> clips;
  std::vector<int> starts;
  for (int i = 0; i < count; ++i) {
    const std::size_t c = eligible[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(eligible.size()) - 1))];
    const int last = image ? corpus[c].length() - 1 : corpus[c].length() - span;
    clips.push_back(c);
    starts.push_back(static_cast<int>(rng.uniform_int(0, last)));
  }
  return image ? assemble_batch(corpus, clips, starts, 1, 1) : assemble_batch(corpus, clips, starts, cfg.n_frames, cfg.stride);
}

namespace {

std::string numbered(const char* stem, int i) {
  char name[64];
  std::snprintf(name, sizeof(name), "%s_%05d.png", stem, i);
  return name;
}

json scene_to_json(const SceneSpec& s) {
  json shapes = json::array();
  for (const auto& sh : s.shapes)
    shapes.push_back({{"kind", static_cast<int>(sh.kind)}, {"cx", sh.cx}, {"cy", sh.cy}, {"extent", sh.extent},
                      {"vx", sh.vx}, {"vy", sh.vy}, {"z", sh.z}});
  return {{"shapes", shapes}, {"style_id", s.style_id}, {"frames", s.frames},
          {"height", s.height}, {"width", s.width}, {"seed", s.seed}};
}

SceneSpec scene_from_json(const json& j) {
  SceneSpec s;
  s.style_id = j.at("style_id").get<int>();
  s.frames = j.at("frames").get<int>();
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& sh : j.at("shapes")) {
    ShapeSpec x;
    x.kind = static_cast<ShapeKind>(sh.at("kind").get<int>());
    x.cx = sh.at("cx").get<float>();
    x.cy = sh.at("cy").get<float>();
    x.extent = sh.at("extent").get<float>();
    x.vx = sh.at("vx").get<float>();
    x.vy = sh.at("vy").get<float>();
    x.z = sh.at("z").get<int>();
    s.shapes.push_back(x);
  }
  return s;
}

Tensor frame_from_image(const Image& img, const fs::path& path) {
  if (img.channels != 3 || img.bit_depth != 8) throw DataError("expected 8-bit RGB frame: " + path.string());
  const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
  Tensor t(Shape{3, img.height, img.width});
  for (std::int64_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) t[c * plane + p] = unit_from_u8(img.samples[static_cast<std::size_t>(p * 3 + c)]);
  return t;
}

Image image_from_frame(const Tensor& frames, std::int64_t f) {
  const std::int64_t h = frames.dim(2), w = frames.dim(3), plane = h * w;
  Image img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.channels = 3;
  img.bit_depth = 8;
  img.samples.resize(static_cast<std::size_t>(plane * 3));
  for (std::int64_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) img.samples[static_cast<std::size_t>(p * 3 + c)] = u8_from_unit(frames[(f * 3 + c) * plane + p]);
  return img;
}

}  // namespace

void write_frames(const Tensor& frames, const fs::path& dir) {
  if (frames.shape().size() != 4 || frames.dim(1) != 3) throw DimensionError("write_frames expects [n, 3, H, W]");
  fs::create_directories(dir);
  for (std::int64_t f = 0; f < frames.dim(0); ++f) write_png(dir / numbered("frame", static_cast<int>(f)), image_from_frame(frames, f));
}

Tensor read_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("frame directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("frame_", 0) == 0 && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no frame_*.png files in " + dir.string());
  std::vector<Tensor> frames;
  for (const auto& f : files) {
    Tensor t = frame_from_image(read_png(f), f);
    if (!frames.empty() && t.shape() != frames.front().shape()) throw DataError("inconsistent frame size: " + f.string());
    frames.push_back(std::move(t));
  }
  const auto& s = frames.front().shape();
  Tensor out(Shape{static_cast<std::int64_t>(frames.size()), s[0], s[1], s[2]});
  const std::int64_t per = frames.front().numel();
  for (std::size_t i = 0; i < frames.size(); ++i) std::copy_n(frames[i].ptr(), per, out.ptr() + static_cast<std::int64_t>(i) * per);
  return out;
}

void export_clip(const ClipRecord& clip, const fs::path& dir) {
  fs::create_directories(dir);
  write_frames(clip.frames, dir);
  const std::int64_t n = clip.frames.dim(0), h = clip.frames.dim(2), w = clip.frames.dim(3), plane = h * w;
  if (clip.depth) {
    for (std::int64_t f = 0; f < n; ++f) {
      Image img;
      img.width = static_cast<int>(w);
      img.height = static_cast<int>(h);
      img.channels = 1;
      img.bit_depth = 16;
      img.samples.resize(static_cast<std::size_t>(plane));
      for (std::int64_t p = 0; p < plane; ++p) {
        const double d = std::clamp(static_cast<double>((*clip.depth)[f * plane + p]), 0.0, 1.0);
        img.samples[static_cast<std::size_t>(p)] = static_cast<std::uint16_t>(std::lround(d * 65535.0));
      }
      write_png(dir / numbered("depth", static_cast<int>(f)), img);
    }
  }
  json meta = {{"id", clip.id},        {"style_id", clip.style_id}, {"style_name", clip.style_name},
               {"seed", clip.scene.seed}, {"frames", n},           {"height", h},
               {"width", w},            {"has_depth", clip.depth.has_value()}, {"scene", scene_to_json(clip.scene)}};
  std::ofstream(dir / "clip.json") << meta.dump(2) << "\n";
}

ClipRecord import_clip(const fs::path& dir) {
  const fs::path meta_path = dir / "clip.json";
  std::ifstream in(meta_path);
  if (!in) throw DataError("missing metadata " + meta_path.string());
  ClipRecord rec;
  std::int64_t n = 0, h = 0, w = 0;
  try {
    const json meta = json::parse(in);
    rec.id = meta.at("id").get<std::string>();
    rec.style_id = meta.at("style_id").get<int>();
    rec.style_name = meta.at("style_name").get<std::string>();
    n = meta.at("frames").get<std::int64_t>();
    h = meta.at("height").get<std::int64_t>();
    w = meta.at("width").get<std::int64_t>();
    if (meta.contains("scene")) rec.scene = scene_from_json(meta.at("scene"));
  } catch (const json::exception& e) {
    throw DataError("malformed metadata " + meta_path.string() + ": " + e.what());
  }
  if (n < 1 || h < 1 || w < 1) throw DataError("metadata " + meta_path.string() + " has non-positive dimensions");
  const std::int64_t plane = h * w;
  rec.frames = Tensor(Shape{n, 3, h, w});
  for (std::int64_t f = 0; f < n; ++f) {
    const fs::path p = dir / numbered("frame", static_cast<int>(f));
    if (!fs::exists(p)) throw DataError("missing frame " + p.string());
    Tensor t = frame_from_image(read_png(p), p);
    if (t.dim(1) != h || t.dim(2) != w) throw DataError("frame size differs from metadata: " + p.string());
    std::copy_n(t.ptr(), 3 * plane, rec.frames.ptr() + f * 3 * plane);
  }
  if (fs::exists(dir / numbered("depth", 0))) {
    Tensor depth(Shape{n, 1, h, w});
    for (std::int64_t f = 0; f < n; ++f) {
      const fs::path p = dir / numbered("depth", static_cast<int>(f));
      if (!fs::exists(p)) throw DataError("missing depth " + p.string());
      const Image img = read_png(p);
      if (img.channels != 1 || img.bit_depth != 16) throw DataError("expected 16-bit grayscale depth: " + p.string());
      if (img.height != h || img.width != w) throw DataError("depth size differs from metadata: " + p.string());
      for (std::int64_t q = 0; q < plane; ++q) depth[f * plane + q] = static_cast<float>(img.samples[static_cast<std::size_t>(q)]) / 65535.0f;
    }
    rec.depth = depth;
  }
  return rec;
}

void export_corpus(const std::vector<ClipRecord>& corpus, const fs::path& dir) {
  for (const auto& c : corpus) export_clip(c, dir / c.id);
}

std::vector<ClipRecord> import_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("corpus directory not found: " + dir.string());
  std::vector<fs::path> clips;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "clip.json")) clips.push_back(e.path());
  std::sort(clips.begin(), clips.end());
  if (clips.empty()) throw DataError("no clips under " + dir.string());
  std::vector<ClipRecord> out;
  for (const auto& c : clips) out.push_back(import_clip(c));
  return out;
}

}  // namespace veil
