#include "veil/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

#include "veil/error.hpp"

namespace veil {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors through a callback that must not return; we stash the
// message and longjmp back to the setjmp in the caller.
struct ErrorSink {
  char message[256] = {0};
};

void on_error(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<ErrorSink*>(png_get_error_ptr(png));
  std::snprintf(sink->message, sizeof(sink->message), "%s", msg);
  png_longjmp(png, 1);
}

void on_warning(png_structp, png_const_charp) {}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open image " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw DataError("not a PNG file: " + path.string());

  ErrorSink sink;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &sink, on_error, on_warning);
  if (!png) throw DataError("libpng init failed for " + path.string());
  png_infop info = png_create_info_struct(png);
  Image img;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("corrupt PNG " + path.string() + ": " + sink.message);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // host little-endian samples
  png_read_update_info(png, info);

  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  raw.resize(stride * static_cast<std::size_t>(img.height));
  rows.resize(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + stride * static_cast<std::size_t>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (img.channels != 1 && img.channels != 3)
    throw DataError("unsupported channel count " + std::to_string(img.channels) + " in " + path.string());
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.samples.resize(n);
  if (img.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i) img.samples[i] = static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
  } else {
    for (std::size_t i = 0; i < n; ++i) img.samples[i] = raw[i];
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ContractError("write_png: channels must be 1 or 3");
  if (img.bit_depth != 8 && img.bit_depth != 16) throw ContractError("write_png: bit depth must be 8 or 16");
  if (img.samples.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw ContractError("write_png: sample count does not match dimensions");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot write image " + path.string());

  const std::size_t bytes = img.bit_depth == 16 ? 2 : 1;
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels * bytes;
  std::vector<unsigned char> raw(stride * static_cast<std::size_t>(img.height));
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    if (bytes == 2) {
      raw[2 * i] = static_cast<unsigned char>(img.samples[i] >> 8);  // PNG is big-endian
      raw[2 * i + 1] = static_cast<unsigned char>(img.samples[i] & 0xff);
    } else {
      raw[i] = static_cast<unsigned char>(img.samples[i]);
    }
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = raw.data() + stride * static_cast<std::size_t>(y);

  ErrorSink sink;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &sink, on_error, on_warning);
  if (!png) throw DataError("libpng init failed for " + path.string());
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing PNG " + path.string() + ": " + sink.message);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), img.bit_depth,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor image_to_tensor(const Image& img) {
  Tensor out(Shape{img.channels, img.height, img.width});
  const float inv = 1.0f / static_cast<float>(img.max_value());
  const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
  for (std::int64_t p = 0; p < plane; ++p)
    for (int c = 0; c < img.channels; ++c)
      out[c * plane + p] = static_cast<float>(img.samples[static_cast<std::size_t>(p * img.channels + c)]) * inv;
  return out;
}

Image tensor_to_image(const Tensor& chw, int bit_depth) {
  if (chw.shape().size() != 3) throw DimensionError("tensor_to_image expects [C, H, W], got " + shape_str(chw.shape()));
  if (bit_depth != 8 && bit_depth != 16) throw ContractError("tensor_to_image: bit depth must be 8 or 16");
  Image img;
  img.channels = static_cast<int>(chw.dim(0));
  img.height = static_cast<int>(chw.dim(1));
  img.width = static_cast<int>(chw.dim(2));
  img.bit_depth = bit_depth;
  const double top = img.max_value();
  const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
  img.samples.resize(static_cast<std::size_t>(plane * img.channels));
  for (std::int64_t p = 0; p < plane; ++p)
    for (int c = 0; c < img.channels; ++c) {
      const double v = std::clamp(static_cast<double>(chw[c * plane + p]), 0.0, 1.0);
      img.samples[static_cast<std::size_t>(p * img.channels + c)] = static_cast<std::uint16_t>(std::lround(v * top));
    }
  return img;
}

std::vector<std::filesystem::path> numbered_pngs(const std::filesystem::path& dir, const std::string& prefix) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind(prefix, 0) == 0 && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no " + prefix + "*.png files in " + dir.string());
  const std::string pattern = prefix + "%d.png";
  int first = -1;
  for (std::size_t i = 0; i < files.size(); ++i) {
    int index = -1;
    if (std::sscanf(files[i].filename().c_str(), pattern.c_str(), &index) != 1)
      throw DataError("file name does not match " + prefix + "%05d.png: " + files[i].string());
    if (i == 0) first = index;
    if (index != first + static_cast<int>(i)) {
      char want[64];
      std::snprintf(want, sizeof(want), "%s%05d.png", prefix.c_str(), first + static_cast<int>(i));
      throw DataError("missing frame " + (dir / want).string());
    }
  }
  return files;
}

}  // namespace veil
