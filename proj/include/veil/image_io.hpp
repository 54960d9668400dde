#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "veil/tensor.hpp"

namespace veil {

/// Decoded PNG. Samples are stored interleaved, row-major, widened to 16 bits
/// regardless of the file's bit depth.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 (gray) or 3 (RGB)
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;

  std::uint16_t max_value() const { return bit_depth == 16 ? 65535 : 255; }
};

/// Reads gray or RGB PNGs at 8 or 16 bits; palette and alpha inputs are
/// expanded or stripped. Failures raise DataError naming the file.
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

/// [C, H, W] tensor with samples scaled to [0, 1].
Tensor image_to_tensor(const Image& img);
/// Inverse of image_to_tensor: clamps to [0, 1] and rounds to the bit depth.
Image tensor_to_image(const Tensor& chw, int bit_depth);

/// `<prefix>%05d.png` files in `dir` in index order. Raises DataError when the
/// directory holds none or the indices have a gap (naming the missing file).
std::vector<std::filesystem::path> numbered_pngs(const std::filesystem::path& dir, const std::string& prefix);

}  // namespace veil
