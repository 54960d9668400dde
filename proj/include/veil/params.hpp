#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "veil/tensor.hpp"

namespace veil {

/// Named parameter tensors, ordered by name.
class ParamStore {
 public:
  /// Registers a trainable leaf. Throws if the name is taken.
  Tensor& add(const std::string& name, Tensor value);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  std::vector<std::string> names() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  /// Copies values from `other` for every name both stores share with equal shapes.
  /// Returns the number of tensors copied.
  std::size_t load_values(const std::map<std::string, Tensor>& other, const std::string& prefix = "");
  /// Deep copy of values, keyed by prefix + name.
  std::map<std::string, Tensor> snapshot(const std::string& prefix = "") const;
  /// Order-sensitive hash over names and raw bytes.
  std::uint64_t checksum() const;

 private:
  std::map<std::string, Tensor> params_;
};

std::uint64_t checksum(const std::map<std::string, Tensor>& tensors);

// Binary checkpoint: "VFTN", u32 version = 1, u32 count, then per tensor a u32
// name length, UTF-8 name, u8 rank, u64 dims and a little-endian f32 payload.
std::vector<std::uint8_t> encode_checkpoint(const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path);

/// Tensors whose names start with `prefix`, with the prefix removed.
std::map<std::string, Tensor> strip_prefix(const std::map<std::string, Tensor>& tensors, const std::string& prefix);

}  // namespace veil
