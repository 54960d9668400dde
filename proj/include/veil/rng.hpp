#pragma once

#include <cstdint>
#include <string_view>

#include "veil/tensor.hpp"

namespace veil {

/// Counter-based generator: output i of a stream is a hash of (key, i), so a
/// stream's values depend only on its key and how many values it has handed out.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Independent stream keyed by this stream's key and `purpose`. Does not
  /// advance this stream.
  Rng substream(std::string_view purpose) const;
  Rng substream(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);
  /// Standard normal (Box-Muller, one output per two draws).
  double normal();
  Tensor normal_tensor(const Shape& shape);

  std::uint64_t key() const { return key_; }
  std::uint64_t position() const { return counter_; }

 private:
  Rng(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t hash_string(std::string_view s);

}  // namespace veil
