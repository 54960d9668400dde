#include "veil/rng.hpp"

#include <cmath>

#include "veil/error.hpp"

namespace veil {

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h);
}

Rng::Rng(std::uint64_t seed) : key_(mix64(seed ^ 0x5eedULL)) {}

Rng Rng::substream(std::string_view purpose) const { return Rng(mix64(key_ ^ hash_string(purpose)), 0, 0); }

Rng Rng::substream(std::uint64_t index) const { return Rng(mix64(key_ + mix64(index + 0x51ULL)), 0, 0); }

std::uint64_t Rng::next_u64() { return mix64(key_ ^ mix64(counter_++)); }

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ContractError("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(next_u64() % span);
}

bool Rng::bernoulli(double p) { return uniform() < p; }

double Rng::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Tensor Rng::normal_tensor(const Shape& shape) {
  Tensor t(shape);
  for (float& v : t.data()) v = static_cast<float>(normal());
  return t;
}

}  // namespace veil
