#include "veil/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "veil/error.hpp"

namespace veil {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (params_.count(name)) throw ContractError("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  return params_.emplace(name, std::move(value)).first->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw CheckpointError("missing parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw CheckpointError("missing parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : params_) out.push_back(k);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

std::size_t ParamStore::load_values(const std::map<std::string, Tensor>& other, const std::string& prefix) {
  std::size_t n = 0;
  for (auto& [name, t] : params_) {
    auto it = other.find(prefix + name);
    if (it == other.end()) continue;
    if (it->second.shape() != t.shape())
      throw CheckpointError("shape mismatch for " + prefix + name + ": checkpoint " + shape_str(it->second.shape()) +
                            " vs model " + shape_str(t.shape()));
    std::copy(it->second.data().begin(), it->second.data().end(), t.data().begin());
    ++n;
  }
  return n;
}

std::map<std::string, Tensor> ParamStore::snapshot(const std::string& prefix) const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : params_) out.emplace(prefix + name, t.clone());
  return out;
}

std::uint64_t ParamStore::checksum() const { return veil::checksum(params_); }

std::uint64_t checksum(const std::map<std::string, Tensor>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : tensors) {
    feed(name.data(), name.size());
    for (auto d : t.shape()) feed(&d, sizeof d);
    feed(t.ptr(), static_cast<std::size_t>(t.numel()) * sizeof(float));
  }
  return h;
}

namespace {

constexpr char kMagic[4] = {'V', 'F', 'T', 'N'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

struct Reader {
  std::span<const std::uint8_t> bytes;
  std::size_t at = 0;

  void need(std::size_t n) const {
    if (at + n > bytes.size()) throw CheckpointError("truncated checkpoint");
  }
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes.data() + at, sizeof(T));
    at += sizeof(T);
    return v;
  }
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::map<std::string, Tensor>& tensors) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.ptr());
    out.insert(out.end(), p, p + t.numel() * static_cast<std::int64_t>(sizeof(float)));
  }
  return out;
}

std::map<std::string, Tensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
  r.at = 4;
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    r.need(len);
    std::string name(reinterpret_cast<const char*>(bytes.data() + r.at), len);
    r.at += len;
    const auto rank = r.get<std::uint8_t>();
    Shape shape;
    for (int d = 0; d < rank; ++d) shape.push_back(static_cast<std::int64_t>(r.get<std::uint64_t>()));
    const auto n = static_cast<std::size_t>(numel_of(shape));
    r.need(n * sizeof(float));
    std::vector<float> data(n);
    std::memcpy(data.data(), bytes.data() + r.at, n * sizeof(float));
    r.at += n * sizeof(float);
    out.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.at != bytes.size()) throw CheckpointError("trailing bytes after checkpoint payload");
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::map<std::string, Tensor>& tensors) {
  auto bytes = encode_checkpoint(tensors);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

std::map<std::string, Tensor> strip_prefix(const std::map<std::string, Tensor>& tensors, const std::string& prefix) {
  std::map<std::string, Tensor> out;
  for (const auto& [k, v] : tensors)
    if (k.rfind(prefix, 0) == 0) out.emplace(k.substr(prefix.size()), v);
  return out;
}

}  // namespace veil
