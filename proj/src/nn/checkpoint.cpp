#include "lcad/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "lcad/error.hpp"

namespace lcad::nn {
namespace {

constexpr char kMagic[8] = {'L', 'C', 'A', 'D', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_str(std::ofstream& os, const std::string& s) {
  put(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::ifstream& is, const std::filesystem::path& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("truncated checkpoint: " + path.string());
  return v;
}

std::string get_str(std::ifstream& is, const std::filesystem::path& path) {
  const auto n = get<std::uint32_t>(is, path);
  if (n > (1u << 24)) throw IoError("corrupt checkpoint string length: " + path.string());
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw IoError("truncated checkpoint: " + path.string());
  return s;
}

}  // namespace

void Checkpoint::add(const ParamList& params, const std::string& prefix) {
  for (const auto& p : params) {
    tensors[prefix + p.name] = {p.var.shape(), std::vector<double>(p.var.values().begin(), p.var.values().end()),
                                p.frozen};
  }
}

void Checkpoint::restore(ParamList& params, const std::string& prefix) const {
  for (auto& p : params) {
    const StoredTensor& t = at(prefix + p.name);
    if (t.shape != p.var.shape()) {
      throw ShapeError("checkpoint tensor " + prefix + p.name + " has shape " + shape_str(t.shape) +
                       ", model expects " + shape_str(p.var.shape()));
    }
    std::copy(t.values.begin(), t.values.end(), p.var.values().begin());
  }
}

const StoredTensor& Checkpoint::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw IoError("checkpoint is missing tensor '" + name + "'");
  return it->second;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint: " + path.string());
    os.write(kMagic, sizeof(kMagic));
    put(os, kCheckpointVersion);
    put(os, static_cast<std::uint32_t>(ckpt.meta.size()));
    for (const auto& [k, v] : ckpt.meta) {
      put_str(os, k);
      put_str(os, v);
    }
    put(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
      put_str(os, name);
      put(os, static_cast<std::uint8_t>(t.frozen ? 1 : 0));
      put(os, static_cast<std::uint32_t>(t.shape.size()));
      for (int d : t.shape) put(os, static_cast<std::int32_t>(d));
      os.write(reinterpret_cast<const char*>(t.values.data()),
               static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    }
    if (!os) throw IoError("failed writing checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("not an lcad checkpoint: " + path.string());
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint format version " + std::to_string(version) + " unsupported (expected " +
                  std::to_string(kCheckpointVersion) + "): " + path.string());
  }
  Checkpoint ckpt;
  const auto nmeta = get<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = get_str(is, path);
    ckpt.meta[k] = get_str(is, path);
  }
  const auto ntens = get<std::uint32_t>(is, path);
  for (std::uint32_t i = 0; i < ntens; ++i) {
    std::string name = get_str(is, path);
    StoredTensor t;
    t.frozen = get<std::uint8_t>(is, path) != 0;
    const auto rank = get<std::uint32_t>(is, path);
    if (rank > 8) throw IoError("corrupt checkpoint tensor rank: " + path.string());
    for (std::uint32_t r = 0; r < rank; ++r) t.shape.push_back(get<std::int32_t>(is, path));
    t.values.resize(numel(t.shape));
    is.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    if (!is) throw IoError("truncated checkpoint: " + path.string());
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

std::uint64_t param_checksum(const ParamList& params, bool frozen_only) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : params) {
    if (frozen_only && !p.frozen) continue;
    for (char c : p.name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    const auto* bytes = reinterpret_cast<const unsigned char*>(p.var.data());
    for (std::size_t i = 0; i < p.var.size() * sizeof(double); ++i) h = (h ^ bytes[i]) * 1099511628211ull;
  }
  return h;
}

}  // namespace lcad::nn
