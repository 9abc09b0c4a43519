#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lcad/tensor.hpp"

namespace lcad::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct StoredTensor {
  Shape shape;
  std::vector<double> values;
  bool frozen = false;
};

/// Binary checkpoint: "LCADCKPT", format version, string metadata, then
/// named tensors tagged with their parameter group (frozen / trainable).
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, StoredTensor> tensors;

  void add(const ParamList& params, const std::string& prefix = "");
  /// Copies stored values into matching parameters; every parameter must be
  /// present with the same shape.
  void restore(ParamList& params, const std::string& prefix = "") const;
  const StoredTensor& at(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a over the raw bytes of every listed parameter (audit helper).
std::uint64_t param_checksum(const ParamList& params, bool frozen_only = false);

}  // namespace lcad::nn
