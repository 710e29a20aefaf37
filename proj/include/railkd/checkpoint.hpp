#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "railkd/tensor.hpp"

namespace railkd {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Named tensors plus a JSON metadata blob.
///
/// On-disk layout (little-endian):
///   magic "RKDCKPT1" | u32 version | u64 meta_len | meta (UTF-8 JSON)
///   | u64 count | per tensor: u32 name_len, name, u32 rank, u64 dims[rank],
///   f64 values[numel]
/// Values are stored as raw IEEE-754 bits, so a save/load round trip is
/// bit-exact.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  bool contains(const std::string& name) const;
  /// Throws DataError when missing.
  const Tensor& get(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace railkd
