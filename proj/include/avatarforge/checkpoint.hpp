#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "avatarforge/optim.hpp"

namespace avatarforge::ad {

/// weights.bin: "AVFW" magic, u32 version, u32 count, then per tensor
/// u32 name length, name bytes, u32 rank, u32 dims[rank], float32 payload. All little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

/// Overwrites every parameter of `params` from the file; names and shapes must match exactly.
void load_checkpoint(ParamStore& params, const std::filesystem::path& path);

}  // namespace avatarforge::ad
