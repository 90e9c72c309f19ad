#pragma once

// Checkpoint layout (all integers little-endian):
//   "AMHN"                      magic
//   u32  version
//   u64  config byte count, then the model config as UTF-8 key=value text
//   u64  parameter count
//   per parameter: u32 name length, name bytes, u32 rank (=3), u64 dims[rank], u64 element offset
//   u64  total element count, then every value as a little-endian IEEE-754 binary64

#include "amh/mhnet.hpp"

#include <string>
#include <vector>

namespace amh {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<unsigned char> serialize_checkpoint(const AmhNet& model);
AmhNet deserialize_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::string& path, const AmhNet& model);
AmhNet load_checkpoint(const std::string& path);

}  // namespace amh
