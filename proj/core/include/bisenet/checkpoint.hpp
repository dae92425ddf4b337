#pragma once

// Binary parameter files:
//   "BSNT" | u16 version=1 | u32 count
//   count x { u16 name_len | name | u8 dtype (0 = f32) | u8 rank | u32 dims[rank] | f32 payload }
//   u64 iteration | u64 config_hash
// All integers and floats little-endian. Momentum buffers are stored as
// ordinary tensors named "momentum/<param>".

#include <cstdint>
#include <string>
#include <vector>

#include "bisenet/param_store.hpp"

namespace bisenet {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

struct CheckpointFile {
  std::vector<CheckpointTensor> tensors;
  std::uint64_t iteration = 0;
  std::uint64_t config_hash = 0;
};

std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store, bool with_momentum = true);
// Throws kFormat carrying the byte offset of the first bad field.
CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ParamStore& store, const std::string& path, bool with_momentum = true);
CheckpointFile read_checkpoint(const std::string& path);

// Copies tensors into matching entries of `store` (values, running
// statistics, momentum buffers) plus the iteration and hash. Strict mode
// throws kConsistency on unknown or missing names; permissive mode returns
// them as warnings. Shape mismatches always throw.
std::vector<std::string> restore_checkpoint(ParamStore& store, const CheckpointFile& file,
                                            bool permissive = false);

// Standalone store rebuilt from a file; flags are inferred from names.
ParamStore load_checkpoint(const std::string& path);

}  // namespace bisenet
