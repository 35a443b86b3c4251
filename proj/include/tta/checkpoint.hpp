#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tta/model.hpp"

namespace tta {

// Checkpoint layout (little-endian):
//   magic "TTAC" | u32 version=1 | u32 entry count
//   per entry: u32 name length | name bytes | u32 ndim | u32 dims[ndim] | u64 offset
//   raw f64 blocks, contiguous, in manifest order at the recorded offsets.
// Parameters and running-statistics buffers are stored as ordinary named
// entries; a round-trip is bit-exact.
std::vector<uint8_t> save_checkpoint(const AdaptableModel& m);
AdaptableModel load_checkpoint(const std::vector<uint8_t>& bytes,
                               const ModelLayout& layout = {});

void save_checkpoint_file(const AdaptableModel& m, const std::string& path);
AdaptableModel load_checkpoint_file(const std::string& path, const ModelLayout& layout = {});

}  // namespace tta
