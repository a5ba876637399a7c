#pragma once

#include <map>
#include <string>

#include "tcts/tensor.hpp"

namespace tcts::ad {

// Flat binary parameter container.
//   magic "TCTS" | u32 version | records...
//   record: u32 name_len | name bytes | u32 rank | u64 extents... | f64 values...
// All integers and doubles little-endian.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path,
                     const std::map<std::string, TensorPtr>& tensors);

std::map<std::string, TensorPtr> load_checkpoint(const std::string& path);

}  // namespace tcts::ad
