#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stmt/tensor.hpp"

namespace stmt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Flat binary tensor container. Layout (all integers little-endian):
//   magic "STMT" | version u32 | count u32
//   per entry: name_len u32, name bytes (UTF-8), rank u32,
//              extents u64[rank], payload f64[numel]
// Round trips are bit-exact.
void save_checkpoint(const std::string& path, const std::vector<NamedParam>& entries);
std::vector<NamedParam> load_checkpoint(const std::string& path);

}  // namespace stmt
