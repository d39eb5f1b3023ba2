#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "coloc/tensor.hpp"

namespace coloc {

inline constexpr std::uint16_t kTensorFileVersion = 1;

// Binary named-tensor container, shared by checkpoints and corpus image
// files. Layout: magic "CLOC", version u16, then one record per tensor:
// name length u16, name bytes, rank u8, one u32 per dim, payload f64.
// Every integer and float is little-endian.
void save_tensors(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& tensors);

// Reads records until end of file; truncation or a bad header raises
// FormatError naming the file.
std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path);

}  // namespace coloc
