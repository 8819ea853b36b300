#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tabledet/tensor.hpp"

namespace tabledet {

// Flat binary parameter container, little-endian throughout:
//   magic "TBLDETCK" (8 bytes) | u32 version=1 | u64 entry count
//   per entry: u32 name length | name bytes | u32 rank | u64 dims[rank]
//              | f64 values[prod(dims)]
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

void save_checkpoint(const std::string& path, const NamedParams& params);

// Reads every entry in file order.
NamedParams read_checkpoint(const std::string& path);

// Copies stored values into matching destination tensors. Throws if a
// destination name is missing from the file or shapes disagree.
void load_checkpoint(const std::string& path, NamedParams& dest);

}  // namespace tabledet
