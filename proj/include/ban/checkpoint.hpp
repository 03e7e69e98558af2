#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "ban/tensor.hpp"

namespace ban {

// Named parameters, iterated in name order so serialisation is canonical.
using ParamSet = std::map<std::string, Tensor>;

// Binary layout: "BANCKPT1", then per parameter: u32 name length, UTF-8
// name, u32 rank, u32 extents, little-endian float64 payload. All integers
// little-endian.
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params);
ParamSet load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const ParamSet& params);
ParamSet decode_checkpoint(const std::string& bytes);

}  // namespace ban
