#pragma once

#include <string>

#include "dmh/params.hpp"

namespace dmh {

// Binary container: magic "DMH1", u32 format version, u32 entry count; per
// entry a u32-length UTF-8 name, u32 rank, u32 dims, then raw little-endian
// float32 values. Loading rejects unknown magic or version and any
// name/shape mismatch with the target registry.
void save_checkpoint(const ParameterRegistry<float>& params, const std::string& path);
void load_checkpoint(ParameterRegistry<float>& params, const std::string& path);

}  // namespace dmh
