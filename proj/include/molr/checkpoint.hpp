#pragma once
#include <string>

#include "molr/model.hpp"

namespace molr {

// Binary container: magic "MOLR", format version, JSON metadata (config,
// vocabulary, adapter registry, tensor manifest), raw little-endian doubles,
// trailing FNV-1a checksum of everything before it.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

} // namespace molr
