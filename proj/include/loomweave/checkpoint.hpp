#pragma once

#include <string>

#include "loomweave/nn.hpp"

namespace loomweave {

/// Single-file binary checkpoint: little-endian manifest (magic, format
/// version, config hash, step count) followed by named f64 tensors, then the
/// optional optimizer state. Format documented in the README and stable.
void save_checkpoint(const std::string& path, uint64_t config_hash, int64_t step,
                     const ParamStore& params, const Adam* optimizer = nullptr);

struct CheckpointInfo {
    uint64_t config_hash = 0;
    int64_t step = 0;
    bool has_optimizer = false;
};

/// Loads tensors by name into an existing parameter store (shapes must
/// match). expected_hash != 0 enforces config compatibility.
CheckpointInfo load_checkpoint(const std::string& path, uint64_t expected_hash,
                               ParamStore& params, Adam* optimizer = nullptr);

/// Reads only the manifest header.
CheckpointInfo peek_checkpoint(const std::string& path);

}  // namespace loomweave
