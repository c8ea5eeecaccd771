#pragma once

// Self-describing binary checkpoint: config snapshot, stage tag, step counter,
// named little-endian float arrays (model parameters and optimizer state), and
// a SHA-256 content hash covering all of it. Round-trips bitwise.

#include <map>
#include <vector>

#include "duet/config.hpp"

namespace duet {

struct Checkpoint {
    RunConfig config;
    std::string stage;  // chain tag: "pim" | "audio" | "joint"
    uint64_t step = 0;
    std::map<std::string, std::vector<float>> params;
    std::string content_hash;  // filled by save, verified by load
};

void save_checkpoint(const std::string& path, Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace duet
