#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cvgan/tensor.hpp"

namespace cvgan {

// Model/optimizer snapshot: ordered named weight sections under the same
// header discipline as the latent format. Save -> load -> save is
// byte-identical.
struct CheckpointData {
    uint64_t config_hash = 0;
    uint64_t step = 0;
    std::vector<std::pair<std::string, Tensor>> sections;  // fixed order
};

constexpr char kCheckpointMagic[8] = {'C', 'V', 'G', 'N', 'C', 'K', 'P', 'T'};
constexpr uint16_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

uint64_t fnv1a(const std::string& s);

}  // namespace cvgan
