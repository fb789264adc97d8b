#pragma once

#include <string>
#include <vector>

#include "cvgan/image.hpp"

namespace cvgan {

struct PairedSample {
    std::string name;
    std::string degraded_path, clean_path;
};

// Parallel degraded/ and clean/ directories, matched by filename. Orphans go
// to the skip report; pair order is shuffled per seed.
struct PairedDataset {
    std::vector<PairedSample> pairs;
    std::vector<std::string> skipped;
    int extent = 0;
    uint64_t seed = 0;
};

PairedDataset load_dataset(const std::string& dir, int extent, uint64_t seed);

// Decode to [0,1] RGB, bilinear-resize to extent x extent, planar float.
Tensor load_image_tensor(const std::string& path, int extent);

// Pre-decoded pairs for the training loop.
struct TensorPairs {
    std::vector<Tensor> degraded, clean;
    std::vector<std::string> names;

    size_t size() const { return degraded.size(); }
};

TensorPairs load_tensors(const PairedDataset& ds);

}  // namespace cvgan
