#include "cvgan/dataset.hpp"

#include <algorithm>
#include <filesystem>

#include "cvgan/image_io.hpp"
#include "cvgan/rng.hpp"

namespace fs = std::filesystem;

namespace cvgan {

namespace {

std::vector<std::string> list_images(const fs::path& dir) {
    std::vector<std::string> names;
    if (!fs::exists(dir)) return names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        if (ext == ".png" || ext == ".ppm") names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace

PairedDataset load_dataset(const std::string& dir, int extent, uint64_t seed) {
    PairedDataset ds;
    ds.extent = extent;
    ds.seed = seed;
    fs::path root(dir);
    auto degraded = list_images(root / "degraded");
    auto clean = list_images(root / "clean");

    size_t di = 0, ci = 0;
    while (di < degraded.size() || ci < clean.size()) {
        if (di < degraded.size() && ci < clean.size() && degraded[di] == clean[ci]) {
            PairedSample s;
            s.name = degraded[di];
            s.degraded_path = (root / "degraded" / degraded[di]).string();
            s.clean_path = (root / "clean" / clean[ci]).string();
            ds.pairs.push_back(std::move(s));
            ++di;
            ++ci;
        } else if (ci >= clean.size() || (di < degraded.size() && degraded[di] < clean[ci])) {
            ds.skipped.push_back("degraded/" + degraded[di]);
            ++di;
        } else {
            ds.skipped.push_back("clean/" + clean[ci]);
            ++ci;
        }
    }

    // Fisher-Yates with the deterministic engine
    Rng rng(Rng::mix(seed, 0xDA7A));
    for (size_t i = ds.pairs.size(); i > 1; --i)
        std::swap(ds.pairs[i - 1], ds.pairs[rng.below(i)]);
    return ds;
}

Tensor load_image_tensor(const std::string& path, int extent) {
    Image img;
    try {
        img = read_image(path);
    } catch (const FormatError& e) {
        throw IoError("cannot decode image " + path + ": " + e.what());
    }
    if (img.h != extent || img.w != extent) img = resize_bilinear(img, extent, extent);
    return image_to_tensor(img);
}

TensorPairs load_tensors(const PairedDataset& ds) {
    TensorPairs out;
    out.degraded.reserve(ds.pairs.size());
    out.clean.reserve(ds.pairs.size());
    for (const auto& p : ds.pairs) {
        out.degraded.push_back(load_image_tensor(p.degraded_path, ds.extent));
        out.clean.push_back(load_image_tensor(p.clean_path, ds.extent));
        out.names.push_back(p.name);
    }
    return out;
}

}  // namespace cvgan
