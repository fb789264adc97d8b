#include "cvgan/degrade.hpp"

#include <algorithm>
#include <cmath>

#include "cvgan/common.hpp"
#include "cvgan/rng.hpp"

namespace cvgan {

WaterPreset parse_preset(const std::string& name) {
    if (name == "bluish") return WaterPreset::Bluish;
    if (name == "greenish") return WaterPreset::Greenish;
    if (name == "hazy") return WaterPreset::Hazy;
    throw ConfigError("unknown water preset '" + name + "' (want bluish|greenish|hazy)");
}

std::string preset_name(WaterPreset p) {
    switch (p) {
        case WaterPreset::Bluish: return "bluish";
        case WaterPreset::Greenish: return "greenish";
        default: return "hazy";
    }
}

void DegradationParams::validate() const {
    for (double a : ambient)
        if (!(a >= 0.0 && a <= 1.0)) throw ContractError("degrade: ambient light must be in [0,1]");
    for (double nu : attenuation)
        if (!(nu >= 0.0)) throw ContractError("degrade: attenuation must be >= 0");
    if (static_cast<size_t>(h) * w != depth.size()) throw ShapeError("degrade: depth map extent mismatch");
    for (double d : depth)
        if (!(d >= 0.0) || !std::isfinite(d)) throw ContractError("degrade: depth must be finite and >= 0");
}

Image transmission(const std::vector<double>& depth, int h, int w, const std::array<double, 3>& nu) {
    if (static_cast<size_t>(h) * w != depth.size()) throw ShapeError("transmission: depth extent mismatch");
    for (double n : nu)
        if (!(n >= 0.0)) throw ContractError("transmission: attenuation must be >= 0");
    for (double d : depth)
        if (!(d >= 0.0)) throw ContractError("transmission: depth must be >= 0");
    Image t(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double d = depth[static_cast<size_t>(y) * w + x];
            for (int c = 0; c < 3; ++c) t.at(y, x, c) = std::exp(-nu[static_cast<size_t>(c)] * d);
        }
    return t;
}

Image degrade(const Image& clean, const DegradationParams& params) {
    params.validate();
    if (clean.h != params.h || clean.w != params.w)
        throw ShapeError("degrade: image extent does not match depth map");
    Image t = transmission(params.depth, params.h, params.w, params.attenuation);
    Image out(clean.h, clean.w);
    for (int y = 0; y < clean.h; ++y)
        for (int x = 0; x < clean.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double tv = t.at(y, x, c);
                out.at(y, x, c) = clean.at(y, x, c) * tv + params.ambient[static_cast<size_t>(c)] * (1.0 - tv);
            }
    return out;
}

namespace {

// Smooth low-frequency field: coarse uniform grid, smoothstep-interpolated.
std::vector<double> smooth_field(int h, int w, int grid, double lo, double hi, Rng& rng) {
    std::vector<double> coarse(static_cast<size_t>(grid) * grid);
    for (double& v : coarse) v = rng.uniform();
    std::vector<double> out(static_cast<size_t>(h) * w);
    auto smoothstep = [](double t) { return t * t * (3.0 - 2.0 * t); };
    for (int y = 0; y < h; ++y) {
        double fy = static_cast<double>(y) / h * (grid - 1);
        int y0 = std::min(static_cast<int>(fy), grid - 2);
        double wy = smoothstep(fy - y0);
        for (int x = 0; x < w; ++x) {
            double fx = static_cast<double>(x) / w * (grid - 1);
            int x0 = std::min(static_cast<int>(fx), grid - 2);
            double wx = smoothstep(fx - x0);
            double a = coarse[static_cast<size_t>(y0) * grid + x0];
            double b = coarse[static_cast<size_t>(y0) * grid + x0 + 1];
            double c = coarse[static_cast<size_t>(y0 + 1) * grid + x0];
            double d = coarse[static_cast<size_t>(y0 + 1) * grid + x0 + 1];
            double v = (a * (1 - wx) + b * wx) * (1 - wy) + (c * (1 - wx) + d * wx) * wy;
            out[static_cast<size_t>(y) * w + x] = lo + (hi - lo) * v;
        }
    }
    return out;
}

std::array<double, 3> random_color(Rng& rng) {
    return {rng.uniform(), rng.uniform(), rng.uniform()};
}

// Gradient background plus a few colored rectangles and circles. Shape
// boundaries are feathered over ~1.5px; single-pixel step edges would be an
// artifact of the rasterizer, not of any optical scene.
Image procedural_clean(int size, Rng& rng) {
    Image img(size, size);
    auto ca = random_color(rng), cb = random_color(rng);
    bool diag = rng.uniform() < 0.5;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double t = diag ? static_cast<double>(x + y) / (2 * size - 2)
                            : static_cast<double>(y) / (size - 1);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = ca[static_cast<size_t>(c)] * (1 - t) + cb[static_cast<size_t>(c)] * t;
        }
    const double feather = 1.5;
    int shapes = 3 + static_cast<int>(rng.below(4));
    for (int s = 0; s < shapes; ++s) {
        auto color = random_color(rng);
        bool circle = rng.uniform() < 0.5;
        double cx = rng.uniform(0.1, 0.9) * size;
        double cy = rng.uniform(0.1, 0.9) * size;
        double r = rng.uniform(0.08, 0.3) * size;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                // signed distance to the boundary, negative inside
                double d;
                if (circle) {
                    d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy)) - r;
                } else {
                    double dx = std::abs(x - cx) - r;
                    double dy = std::abs(y - cy) - 0.7 * r;
                    d = std::max(dx, dy);
                }
                double alpha = std::clamp(0.5 - d / feather, 0.0, 1.0);
                if (alpha > 0.0)
                    for (int c = 0; c < 3; ++c)
                        img.at(y, x, c) =
                            (1.0 - alpha) * img.at(y, x, c) + alpha * color[static_cast<size_t>(c)];
            }
    }
    return img;
}

}  // namespace

DegradationParams sample_params(uint64_t seed, WaterPreset preset, int h, int w) {
    if (h < 2 || w < 2) throw ContractError("sample_params: image too small");
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(preset) + 577));
    DegradationParams p;
    p.h = h;
    p.w = w;
    p.seed = seed;
    const double d_max = 5.0;
    p.depth = smooth_field(h, w, 5, 0.0, d_max, rng);
    // red always attenuates fastest: nu_R > nu_G > nu_B by construction
    switch (preset) {
        case WaterPreset::Bluish:
            p.ambient = {rng.uniform(0.00, 0.10), rng.uniform(0.15, 0.35), rng.uniform(0.50, 0.80)};
            p.attenuation = {rng.uniform(0.50, 0.90), rng.uniform(0.16, 0.30), rng.uniform(0.05, 0.15)};
            break;
        case WaterPreset::Greenish:
            p.ambient = {rng.uniform(0.00, 0.10), rng.uniform(0.50, 0.80), rng.uniform(0.15, 0.35)};
            p.attenuation = {rng.uniform(0.50, 0.90), rng.uniform(0.16, 0.30), rng.uniform(0.05, 0.15)};
            break;
        case WaterPreset::Hazy:
            p.ambient = {rng.uniform(0.45, 0.60), rng.uniform(0.55, 0.70), rng.uniform(0.60, 0.75)};
            p.attenuation = {rng.uniform(0.35, 0.55), rng.uniform(0.24, 0.34), rng.uniform(0.14, 0.23)};
            break;
    }
    return p;
}

SynthPair synth_pair(uint64_t seed, WaterPreset preset, int size) {
    if (size < 4) throw ContractError("synth_pair: size must be >= 4");
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(preset) + 101));
    SynthPair pair;
    pair.clean = procedural_clean(size, rng);
    pair.params = sample_params(rng.next_u64(), preset, size, size);
    pair.params.seed = seed;
    pair.degraded = degrade(pair.clean, pair.params);
    return pair;
}

}  // namespace cvgan
