#pragma once

#include <array>
#include <string>
#include <vector>

#include "cvgan/image.hpp"

// Physical underwater degradation: I = J*t + ambient*(1-t) per channel with
// transmission t = exp(-attenuation * depth). Paired synthetic data comes
// from procedural clean images degraded under sampled water presets.

namespace cvgan {

enum class WaterPreset { Bluish, Greenish, Hazy };

WaterPreset parse_preset(const std::string& name);  // "bluish" | "greenish" | "hazy"
std::string preset_name(WaterPreset p);

struct DegradationParams {
    std::array<double, 3> ambient{0.0, 0.0, 0.0};      // per-channel global light, in [0,1]
    std::array<double, 3> attenuation{0.0, 0.0, 0.0};  // per-channel coefficient, >= 0
    std::vector<double> depth;                          // per-pixel distance, >= 0
    int h = 0, w = 0;
    uint64_t seed = 0;

    void validate() const;
};

// t = exp(-nu * d), one 3-channel map; values in (0,1].
Image transmission(const std::vector<double>& depth, int h, int w, const std::array<double, 3>& nu);

// I = J*t + ambient*(1-t); stays inside [min(J,ambient), max(J,ambient)].
Image degrade(const Image& clean, const DegradationParams& params);

struct SynthPair {
    Image clean, degraded;
    DegradationParams params;
};

// Preset-specific water parameters and a smooth depth map for an HxW image;
// deterministic per (seed, preset, extent).
DegradationParams sample_params(uint64_t seed, WaterPreset preset, int h, int w);

// Deterministic per (seed, preset, size): procedural clean image (gradient
// background plus random shapes), smooth random depth map, preset-specific
// water parameters with the red channel attenuating fastest.
SynthPair synth_pair(uint64_t seed, WaterPreset preset, int size);

}  // namespace cvgan
