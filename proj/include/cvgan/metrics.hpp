#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cvgan/image.hpp"

namespace cvgan {

// 10*log10(peak^2 / MSE); identical images return +infinity (reported as
// "inf" and excluded from aggregates).
double psnr(const Image& a, const Image& b, double peak = 1.0);

// Chroma spread + luminance contrast + mean saturation in CIELab space.
// Weights default to the metric's published coefficients; they are
// configuration, not ground truth.
struct UciqeWeights {
    double chroma_std = 0.4680;
    double luma_contrast = 0.2745;
    double saturation = 0.2576;
};
double uciqe(const Image& img, const UciqeWeights& w = {});

// Underwater image quality measure and its components. uicm: colorfulness
// from RG/YB opponent statistics with 10% asymmetric trimmed means. uism:
// Sobel-weighted block log-contrast (EME) per channel. uiconm: block
// Michelson log-contrast (logAMEE) on intensity.
double uicm(const Image& img);
double uism(const Image& img, int block = 8);
double uiconm(const Image& img, int block = 8);

struct UiqmCoeffs {
    double c1 = 0.0282;
    double c2 = 0.2953;
    double c3 = 3.5753;
    bool product_mode = false;  // printed-formula variant; linear combination by default
};
double uiqm(const Image& img, const UiqmCoeffs& c = {});

// exp(mean KL(p(y|x) || marginal)) per split; returns (mean, std) over splits.
// The classifier producing the probability vectors is the caller's business.
std::pair<double, double> inception_score(const std::vector<std::vector<double>>& class_probs,
                                          int splits);

struct EdgeMap {
    int h = 0, w = 0;
    std::vector<uint8_t> mask;  // 0/1

    size_t count() const;
};

// Gaussian blur -> Sobel -> non-maximum suppression -> hysteresis.
// Thresholds are absolute gradient magnitudes for [0,1] images.
EdgeMap canny(const Image& img, double low = 0.05, double high = 0.15, double sigma = 1.4);

// L2 norm of the difference of two binary maps: sqrt(#disagreeing pixels).
double edge_distance(const EdgeMap& a, const EdgeMap& b);

// ---------------------------------------------------------------------------
// reporting
// ---------------------------------------------------------------------------

struct MetricRecord {
    std::string path;
    bool has_psnr = false, has_edge = false;
    bool has_uciqe = false, has_uiqm = false;
    double psnr = 0.0;
    double uciqe = 0.0, uiqm = 0.0, uicm = 0.0, uism = 0.0, uiconm = 0.0;
    double edge_l2 = 0.0;
};

struct MetricReport {
    std::vector<MetricRecord> rows;
    double mean_psnr = 0.0, mean_uciqe = 0.0, mean_uiqm = 0.0;
    double mean_uicm = 0.0, mean_uism = 0.0, mean_uiconm = 0.0, mean_edge = 0.0;
    int psnr_count = 0, edge_count = 0, uciqe_count = 0, uiqm_count = 0;

    void finalize();  // aggregates = arithmetic means; infinite psnr excluded
    void write_table(std::ostream& os) const;
    void write_kv(std::ostream& os) const;  // one "key=value ..." record per image
};

}  // namespace cvgan
