#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvgan/tensor.hpp"

namespace cvgan {

// Interleaved RGB raster with double precision samples, nominally in [0,1].
// Metrics and the degradation simulator run on this type; training converts
// to planar float tensors.
struct Image {
    int h = 0, w = 0;
    std::vector<double> pix;  // h*w*3, row-major, RGB interleaved

    Image() = default;
    Image(int height, int width, double fill = 0.0)
        : h(height), w(width), pix(static_cast<size_t>(height) * width * 3, fill) {}

    double& at(int y, int x, int c) { return pix[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    double at(int y, int x, int c) const { return pix[(static_cast<size_t>(y) * w + x) * 3 + c]; }

    size_t pixels() const { return static_cast<size_t>(h) * w; }

    double channel_mean(int c) const;
    Image clamped() const;  // clip to [0,1]
};

// planar float [3,H,W] <-> interleaved double
Tensor image_to_tensor(const Image& img);
Image tensor_to_image(const Tensor& t);

Image resize_bilinear(const Image& img, int out_h, int out_w);

}  // namespace cvgan
