#pragma once

#include <string>

#include "cvgan/image.hpp"

namespace cvgan {

// PNG (8-bit RGB via libpng) and binary PPM (P6). Writers quantize with
// round(v * 255) after clamping, deterministically.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

Image read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);

// Dispatch on extension (.png / .ppm).
Image read_image(const std::string& path);
void write_image(const std::string& path, const Image& img);

}  // namespace cvgan
