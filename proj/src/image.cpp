#include "cvgan/image.hpp"

#include <algorithm>
#include <cmath>

namespace cvgan {

double Image::channel_mean(int c) const {
    double acc = 0.0;
    for (size_t p = 0; p < pixels(); ++p) acc += pix[p * 3 + static_cast<size_t>(c)];
    return pixels() ? acc / static_cast<double>(pixels()) : 0.0;
}

Image Image::clamped() const {
    Image out = *this;
    for (double& v : out.pix) v = std::clamp(v, 0.0, 1.0);
    return out;
}

Tensor image_to_tensor(const Image& img) {
    Tensor t({3, img.h, img.w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                t[(static_cast<size_t>(c) * img.h + y) * img.w + x] = static_cast<float>(img.at(y, x, c));
    return t;
}

Image tensor_to_image(const Tensor& t) {
    if (t.rank() != 3 || t.dim(0) != 3) throw ShapeError("tensor_to_image: need [3,H,W]");
    Image img(t.dim(1), t.dim(2));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                img.at(y, x, c) = t[(static_cast<size_t>(c) * img.h + y) * img.w + x];
    return img;
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
    if (img.h == out_h && img.w == out_w) return img;
    Image out(out_h, out_w);
    double sy = static_cast<double>(img.h) / out_h;
    double sx = static_cast<double>(img.w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, img.h - 1);
        int y1c = std::clamp(y0 + 1, 0, img.h - 1);
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, img.w - 1);
            int x1c = std::clamp(x0 + 1, 0, img.w - 1);
            for (int c = 0; c < 3; ++c) {
                double top = img.at(y0c, x0c, c) * (1.0 - wx) + img.at(y0c, x1c, c) * wx;
                double bot = img.at(y1c, x0c, c) * (1.0 - wx) + img.at(y1c, x1c, c) * wx;
                out.at(y, x, c) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

}  // namespace cvgan
