#include "cvgan/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

#include "cvgan/common.hpp"

namespace cvgan {

namespace {

uint8_t quant8(double v) {
    double c = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(c * 255.0));
}

struct FileCloser {
    void operator()(FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

bool ends_with(const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

}  // namespace

Image read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open " + path);
    png_byte header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw FormatError("not a PNG file: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("libpng init failed");
    }
    std::vector<png_bytep> row_ptrs;
    std::vector<uint8_t> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("undecodable PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    int color = png_get_color_type(png, info);
    int depth = png_get_bit_depth(png, info);

    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    rows.assign(static_cast<size_t>(h) * w * 3, 0);
    row_ptrs.resize(h);
    for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = rows.data() + static_cast<size_t>(y) * w * 3;
    png_read_image(png, row_ptrs.data());
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(static_cast<int>(h), static_cast<int>(w));
    for (size_t i = 0; i < rows.size(); ++i) img.pix[i] = rows[i] / 255.0;
    return img;
}

void write_png(const std::string& path, const Image& img) {
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("libpng init failed");
    }
    std::vector<uint8_t> rows(static_cast<size_t>(img.h) * img.w * 3);
    std::vector<png_bytep> row_ptrs(static_cast<size_t>(img.h));
    for (size_t i = 0; i < rows.size(); ++i) rows[i] = quant8(img.pix[i]);
    for (int y = 0; y < img.h; ++y) row_ptrs[static_cast<size_t>(y)] = rows.data() + static_cast<size_t>(y) * img.w * 3;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("PNG encode failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.w), static_cast<png_uint_32>(img.h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw FormatError("not a binary PPM (P6): " + path);
    auto next_int = [&in, &path]() {
        // skip whitespace and '#' comments
        while (true) {
            int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        long v = -1;
        in >> v;
        if (!in || v < 0) throw FormatError("malformed PPM header: " + path);
        return v;
    };
    long w = next_int(), h = next_int(), maxval = next_int();
    if (w < 1 || h < 1 || maxval != 255) throw FormatError("unsupported PPM (need maxval 255): " + path);
    in.get();  // single whitespace after maxval
    std::vector<uint8_t> buf(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(in.gcount()) != buf.size()) throw FormatError("truncated PPM: " + path);
    Image img(static_cast<int>(h), static_cast<int>(w));
    for (size_t i = 0; i < buf.size(); ++i) img.pix[i] = buf[i] / 255.0;
    return img;
}

void write_ppm(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    std::vector<uint8_t> buf(static_cast<size_t>(img.h) * img.w * 3);
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = quant8(img.pix[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write: " + path);
}

Image read_image(const std::string& path) {
    if (ends_with(path, ".png")) return read_png(path);
    if (ends_with(path, ".ppm")) return read_ppm(path);
    throw FormatError("unsupported image extension (want .png or .ppm): " + path);
}

void write_image(const std::string& path, const Image& img) {
    if (ends_with(path, ".png")) return write_png(path, img);
    if (ends_with(path, ".ppm")) return write_ppm(path, img);
    throw FormatError("unsupported image extension (want .png or .ppm): " + path);
}

}  // namespace cvgan
