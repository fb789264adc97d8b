#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cvgan/model.hpp"

namespace cvgan {

// Serialized encoder output: the unit of on-disk compression. On disk:
// 8-byte magic "CVGLATNT", u16 version, u16 rank, u32 extents per axis,
// little-endian 32-bit float payload.
struct LatentCode {
    Shape shape;
    std::vector<float> payload;

    size_t payload_bytes() const { return payload.size() * sizeof(float); }
};

constexpr char kLatentMagic[8] = {'C', 'V', 'G', 'L', 'A', 'T', 'N', 'T'};
constexpr uint16_t kLatentVersion = 1;

std::vector<uint8_t> serialize_latent(const LatentCode& code);
LatentCode deserialize_latent(const uint8_t* data, size_t size);

void save_latent(const std::string& path, const LatentCode& code);
LatentCode load_latent(const std::string& path);

// product(input_shape) / product(latent_shape)
double compression_factor(const Shape& input_shape, const Shape& latent_shape);

// compress stores the encoder output only; decompress runs the capsule layer
// and decoder, so decompress(compress(y)) == generate(y).
LatentCode compress(const Generator& g, const Tensor& y);
Tensor decompress(const Generator& g, const LatentCode& code);

}  // namespace cvgan
