#include "cvgan/latent.hpp"

#include <cstring>
#include <fstream>

namespace cvgan {

namespace {

template <typename T>
void put(std::vector<uint8_t>& out, T v) {
    // little-endian on all supported targets
    uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T take(const uint8_t*& p, const uint8_t* end) {
    if (static_cast<size_t>(end - p) < sizeof(T)) throw FormatError("latent file truncated");
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
}

}  // namespace

std::vector<uint8_t> serialize_latent(const LatentCode& code) {
    if (shape_numel(code.shape) != code.payload.size())
        throw ContractError("latent: payload does not match shape");
    std::vector<uint8_t> out;
    out.insert(out.end(), kLatentMagic, kLatentMagic + 8);
    put<uint16_t>(out, kLatentVersion);
    put<uint16_t>(out, static_cast<uint16_t>(code.shape.size()));
    for (int e : code.shape) put<uint32_t>(out, static_cast<uint32_t>(e));
    for (float v : code.payload) put<float>(out, v);
    return out;
}

LatentCode deserialize_latent(const uint8_t* data, size_t size) {
    const uint8_t* p = data;
    const uint8_t* end = data + size;
    if (size < 8 || std::memcmp(p, kLatentMagic, 8) != 0)
        throw FormatError("latent file: bad magic");
    p += 8;
    uint16_t version = take<uint16_t>(p, end);
    if (version != kLatentVersion)
        throw FormatError("latent file: unsupported version " + std::to_string(version));
    uint16_t rank = take<uint16_t>(p, end);
    if (rank == 0 || rank > 8) throw FormatError("latent file: bad rank");
    LatentCode code;
    for (int i = 0; i < rank; ++i) {
        uint32_t e = take<uint32_t>(p, end);
        if (e == 0) throw FormatError("latent file: zero extent");
        code.shape.push_back(static_cast<int>(e));
    }
    size_t n = shape_numel(code.shape);
    if (static_cast<size_t>(end - p) != n * sizeof(float))
        throw FormatError("latent file: payload length mismatch");
    code.payload.resize(n);
    std::memcpy(code.payload.data(), p, n * sizeof(float));
    return code;
}

void save_latent(const std::string& path, const LatentCode& code) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    auto bytes = serialize_latent(code);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write: " + path);
}

LatentCode load_latent(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_latent(bytes.data(), bytes.size());
}

double compression_factor(const Shape& input_shape, const Shape& latent_shape) {
    if (input_shape.empty() || latent_shape.empty())
        throw ContractError("compression_factor: empty shape");
    for (int e : input_shape)
        if (e < 1) throw ContractError("compression_factor: zero extent");
    for (int e : latent_shape)
        if (e < 1) throw ContractError("compression_factor: zero extent");
    return static_cast<double>(shape_numel(input_shape)) / static_cast<double>(shape_numel(latent_shape));
}

LatentCode compress(const Generator& g, const Tensor& y) {
    Tensor z = g.encode(y);
    LatentCode code;
    code.shape = z.shape();
    code.payload = z.vec();
    return code;
}

Tensor decompress(const Generator& g, const LatentCode& code) {
    Tensor z = Tensor::from(code.shape, code.payload);
    return g.decode(g.quantize(z));
}

}  // namespace cvgan
