#include "cvgan/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cvgan {

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::ifstream& in, const std::string& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw FormatError("checkpoint truncated: " + path);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write(kCheckpointMagic, 8);
    put<uint16_t>(out, kCheckpointVersion);
    put<uint64_t>(out, data.config_hash);
    put<uint64_t>(out, data.step);
    put<uint32_t>(out, static_cast<uint32_t>(data.sections.size()));
    for (const auto& [name, t] : data.sections) {
        put<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<uint16_t>(out, static_cast<uint16_t>(t.shape().size()));
        for (int e : t.shape()) put<uint32_t>(out, static_cast<uint32_t>(e));
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) throw IoError("short write: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError("not a checkpoint file: " + path);
    uint16_t version = take<uint16_t>(in, path);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version in " + path);
    CheckpointData data;
    data.config_hash = take<uint64_t>(in, path);
    data.step = take<uint64_t>(in, path);
    uint32_t count = take<uint32_t>(in, path);
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = take<uint32_t>(in, path);
        if (name_len > 4096) throw FormatError("checkpoint section name too long: " + path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        uint16_t rank = take<uint16_t>(in, path);
        if (rank == 0 || rank > 8) throw FormatError("checkpoint: bad section rank in " + path);
        Shape shape;
        for (int r = 0; r < rank; ++r) {
            uint32_t e = take<uint32_t>(in, path);
            if (e == 0) throw FormatError("checkpoint: zero extent in " + path);
            shape.push_back(static_cast<int>(e));
        }
        std::vector<float> payload(shape_numel(shape));
        in.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(payload.size() * sizeof(float)));
        if (!in) throw FormatError("checkpoint truncated: " + path);
        data.sections.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(payload)));
    }
    return data;
}

}  // namespace cvgan
