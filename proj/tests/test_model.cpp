#include <cmath>
#include <cstring>

#include "cvgan/gradcheck.hpp"
#include "cvgan/latent.hpp"
#include "cvgan/model.hpp"
#include "cvgan/rng.hpp"
#include "doctest.h"

using namespace cvgan;

namespace {

template <typename T>
TensorT<T> random_image(int c, int e, Rng& rng) {
    TensorT<T> t({c, e, e});
    for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(0.0, 1.0));
    return t;
}

}  // namespace

TEST_CASE("encode/decode/generate shapes at full scale") {
    Rng rng(1);
    Generator g;
    g.cfg = ModelConfig::paper();
    g.init(rng);
    Tensor y = random_image<float>(3, 256, rng);
    Tensor z = g.encode(y);
    CHECK(z.shape() == Shape{256, 16, 16});
    Tensor c = g.quantize(z);
    CHECK(c.shape() == Shape{256, 16, 16});
    Tensor out = g.decode(c);
    CHECK(out.shape() == Shape{3, 256, 256});
}

TEST_CASE("desk preset: 32x32 input, 2 blocks, 16 latent channels -> 16x8x8") {
    Rng rng(2);
    Generator g;
    g.cfg = ModelConfig::desk();
    g.init(rng);
    Tensor y = random_image<float>(3, 32, rng);
    Tensor z = g.encode(y);
    CHECK(z.shape() == Shape{16, 8, 8});
    Tensor out = g.generate(y);
    CHECK(out.shape() == y.shape());
}

TEST_CASE("encode is deterministic for fixed weights") {
    Rng rng(3);
    Generator g;
    g.cfg = ModelConfig::desk();
    g.init(rng);
    Tensor y = random_image<float>(3, 32, rng);
    Tensor z1 = g.encode(y), z2 = g.encode(y);
    CHECK(std::memcmp(z1.data(), z2.data(), z1.size() * sizeof(float)) == 0);
    Tensor o1 = g.generate(y), o2 = g.generate(y);
    CHECK(std::memcmp(o1.data(), o2.data(), o1.size() * sizeof(float)) == 0);
}

TEST_CASE("decode of zero latent with zero biases is zero") {
    Rng rng(4);
    Generator g;
    g.cfg = ModelConfig::desk();
    g.init(rng);  // biases start at zero
    Tensor c({16, 8, 8}, 0.0f);
    Tensor out = g.decode(c);
    for (size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0f);
}

TEST_CASE("encode rejects wrong extents") {
    Rng rng(5);
    Generator g;
    g.cfg = ModelConfig::desk();
    g.init(rng);
    CHECK_THROWS_AS((void)g.encode(Tensor({3, 16, 16}, 0.0f)), ShapeError);
    CHECK_THROWS_AS((void)g.decode(Tensor({16, 4, 4}, 0.0f)), ShapeError);
}

TEST_CASE("generate passes a finite-difference probe at micro scale") {
    Rng rng(6);
    GeneratorT<double> g;
    g.cfg = ModelConfig::micro();
    g.init(rng);
    Tensor64 y = random_image<double>(3, 16, rng);
    auto probe = [&](TensorT<double>* slot) {
        TensorT<double> orig = *slot;
        double err = finite_diff_check(
            [&, slot](const Tensor64& w) {
                *slot = w;
                return sum_all(g.generate(y));
            },
            orig, 1e-5, 6);
        *slot = orig;
        return err;
    };
    CHECK(probe(&g.stem.w) < 1e-3);
    CHECK(probe(&g.caps.transform) < 1e-3);
    CHECK(probe(&g.dec_out.w) < 1e-3);
    CHECK(probe(&g.enc[0].res.c1.w) < 1e-3);
}

TEST_CASE("gradients flow into every generator parameter") {
    Rng rng(7);
    GeneratorT<double> g;
    g.cfg = ModelConfig::micro();
    g.init(rng);
    Tensor64 y = random_image<double>(3, 16, rng);
    TapeT<double> tape;
    {
        TapeScope<double> scope(tape);
        tape.backward(sum_all(g.generate(y)));
    }
    int missing = 0;
    g.visit([&](const std::string& name, TensorT<double>& t) {
        if (!tape.grad(t)) {
            ++missing;
            MESSAGE("no gradient for ", name);
        }
    });
    CHECK(missing == 0);
}

TEST_CASE("patch discriminator: 256 input gives a 30x30 logit grid") {
    Rng rng(8);
    Discriminator d;
    d.init(3, {64, 128, 256, 512}, rng);
    Tensor img = random_image<float>(3, 256, rng);
    Tensor logits = d(img);
    CHECK(logits.shape() == Shape{30, 30});
}

TEST_CASE("patch discriminator: desk input gives a small grid, not a scalar") {
    Rng rng(9);
    Discriminator d;
    d.init(3, ModelConfig::desk().disc_channels, rng);
    Tensor img = random_image<float>(3, 32, rng);
    Tensor logits = d(img);
    REQUIRE(logits.rank() == 2);
    CHECK(logits.dim(0) > 1);
    CHECK(logits.dim(1) > 1);
}

TEST_CASE("patch discriminator: zero weights give constant logits") {
    Rng rng(10);
    Discriminator d;
    d.init(3, ModelConfig::desk().disc_channels, rng);
    d.visit([](const std::string&, Tensor& t) { std::fill(t.data(), t.data() + t.size(), 0.0f); });
    Tensor img = random_image<float>(3, 32, rng);
    Tensor logits = d(img);
    for (size_t i = 0; i < logits.size(); ++i) CHECK(logits[i] == 0.0f);
}

TEST_CASE("discriminator mean logit passes a finite-difference probe") {
    Rng rng(11);
    DiscriminatorT<double> d;
    d.init(3, {4, 6, 6, 8}, rng);
    Tensor64 img = random_image<double>(3, 32, rng);
    auto probe = [&](TensorT<double>* slot) {
        TensorT<double> orig = *slot;
        double err = finite_diff_check(
            [&, slot](const Tensor64& w) {
                *slot = w;
                return mean_all(d(img));
            },
            orig, 1e-5, 6);
        *slot = orig;
        return err;
    };
    CHECK(probe(&d.convs[0].w) < 1e-3);
    CHECK(probe(&d.convs[4].w) < 1e-3);
}

TEST_CASE("latent codec: payload bytes and bit-identical roundtrip") {
    // full-scale latent: 256*16*16 floats = 262144 bytes
    Rng rng(12);
    LatentCode code;
    code.shape = {256, 16, 16};
    code.payload.resize(shape_numel(code.shape));
    for (float& v : code.payload) v = static_cast<float>(rng.uniform(-3.0, 3.0));
    CHECK(code.payload_bytes() == 262144);

    auto bytes = serialize_latent(code);
    LatentCode back = deserialize_latent(bytes.data(), bytes.size());
    CHECK(back.shape == code.shape);
    CHECK(std::memcmp(back.payload.data(), code.payload.data(), code.payload_bytes()) == 0);
    auto bytes2 = serialize_latent(back);
    CHECK(bytes2 == bytes);
}

TEST_CASE("latent codec: corrupted inputs raise format errors") {
    LatentCode code;
    code.shape = {2, 3};
    code.payload.assign(6, 1.0f);
    auto bytes = serialize_latent(code);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 5);
    CHECK_THROWS_AS((void)deserialize_latent(truncated.data(), truncated.size()), FormatError);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS((void)deserialize_latent(bad_magic.data(), bad_magic.size()), FormatError);

    auto padded = bytes;
    padded.push_back(0);
    CHECK_THROWS_AS((void)deserialize_latent(padded.data(), padded.size()), FormatError);
}

TEST_CASE("compression_factor") {
    CHECK(compression_factor({3, 256, 256}, {256, 16, 16}) == 3.0);
    CHECK(compression_factor({7, 9}, {7, 9}) == 1.0);
    // element-count ratio for the wider-latent comparison configuration
    CHECK(compression_factor({3, 256, 256}, {116, 72, 32}) ==
          doctest::Approx(196608.0 / 267264.0).epsilon(1e-12));
    CHECK_THROWS_AS((void)compression_factor({}, {1}), ContractError);
}

TEST_CASE("compress/decompress equals generate, bitwise") {
    Rng rng(13);
    Generator g;
    g.cfg = ModelConfig::desk();
    g.init(rng);
    Tensor y = random_image<float>(3, 32, rng);
    LatentCode code = compress(g, y);
    CHECK(code.shape == Shape{16, 8, 8});
    Tensor via_codec = decompress(g, code);
    Tensor direct = g.generate(y);
    REQUIRE(via_codec.shape() == direct.shape());
    CHECK(std::memcmp(via_codec.data(), direct.data(), direct.size() * sizeof(float)) == 0);
}

TEST_CASE("decoder reconstructs from the latent alone") {
    // decode() only touches capsule/decoder weights: zeroing the encoder
    // after compress() must not change the reconstruction
    Rng rng(14);
    Generator g;
    g.cfg = ModelConfig::desk();
    g.init(rng);
    Tensor y = random_image<float>(3, 32, rng);
    LatentCode code = compress(g, y);
    Tensor before = decompress(g, code);
    g.stem.w = Tensor(g.stem.w.shape(), 0.0f);
    for (auto& b : g.enc) {
        b.res.c1.w = Tensor(b.res.c1.w.shape(), 0.0f);
        b.res.c2.w = Tensor(b.res.c2.w.shape(), 0.0f);
    }
    g.enc_out.w = Tensor(g.enc_out.w.shape(), 0.0f);
    Tensor after = decompress(g, code);
    CHECK(std::memcmp(before.data(), after.data(), after.size() * sizeof(float)) == 0);
}
