#pragma once

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cvgan/capsule.hpp"
#include "cvgan/ops.hpp"
#include "cvgan/rng.hpp"

// Generator = encoder -> capsule layer -> decoder, plus a patch discriminator.
// Encoder and decoder share no weights and no skip connections, so the decoder
// can reconstruct from a stored latent alone.

namespace cvgan {

struct ModelConfig {
    int in_channels = 3;
    int extent = 256;                // square input
    std::vector<int> channels;       // encoder block output channels
    std::vector<int> downsample;     // 0/1 per block (conv stride 2 after the block body)
    std::vector<int> attention;      // 0/1 per block
    int latent_channels = 256;       // c_z == c_C
    CapsuleLayerConfig capsule;
    std::vector<int> disc_channels;  // four conv layers before the logit conv

    static ModelConfig paper() {
        ModelConfig c;
        c.extent = 256;
        c.channels = {32, 32, 64, 64, 128, 128};
        c.downsample = {1, 1, 1, 1, 0, 0};
        c.attention = {0, 0, 0, 1, 1, 1};
        c.latent_channels = 256;
        c.capsule = CapsuleLayerConfig{32, 16, 64, 3, 8, false};
        c.disc_channels = {64, 128, 256, 512};
        return c;
    }

    static ModelConfig desk() {
        ModelConfig c;
        c.extent = 32;
        c.channels = {12, 12};
        c.downsample = {1, 1};
        c.attention = {0, 1};
        c.latent_channels = 16;
        c.capsule = CapsuleLayerConfig{4, 4, 8, 3, 2, false};
        c.disc_channels = {8, 16, 32, 32};
        return c;
    }

    // Small enough for exhaustive finite-difference probes in unit tests.
    static ModelConfig micro() {
        ModelConfig c;
        c.extent = 16;
        c.channels = {6};
        c.downsample = {1};
        c.attention = {1};
        c.latent_channels = 8;
        c.capsule = CapsuleLayerConfig{2, 3, 4, 3, 3, false};
        c.disc_channels = {4, 6, 6, 8};
        return c;
    }

    int block_count() const { return static_cast<int>(channels.size()); }

    int latent_extent() const {
        int e = extent;
        for (int d : downsample)
            if (d) e /= 2;
        return e;
    }

    void validate() const {
        if (channels.empty() || downsample.size() != channels.size() || attention.size() != channels.size())
            throw ConfigError("model config: channels/downsample/attention lengths disagree");
        if (disc_channels.size() != 4) throw ConfigError("model config: discriminator needs 4 channel entries");
        if (extent < 4 || in_channels < 1 || latent_channels < 1) throw ConfigError("model config: bad extents");
        int e = latent_extent();
        if (capsule.kernel > e) throw ConfigError("model config: capsule kernel exceeds latent extent");
    }

    std::string canonical() const {
        std::ostringstream os;
        os << "in=" << in_channels << ";extent=" << extent << ";latent=" << latent_channels << ";ch=";
        for (int v : channels) os << v << ",";
        os << ";down=";
        for (int v : downsample) os << v << ",";
        os << ";attn=";
        for (int v : attention) os << v << ",";
        os << ";caps=" << capsule.beta << "," << capsule.d_u << "," << capsule.d_a << "," << capsule.alpha
           << "," << capsule.kernel << "," << (capsule.detach_coupling ? 1 : 0) << ";disc=";
        for (int v : disc_channels) os << v << ",";
        return os.str();
    }
};

// ---------------------------------------------------------------------------
// parameter blocks
// ---------------------------------------------------------------------------

template <typename T>
struct ConvP {
    TensorT<T> w, b;

    // He init scaled by gain; residual tails and the output conv use a small
    // gain so the untrained network starts close to an identity with outputs
    // near zero (there is no normalization layer to absorb bad scales).
    void init(int ci, int co, int k, Rng& rng, double gain = 1.0) {
        double std = gain * std::sqrt(2.0 / (static_cast<double>(ci) * k * k));
        w = TensorT<T>({co, ci, k, k});
        for (size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.normal(0.0, std));
        w.set_requires_grad(true);
        b = TensorT<T>({co}, T(0));
        b.set_requires_grad(true);
    }

    TensorT<T> operator()(const TensorT<T>& x, int stride, int pad) const {
        return add_channel_bias(conv2d(x, w, stride, pad), b);
    }

    template <typename F>
    void visit(const std::string& p, F&& f) {
        f(p + ".w", w);
        f(p + ".b", b);
    }
};

template <typename T>
struct ResBlockP {
    ConvP<T> c1, c2;
    std::optional<ConvP<T>> skip;  // 1x1 when channel count changes

    void init(int ci, int co, Rng& rng) {
        c1.init(ci, co, 3, rng);
        c2.init(co, co, 3, rng, 0.1);  // near-identity start
        if (ci != co) {
            skip.emplace();
            skip->init(ci, co, 1, rng);
        } else {
            skip.reset();
        }
    }

    TensorT<T> operator()(const TensorT<T>& x) const {
        TensorT<T> h = c2(swish(c1(swish(x), 1, 1)), 1, 1);
        TensorT<T> s = skip ? (*skip)(x, 1, 0) : x;
        return add(h, s);
    }

    template <typename F>
    void visit(const std::string& p, F&& f) {
        c1.visit(p + ".c1", f);
        c2.visit(p + ".c2", f);
        if (skip) skip->visit(p + ".skip", f);
    }
};

// Single-head dot-product attention over flattened spatial positions,
// residual around the input.
template <typename T>
struct AttnP {
    TensorT<T> wq, bq, wk, bk, wv, bv, wp, bp;  // [C,C] projections

    void init(int c, Rng& rng) {
        auto mk = [&](TensorT<T>& w, TensorT<T>& b, double gain) {
            double std = gain * std::sqrt(1.0 / static_cast<double>(c));
            w = TensorT<T>({c, c});
            for (size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.normal(0.0, std));
            w.set_requires_grad(true);
            b = TensorT<T>({c}, T(0));
            b.set_requires_grad(true);
        };
        mk(wq, bq, 1.0);
        mk(wk, bk, 1.0);
        mk(wv, bv, 1.0);
        mk(wp, bp, 0.1);  // residual branch starts small
    }

    TensorT<T> operator()(const TensorT<T>& x) const {
        const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
        TensorT<T> xm = reshape(x, {c, h * w});
        TensorT<T> q = add_channel_bias(matmul(wq, xm), bq);
        TensorT<T> k = add_channel_bias(matmul(wk, xm), bk);
        TensorT<T> v = add_channel_bias(matmul(wv, xm), bv);
        TensorT<T> scores = mul_scalar(matmul(q, k, true, false), static_cast<T>(1.0 / std::sqrt(double(c))));
        TensorT<T> attn = softmax(scores, 1);                     // rows: query positions
        TensorT<T> o = matmul(v, attn, false, true);              // o[c,n] = sum_m v[c,m] attn[n,m]
        TensorT<T> proj = add_channel_bias(matmul(wp, o), bp);
        return reshape(add(xm, proj), {c, h, w});
    }

    template <typename F>
    void visit(const std::string& p, F&& f) {
        f(p + ".q.w", wq);
        f(p + ".q.b", bq);
        f(p + ".k.w", wk);
        f(p + ".k.b", bk);
        f(p + ".v.w", wv);
        f(p + ".v.b", bv);
        f(p + ".proj.w", wp);
        f(p + ".proj.b", bp);
    }
};

template <typename T>
struct EncBlockT {
    ResBlockP<T> res;
    std::optional<AttnP<T>> attn;
    std::optional<ConvP<T>> down;
};

template <typename T>
struct DecBlockT {
    ResBlockP<T> res;
    std::optional<AttnP<T>> attn;
    std::optional<ConvP<T>> up;  // conv after nearest-neighbor 2x
};

// ---------------------------------------------------------------------------
// generator
// ---------------------------------------------------------------------------

template <typename T>
struct GeneratorT {
    ModelConfig cfg;
    ConvP<T> stem;
    std::vector<EncBlockT<T>> enc;
    ConvP<T> enc_out;
    CapsuleLayerT<T> caps;
    ConvP<T> dec_in;
    std::vector<DecBlockT<T>> dec;  // reverse block order
    ConvP<T> dec_out;

    void init(Rng& rng) {
        cfg.validate();
        const int nb = cfg.block_count();
        stem.init(cfg.in_channels, cfg.channels[0], 3, rng);
        enc.assign(static_cast<size_t>(nb), {});
        int prev = cfg.channels[0];
        for (int b = 0; b < nb; ++b) {
            int ch = cfg.channels[static_cast<size_t>(b)];
            enc[static_cast<size_t>(b)].res.init(prev, ch, rng);
            if (cfg.attention[static_cast<size_t>(b)]) {
                enc[static_cast<size_t>(b)].attn.emplace();
                enc[static_cast<size_t>(b)].attn->init(ch, rng);
            }
            if (cfg.downsample[static_cast<size_t>(b)]) {
                enc[static_cast<size_t>(b)].down.emplace();
                enc[static_cast<size_t>(b)].down->init(ch, ch, 3, rng);
            }
            prev = ch;
        }
        enc_out.init(prev, cfg.latent_channels, 3, rng);
        caps.cfg = cfg.capsule;
        caps.init(cfg.latent_channels, cfg.latent_channels, rng);
        dec_in.init(cfg.latent_channels, cfg.channels[static_cast<size_t>(nb - 1)], 3, rng);
        dec.assign(static_cast<size_t>(nb), {});
        prev = cfg.channels[static_cast<size_t>(nb - 1)];
        for (int b = nb - 1; b >= 0; --b) {
            auto& blk = dec[static_cast<size_t>(nb - 1 - b)];
            int ch = cfg.channels[static_cast<size_t>(b)];
            blk.res.init(prev, ch, rng);
            if (cfg.attention[static_cast<size_t>(b)]) {
                blk.attn.emplace();
                blk.attn->init(ch, rng);
            }
            if (cfg.downsample[static_cast<size_t>(b)]) {
                blk.up.emplace();
                blk.up->init(ch, ch, 3, rng);
            }
            prev = ch;
        }
        dec_out.init(cfg.channels[0], cfg.in_channels, 3, rng, 0.05);
    }

    TensorT<T> encode(const TensorT<T>& y) const {
        if (y.rank() != 3 || y.dim(0) != cfg.in_channels || y.dim(1) != cfg.extent || y.dim(2) != cfg.extent)
            throw ShapeError("encode: expected input " + std::to_string(cfg.in_channels) + "x" +
                             std::to_string(cfg.extent) + "x" + std::to_string(cfg.extent) + ", got " +
                             shape_str(y.shape()));
        TensorT<T> x = stem(y, 1, 1);
        for (const auto& b : enc) {
            x = b.res(x);
            if (b.attn) x = (*b.attn)(x);
            if (b.down) x = (*b.down)(x, 2, 1);
        }
        return enc_out(x, 1, 1);
    }

    TensorT<T> quantize(const TensorT<T>& z, RoutingTrace<T>* trace = nullptr) const {
        return capsule_forward(z, caps, trace);
    }

    TensorT<T> decode(const TensorT<T>& c) const {
        int le = cfg.latent_extent();
        if (c.rank() != 3 || c.dim(0) != cfg.latent_channels || c.dim(1) != le || c.dim(2) != le)
            throw ShapeError("decode: expected " + std::to_string(cfg.latent_channels) + "x" +
                             std::to_string(le) + "x" + std::to_string(le) + ", got " + shape_str(c.shape()));
        TensorT<T> x = dec_in(c, 1, 1);
        for (const auto& b : dec) {
            x = b.res(x);
            if (b.attn) x = (*b.attn)(x);
            if (b.up) x = (*b.up)(upsample_nearest2(x), 1, 1);
        }
        return dec_out(x, 1, 1);
    }

    TensorT<T> generate(const TensorT<T>& y) const { return decode(quantize(encode(y))); }

    template <typename F>
    void visit(F&& f) {
        stem.visit("g.stem", f);
        for (size_t b = 0; b < enc.size(); ++b) {
            std::string p = "g.enc" + std::to_string(b);
            enc[b].res.visit(p + ".res", f);
            if (enc[b].attn) enc[b].attn->visit(p + ".attn", f);
            if (enc[b].down) enc[b].down->visit(p + ".down", f);
        }
        enc_out.visit("g.enc_out", f);
        caps.visit("g.caps", f);
        dec_in.visit("g.dec_in", f);
        for (size_t b = 0; b < dec.size(); ++b) {
            std::string p = "g.dec" + std::to_string(b);
            dec[b].res.visit(p + ".res", f);
            if (dec[b].attn) dec[b].attn->visit(p + ".attn", f);
            if (dec[b].up) dec[b].up->visit(p + ".up", f);
        }
        dec_out.visit("g.dec_out", f);
    }
};

// ---------------------------------------------------------------------------
// patch discriminator
// ---------------------------------------------------------------------------

// Four strided/unit-stride 4x4 convs with leaky activations, then a 1-channel
// logit conv; emits a spatial grid of real/fake logits.
template <typename T>
struct DiscriminatorT {
    std::vector<ConvP<T>> convs;  // d0 s2, d1 s2, d2 s2, d3 s1, logit s1
    int in_channels = 3;

    void init(int in_ch, const std::vector<int>& ch, Rng& rng) {
        if (ch.size() != 4) throw ConfigError("discriminator: need 4 channel entries");
        in_channels = in_ch;
        convs.assign(5, {});
        convs[0].init(in_ch, ch[0], 4, rng);
        convs[1].init(ch[0], ch[1], 4, rng);
        convs[2].init(ch[1], ch[2], 4, rng);
        convs[3].init(ch[2], ch[3], 4, rng);
        convs[4].init(ch[3], 1, 4, rng);
    }

    // logit map [h', w']
    TensorT<T> operator()(const TensorT<T>& img) const {
        if (img.rank() != 3 || img.dim(0) != in_channels)
            throw ShapeError("discriminate: expected [" + std::to_string(in_channels) + ",H,W], got " +
                             shape_str(img.shape()));
        const T slope = static_cast<T>(0.2);
        TensorT<T> x = leaky_relu(convs[0](img, 2, 1), slope);
        x = leaky_relu(convs[1](x, 2, 1), slope);
        x = leaky_relu(convs[2](x, 2, 1), slope);
        x = leaky_relu(convs[3](x, 1, 1), slope);
        x = convs[4](x, 1, 1);
        return reshape(x, {x.dim(1), x.dim(2)});
    }

    template <typename F>
    void visit(F&& f) {
        for (size_t i = 0; i < convs.size(); ++i) convs[i].visit("d.conv" + std::to_string(i), f);
    }
};

using Generator = GeneratorT<float>;
using Discriminator = DiscriminatorT<float>;

}  // namespace cvgan
