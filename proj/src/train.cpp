#include "cvgan/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cvgan/checkpoint.hpp"
#include "cvgan/rng.hpp"

namespace fs = std::filesystem;

namespace cvgan {

std::string TrainConfig::canonical() const {
    std::ostringstream os;
    os << "phase=" << (phase == Phase::Pretrain ? "pretrain" : "finetune") << ";batch=" << batch_size
       << ";lr_g=" << lr_g << ";lr_d=" << lr_d << ";beta1=" << beta1 << ";beta2=" << beta2
       << ";gamma=" << gamma << ";delta=" << delta << ";lambda_max=" << lambda_max
       << ";lsd=" << lambda_scales_disc << ";detach=" << detach_coupling << ";model{" << model.canonical()
       << "}";
    // seed, steps, the gdl ablation flag and output paths do not change what a
    // checkpoint is compatible with
    return os.str();
}

// Checkpoint compatibility is about the model architecture: resuming or
// reloading only needs the weights to fit, not identical hyperparameters.
uint64_t TrainConfig::config_hash() const { return fnv1a(model.canonical()); }

std::string history_header() { return "step,rec,gan_g,gan_d,gdl,lambda,total"; }

std::string history_line(const StepRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                  static_cast<unsigned long long>(r.step), r.loss.rec, r.loss.gan_g, r.loss.gan_d,
                  r.loss.gdl, r.loss.lambda, r.loss.total);
    return buf;
}

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.model.capsule.detach_coupling = cfg_.detach_coupling;
    cfg_.model.validate();
}

void Trainer::init() {
    Rng rng(Rng::mix(cfg_.seed, 0x1417));
    gen_.cfg = cfg_.model;
    gen_.init(rng);
    disc_.init(cfg_.model.in_channels, cfg_.model.disc_channels, rng);
    collect_params();
    adam_g_ = {};
    adam_d_ = {};
    for (auto& [name, t] : gparams_)
        adam_g_.mv.emplace(name, std::make_pair(Tensor(t->shape(), 0.0f), Tensor(t->shape(), 0.0f)));
    for (auto& [name, t] : dparams_)
        adam_d_.mv.emplace(name, std::make_pair(Tensor(t->shape(), 0.0f), Tensor(t->shape(), 0.0f)));
    step_ = 0;
}

void Trainer::collect_params() {
    gparams_.clear();
    dparams_.clear();
    gen_.visit([this](const std::string& name, Tensor& t) { gparams_.emplace_back(name, &t); });
    disc_.visit([this](const std::string& name, Tensor& t) { dparams_.emplace_back(name, &t); });
}

void Trainer::save(const std::string& path) const {
    CheckpointData data;
    data.config_hash = cfg_.config_hash();
    data.step = step_;
    for (const auto& [name, t] : gparams_) data.sections.emplace_back(name, *t);
    for (const auto& [name, t] : dparams_) data.sections.emplace_back(name, *t);
    for (const auto& [name, t] : gparams_) {
        const auto& mv = adam_g_.mv.at(name);
        data.sections.emplace_back("adam_g.m." + name, mv.first);
        data.sections.emplace_back("adam_g.v." + name, mv.second);
    }
    for (const auto& [name, t] : dparams_) {
        const auto& mv = adam_d_.mv.at(name);
        data.sections.emplace_back("adam_d.m." + name, mv.first);
        data.sections.emplace_back("adam_d.v." + name, mv.second);
    }
    save_checkpoint(path, data);
}

void Trainer::load(const std::string& path, bool reinit_disc) {
    CheckpointData data = load_checkpoint(path);
    if (data.config_hash != cfg_.config_hash())
        throw ConfigError("checkpoint " + path + " was produced under a different configuration; refusing to resume");
    init();
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : data.sections) by_name.emplace(name, &t);
    auto restore = [&](const std::string& name, Tensor& dst) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint missing section " + name);
        if (it->second->shape() != dst.shape()) throw FormatError("checkpoint section shape mismatch: " + name);
        std::copy(it->second->data(), it->second->data() + dst.size(), dst.data());
    };
    for (auto& [name, t] : gparams_) restore(name, *t);
    for (auto& [name, t] : gparams_) {
        restore("adam_g.m." + name, adam_g_.mv.at(name).first);
        restore("adam_g.v." + name, adam_g_.mv.at(name).second);
    }
    if (!reinit_disc) {
        for (auto& [name, t] : dparams_) restore(name, *t);
        for (auto& [name, t] : dparams_) {
            restore("adam_d.m." + name, adam_d_.mv.at(name).first);
            restore("adam_d.v." + name, adam_d_.mv.at(name).second);
        }
    }
    step_ = data.step;
    adam_g_.t = step_;
    adam_d_.t = step_;
}

void Trainer::adam_update(const Params& params,
                          const std::unordered_map<std::string, std::vector<float>>& grads,
                          AdamMoments& moments, double lr, double beta1, double beta2, double eps) {
    ++moments.t;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(moments.t));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(moments.t));
    for (const auto& [name, t] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;  // no gradient reached this tensor
        auto& [m, v] = moments.mv.at(name);
        const auto& g = git->second;
        float* pw = t->data();
        float* pm = m.data();
        float* pv = v.data();
        for (size_t i = 0; i < g.size(); ++i) {
            double gi = g[i];
            double mi = beta1 * pm[i] + (1.0 - beta1) * gi;
            double vi = beta2 * pv[i] + (1.0 - beta2) * gi * gi;
            pm[i] = static_cast<float>(mi);
            pv[i] = static_cast<float>(vi);
            double mh = mi / bc1;
            double vh = vi / bc2;
            pw[i] = static_cast<float>(pw[i] - lr * mh / (std::sqrt(vh) + eps));
        }
    }
}

namespace {

double l2_of(const std::vector<float>& v) {
    double acc = 0.0;
    for (float x : v) acc += static_cast<double>(x) * x;
    return std::sqrt(acc);
}

}  // namespace

LossBundle Trainer::train_step(const std::vector<const Tensor*>& inputs,
                               const std::vector<const Tensor*>& targets) {
    if (inputs.empty() || inputs.size() != targets.size())
        throw ContractError("train_step: inputs/targets size mismatch");
    LossBundle bundle;
    const bool use_gdl = cfg_.phase == Phase::Finetune && !cfg_.without_gdl;

    // generator forward for the whole batch on its own tape
    Tape tape_g;
    std::vector<Tensor> fakes;
    std::vector<Tensor> target_stackable;
    {
        TapeScope<float> scope(tape_g);
        for (const Tensor* in : inputs) fakes.push_back(gen_.generate(*in));
    }
    for (const Tensor* t : targets) target_stackable.push_back(*t);

    // In the printed-objective mode lambda must exist before the
    // discriminator sees its (scaled) loss, so the generator backward runs
    // against the pre-update discriminator. Default mode updates D first.
    auto g_losses = [&](LossBundle& b, std::unordered_map<std::string, std::vector<float>>& out_grads) {
        TapeScope<float> scope(tape_g);
        std::vector<Tensor> fake_logits;
        for (const Tensor& f : fakes) fake_logits.push_back(disc_(f));
        Tensor rec = rec_loss(stack0(target_stackable), stack0(fakes));
        Tensor gan_g = mean_all(softplus(mul_scalar(stack0(fake_logits), -1.0f)));
        // The composed objective keeps every term on the per-element scale of
        // the mean-squared rec loss, so the pixel-sum gdl is normalized by the
        // batch element count before it enters the total.
        Tensor gdl_total;
        double gdl_scale = 0.0;
        if (use_gdl) {
            gdl_total = gdl(target_stackable[0], fakes[0], cfg_.gamma);
            for (size_t i = 1; i < fakes.size(); ++i)
                gdl_total = add(gdl_total, gdl(target_stackable[i], fakes[i], cfg_.gamma));
            gdl_scale = 1.0 / (static_cast<double>(fakes.size()) * static_cast<double>(fakes[0].size()));
        }

        auto snapshot = [&](std::unordered_map<std::string, std::vector<float>>& dst, double scale) {
            for (const auto& [name, t] : gparams_) {
                const auto* g = tape_g.grad(*t);
                if (!g) continue;
                auto& acc = dst[name];
                if (acc.empty()) acc.assign(g->size(), 0.0f);
                for (size_t i = 0; i < g->size(); ++i)
                    acc[i] = static_cast<float>(acc[i] + scale * (*g)[i]);
            }
        };

        tape_g.backward(rec);
        double n_rec = 0.0;
        if (const auto* g = tape_g.grad(gen_.dec_out.w)) n_rec = l2_of(*g);
        snapshot(out_grads, 1.0);

        if (step_ < static_cast<uint64_t>(cfg_.disc_start)) {
            b.lambda = 0.0;  // warm-up: adversarial term gated out of the total
        } else {
            tape_g.backward(gan_g);
            double n_gan = 0.0;
            if (const auto* g = tape_g.grad(gen_.dec_out.w)) n_gan = l2_of(*g);
            b.lambda = adaptive_lambda(n_rec, n_gan, cfg_.delta, cfg_.lambda_max);
            snapshot(out_grads, b.lambda);
        }

        if (use_gdl) {
            tape_g.backward(gdl_total);
            snapshot(out_grads, gdl_scale);
            b.gdl = gdl_total.item() * gdl_scale;
        }
        b.rec = rec.item();
        b.gan_g = gan_g.item();
    };

    auto d_update = [&](double lambda_for_d) {
        Tape tape_d;
        TapeScope<float> scope(tape_d);
        std::vector<Tensor> real_logits, fake_logits;
        for (const Tensor* t : targets) real_logits.push_back(disc_(*t));
        for (const Tensor& f : fakes) fake_logits.push_back(disc_(f.detach()));
        auto terms = gan_loss(stack0(real_logits), stack0(fake_logits),
                              static_cast<float>(lambda_for_d), cfg_.lambda_scales_disc);
        bundle.gan_d = terms.d.item();
        tape_d.backward(terms.d);
        std::unordered_map<std::string, std::vector<float>> dgrads;
        for (const auto& [name, t] : dparams_) {
            const auto* g = tape_d.grad(*t);
            if (g) dgrads.emplace(name, *g);
        }
        adam_update(dparams_, dgrads, adam_d_, cfg_.lr_d, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);
    };

    std::unordered_map<std::string, std::vector<float>> ggrads;
    if (cfg_.lambda_scales_disc) {
        g_losses(bundle, ggrads);
        d_update(bundle.lambda);
    } else {
        d_update(1.0);
        g_losses(bundle, ggrads);
    }
    adam_update(gparams_, ggrads, adam_g_, cfg_.lr_g, cfg_.beta1, cfg_.beta2, cfg_.adam_eps);

    bundle.total = cfg_.phase == Phase::Pretrain
                       ? combined_pretrain(bundle.rec, bundle.gan_g, bundle.lambda)
                       : combined_finetune(bundle.rec, bundle.gan_g, bundle.lambda, bundle.gdl);
    ++step_;
    return bundle;
}

std::vector<StepRecord> Trainer::run(const TensorPairs& data) {
    if (data.size() < static_cast<size_t>(cfg_.batch_size))
        throw ContractError("train: dataset smaller than one batch");
    const size_t batches_per_epoch = data.size() / static_cast<size_t>(cfg_.batch_size);

    std::ofstream history;
    if (!cfg_.out_dir.empty()) {
        fs::create_directories(cfg_.out_dir);
        fs::path hp = fs::path(cfg_.out_dir) / "history.csv";
        bool fresh = step_ == 0 || !fs::exists(hp);
        history.open(hp, fresh ? std::ios::trunc : std::ios::app);
        if (!history) throw IoError("cannot write " + hp.string());
        if (fresh) history << history_header() << "\n";
    }

    std::vector<StepRecord> records;
    while (step_ < static_cast<uint64_t>(cfg_.steps)) {
        uint64_t s = step_;  // 0-based index of the step about to run
        uint64_t epoch = s / batches_per_epoch;
        size_t pos = static_cast<size_t>(s % batches_per_epoch) * static_cast<size_t>(cfg_.batch_size);

        // per-epoch permutation derived statelessly so runs are resumable
        std::vector<size_t> perm(data.size());
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        Rng rng(Rng::mix(cfg_.seed, 0xE90C + epoch));
        for (size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

        std::vector<const Tensor*> inputs, targets;
        for (int b = 0; b < cfg_.batch_size; ++b) {
            size_t idx = perm[pos + static_cast<size_t>(b)];
            targets.push_back(&data.clean[idx]);
            inputs.push_back(cfg_.phase == Phase::Pretrain ? &data.clean[idx] : &data.degraded[idx]);
        }

        LossBundle loss = train_step(inputs, targets);
        StepRecord rec{step_, loss};
        records.push_back(rec);
        if (history) history << history_line(rec) << "\n";

        if (!cfg_.out_dir.empty() && cfg_.checkpoint_every > 0 &&
            step_ % static_cast<uint64_t>(cfg_.checkpoint_every) == 0) {
            save((fs::path(cfg_.out_dir) / ("ckpt_" + std::to_string(step_) + ".bin")).string());
        }
    }
    if (!cfg_.out_dir.empty()) save((fs::path(cfg_.out_dir) / "ckpt_final.bin").string());
    return records;
}

Image enhance_image(const Generator& g, const Image& img) {
    Image in = img;
    if (in.h != g.cfg.extent || in.w != g.cfg.extent)
        in = resize_bilinear(in, g.cfg.extent, g.cfg.extent);
    Tensor y = image_to_tensor(in);
    Tensor out = g.generate(y);
    return tensor_to_image(out).clamped();
}

}  // namespace cvgan
