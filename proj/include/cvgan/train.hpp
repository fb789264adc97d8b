#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cvgan/dataset.hpp"
#include "cvgan/image.hpp"
#include "cvgan/losses.hpp"
#include "cvgan/model.hpp"

namespace cvgan {

enum class Phase { Pretrain, Finetune };

// Two-phase adversarial training. Pretraining reconstructs the clean image
// from itself; fine-tuning maps the degraded image to its clean pair and adds
// the gradient-difference term. One discriminator update then one generator
// update per step; lambda is recomputed before every generator update and
// enters the update as a constant.
struct TrainConfig {
    Phase phase = Phase::Finetune;
    int batch_size = 6;
    int steps = 2000;
    double lr_g = 1e-3, lr_d = 1e-3;
    double beta1 = 0.5, beta2 = 0.9, adam_eps = 1e-8;
    uint64_t seed = 0;
    ModelConfig model = ModelConfig::desk();
    bool without_gdl = false;      // ablation: drop only the gdl term
    int gamma = 1;                 // gdl exponent
    double delta = 1e-6;           // lambda stabilizer
    double lambda_max = 1e4;
    // Adversarial warm-up from the adopted GAN formulation: the generator's
    // lambda is gated to zero before this step (the discriminator still takes
    // its per-step update).
    int disc_start = 0;
    bool lambda_scales_disc = false;  // printed-objective mode
    bool detach_coupling = false;     // forwarded into the capsule layer
    int checkpoint_every = 0;         // 0: only the final checkpoint
    std::string out_dir;              // when set, history.csv + checkpoints land here

    std::string canonical() const;
    uint64_t config_hash() const;
};

struct StepRecord {
    uint64_t step = 0;  // 1-based, the step just completed
    LossBundle loss;
};

std::string history_header();
std::string history_line(const StepRecord& r);  // step,rec,gan_g,gan_d,gdl,lambda,total

class Trainer {
public:
    explicit Trainer(TrainConfig cfg);

    void init();                                    // fresh seeded weights, step 0
    void load(const std::string& ckpt_path, bool reinit_disc = false);
    void save(const std::string& ckpt_path) const;

    LossBundle train_step(const std::vector<const Tensor*>& inputs,
                          const std::vector<const Tensor*>& targets);

    // Runs cfg.steps total steps (resumes from the current step), assembling
    // batches deterministically from (seed, step). Returns records for the
    // steps executed in this call.
    std::vector<StepRecord> run(const TensorPairs& data);

    Generator& generator() { return gen_; }
    const Generator& generator() const { return gen_; }
    Discriminator& discriminator() { return disc_; }
    uint64_t step() const { return step_; }

private:
    struct AdamMoments {
        std::unordered_map<std::string, std::pair<Tensor, Tensor>> mv;
        uint64_t t = 0;
    };

    using Params = std::vector<std::pair<std::string, Tensor*>>;

    void collect_params();
    static void adam_update(const Params& params,
                            const std::unordered_map<std::string, std::vector<float>>& grads,
                            AdamMoments& moments, double lr, double beta1, double beta2, double eps);

    TrainConfig cfg_;
    Generator gen_;
    Discriminator disc_;
    Params gparams_, dparams_;
    AdamMoments adam_g_, adam_d_;
    uint64_t step_ = 0;
};

// Convenience for the CLI and evaluation: degraded image in, clamped
// reconstruction out.
Image enhance_image(const Generator& g, const Image& img);

}  // namespace cvgan
