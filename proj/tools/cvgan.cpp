#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cvgan/checkpoint.hpp"
#include "cvgan/config.hpp"
#include "cvgan/degrade.hpp"
#include "cvgan/gradcheck.hpp"
#include "cvgan/image_io.hpp"
#include "cvgan/latent.hpp"
#include "cvgan/metrics.hpp"
#include "cvgan/train.hpp"

namespace fs = std::filesystem;
using namespace cvgan;

namespace {

struct CheckFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::string> list_images(const fs::path& dir) {
    if (!fs::exists(dir)) throw IoError("directory does not exist: " + dir.string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        if (ext == ".png" || ext == ".ppm") names.push_back(e.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

Generator load_generator(const std::string& ckpt_path, const ModelConfig& mc) {
    CheckpointData data = load_checkpoint(ckpt_path);
    if (data.config_hash != fnv1a(mc.canonical()))
        throw ConfigError("checkpoint " + ckpt_path + " does not match the requested model preset");
    Generator g;
    g.cfg = mc;
    Rng rng(0);
    g.init(rng);
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : data.sections) by_name.emplace(name, &t);
    bool missing = false;
    g.visit([&](const std::string& name, Tensor& t) {
        auto it = by_name.find(name);
        if (it == by_name.end() || it->second->shape() != t.shape()) {
            missing = true;
            return;
        }
        std::copy(it->second->data(), it->second->data() + t.size(), t.data());
    });
    if (missing) throw FormatError("checkpoint " + ckpt_path + " is missing generator sections");
    return g;
}

int run_degrade(int synthetic, const std::string& in_dir, const std::string& preset_name_s,
                uint64_t seed, const std::string& out_dir, int size, const std::string& format) {
    WaterPreset preset = parse_preset(preset_name_s);
    fs::create_directories(fs::path(out_dir) / "clean");
    fs::create_directories(fs::path(out_dir) / "degraded");
    std::cout << "config: mode=" << (synthetic > 0 ? "synthetic" : "directory")
              << " preset=" << preset_name_s << " seed=" << seed << " out=" << out_dir
              << " size=" << size << " format=" << format << "\n";
    int written = 0;
    if (synthetic > 0) {
        for (int i = 0; i < synthetic; ++i) {
            SynthPair pair = synth_pair(Rng::mix(seed, static_cast<uint64_t>(i)), preset, size);
            char name[64];
            std::snprintf(name, sizeof(name), "pair_%05d.%s", i, format.c_str());
            write_image((fs::path(out_dir) / "clean" / name).string(), pair.clean);
            write_image((fs::path(out_dir) / "degraded" / name).string(), pair.degraded);
            ++written;
        }
    } else {
        auto names = list_images(in_dir);
        for (size_t i = 0; i < names.size(); ++i) {
            Image clean = read_image((fs::path(in_dir) / names[i]).string());
            DegradationParams params =
                sample_params(Rng::mix(seed, static_cast<uint64_t>(i)), preset, clean.h, clean.w);
            Image deg = degrade(clean, params);
            write_image((fs::path(out_dir) / "clean" / names[i]).string(), clean);
            write_image((fs::path(out_dir) / "degraded" / names[i]).string(), deg);
            ++written;
        }
    }
    std::cout << "wrote " << written << " pairs under " << out_dir << "\n";
    return 0;
}

int run_train(TrainRunOptions opt) {
    if (opt.data_dir.empty()) throw ConfigError("train: data_dir is required (config key data_dir or --data)");
    std::cout << "resolved config:\n" << resolved_run_config(opt);
    PairedDataset ds = load_dataset(opt.data_dir, opt.train.model.extent, opt.train.seed);
    for (const auto& s : ds.skipped) std::cout << "skipped (unmatched): " << s << "\n";
    if (opt.holdout < 0 || static_cast<size_t>(opt.holdout) >= ds.pairs.size())
        throw ConfigError("train: holdout must be smaller than the dataset");
    TensorPairs pairs = load_tensors(ds);
    if (opt.holdout > 0) {
        size_t keep = pairs.size() - static_cast<size_t>(opt.holdout);
        pairs.degraded.resize(keep);
        pairs.clean.resize(keep);
        pairs.names.resize(keep);
    }
    Trainer trainer(opt.train);
    if (!opt.resume.empty())
        trainer.load(opt.resume, opt.reinit_disc);
    else
        trainer.init();
    auto records = trainer.run(pairs);
    if (!records.empty()) {
        const auto& last = records.back().loss;
        std::cout << "finished at step " << records.back().step << ": rec=" << last.rec
                  << " gan_g=" << last.gan_g << " gan_d=" << last.gan_d << " gdl=" << last.gdl
                  << " lambda=" << last.lambda << " total=" << last.total << "\n";
    }
    if (!opt.train.out_dir.empty())
        std::cout << "history: " << (fs::path(opt.train.out_dir) / "history.csv").string() << "\n";
    return 0;
}

int run_enhance(const std::string& ckpt, const std::string& preset, const std::string& in_dir,
                const std::string& out_dir) {
    Generator g = load_generator(ckpt, preset_by_name(preset));
    fs::create_directories(out_dir);
    std::cout << "config: ckpt=" << ckpt << " preset=" << preset << " in=" << in_dir
              << " out=" << out_dir << "\n";
    for (const auto& name : list_images(in_dir)) {
        Image img = read_image((fs::path(in_dir) / name).string());
        write_image((fs::path(out_dir) / name).string(), enhance_image(g, img));
    }
    return 0;
}

int run_compress(const std::string& ckpt, const std::string& preset, const std::string& img_path,
                 std::string out_path) {
    Generator g = load_generator(ckpt, preset_by_name(preset));
    if (out_path.empty()) out_path = img_path + ".lat";
    Image img = read_image(img_path);
    if (img.h != g.cfg.extent || img.w != g.cfg.extent)
        img = resize_bilinear(img, g.cfg.extent, g.cfg.extent);
    LatentCode code = compress(g, image_to_tensor(img));
    save_latent(out_path, code);
    Shape in_shape{3, g.cfg.extent, g.cfg.extent};
    std::cout << "config: ckpt=" << ckpt << " preset=" << preset << " img=" << img_path
              << " out=" << out_path << "\n";
    std::cout << "latent " << shape_str(code.shape) << ", payload " << code.payload_bytes()
              << " bytes, compression factor " << compression_factor(in_shape, code.shape) << "\n";
    return 0;
}

int run_decompress(const std::string& ckpt, const std::string& preset, const std::string& latent_path,
                   std::string out_path) {
    Generator g = load_generator(ckpt, preset_by_name(preset));
    if (out_path.empty()) out_path = latent_path + ".png";
    LatentCode code = load_latent(latent_path);
    Tensor out = decompress(g, code);
    write_image(out_path, tensor_to_image(out).clamped());
    std::cout << "config: ckpt=" << ckpt << " preset=" << preset << " latent=" << latent_path
              << " out=" << out_path << "\n";
    return 0;
}

int run_evaluate(std::string images_dir, std::string reference_dir, const std::string& pairs_dir,
                 const std::string& metrics_csv, const std::string& out_dir) {
    if (!pairs_dir.empty()) {
        images_dir = (fs::path(pairs_dir) / "degraded").string();
        reference_dir = (fs::path(pairs_dir) / "clean").string();
    }
    if (images_dir.empty()) throw ConfigError("evaluate: need --images or --pairs");
    bool want_psnr = metrics_csv.find("psnr") != std::string::npos;
    bool want_uciqe = metrics_csv.find("uciqe") != std::string::npos;
    bool want_uiqm = metrics_csv.find("uiqm") != std::string::npos;
    bool want_edge = metrics_csv.find("edge") != std::string::npos;
    std::cout << "config: images=" << images_dir << " reference=" << reference_dir
              << " metrics=" << metrics_csv << " out=" << out_dir << "\n";

    MetricReport report;
    for (const auto& name : list_images(images_dir)) {
        Image img = read_image((fs::path(images_dir) / name).string());
        MetricRecord row;
        row.path = name;
        if (want_uciqe) {
            row.uciqe = uciqe(img);
            row.has_uciqe = true;
        }
        if (want_uiqm) {
            row.uicm = uicm(img);
            row.uism = uism(img);
            row.uiconm = uiconm(img);
            row.uiqm = uiqm(img);
            row.has_uiqm = true;
        }
        bool have_ref = false;
        Image ref;
        if (!reference_dir.empty() && fs::exists(fs::path(reference_dir) / name)) {
            ref = read_image((fs::path(reference_dir) / name).string());
            have_ref = ref.h == img.h && ref.w == img.w;
        }
        if (want_psnr && have_ref) {
            row.psnr = psnr(img, ref);
            row.has_psnr = true;
        }
        if (want_edge && have_ref) {
            row.edge_l2 = edge_distance(canny(img), canny(ref));
            row.has_edge = true;
        }
        report.rows.push_back(std::move(row));
    }
    report.finalize();
    report.write_table(std::cout);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream table((fs::path(out_dir) / "report.txt").string());
        report.write_table(table);
        std::ofstream kv((fs::path(out_dir) / "report.kv").string());
        report.write_kv(kv);
        std::cout << "reports written under " << out_dir << "\n";
    }
    return 0;
}

int run_gradcheck(const std::string& preset) {
    ModelConfig mc = preset_by_name(preset);
    std::cout << "config: preset=" << preset << "\n";

    // routing differentiability at the acceptance dimensions
    Rng rng(42);
    const int beta = mc.capsule.beta, da = mc.capsule.d_a, L = 9;
    Tensor64 uhat({beta, beta, da, L});
    for (size_t i = 0; i < uhat.size(); ++i) uhat[i] = rng.uniform(-1.0, 1.0);
    Tensor64 wgt({beta, da, L});
    for (size_t i = 0; i < wgt.size(); ++i) wgt[i] = rng.uniform(-1.0, 1.0);
    double route_err = finite_diff_check(
        [&](const Tensor64& u) { return sum_all(mul(route(u, mc.capsule.alpha), wgt)); }, uhat);
    std::printf("route          max rel err %.3e (tolerance 1e-4)\n", route_err);

    // end-to-end probe through a weight slice at each stage of the generator
    GeneratorT<double> gen;
    gen.cfg = mc;
    Rng grng(7);
    gen.init(grng);
    Tensor64 y({3, mc.extent, mc.extent});
    for (size_t i = 0; i < y.size(); ++i) y[i] = grng.uniform(0.0, 1.0);
    auto probe = [&](TensorT<double>* slot) {
        TensorT<double> orig = *slot;
        double err = finite_diff_check(
            [&, slot](const Tensor64& w) {
                *slot = w;
                return sum_all(gen.generate(y));
            },
            orig, 1e-5, 8);
        *slot = orig;
        return err;
    };
    double gen_err = 0.0;
    gen_err = std::max(gen_err, probe(&gen.stem.w));
    gen_err = std::max(gen_err, probe(&gen.caps.transform));
    gen_err = std::max(gen_err, probe(&gen.dec_out.w));
    std::printf("generate probe max rel err %.3e (tolerance 1e-3)\n", gen_err);

    if (route_err >= 1e-4 || gen_err >= 1e-3)
        throw CheckFailure("gradient check exceeded tolerance");
    std::cout << "gradcheck passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"capsule-quantized autoencoder for underwater image enhancement"};
    app.require_subcommand(1);

    // degrade
    auto* cmd_deg = app.add_subcommand("degrade", "synthesize paired clean/degraded data");
    int synthetic = 0, size = 32;
    std::string in_dir, preset_water = "bluish", out_dir, format = "png";
    uint64_t seed = 0;
    cmd_deg->add_option("--synthetic", synthetic, "generate N procedural pairs");
    cmd_deg->add_option("--in", in_dir, "degrade the images found in this directory");
    cmd_deg->add_option("--preset", preset_water, "water preset: bluish|greenish|hazy");
    cmd_deg->add_option("--seed", seed, "random seed");
    cmd_deg->add_option("--out", out_dir, "output directory")->required();
    cmd_deg->add_option("--size", size, "extent of synthetic images");
    cmd_deg->add_option("--format", format, "png|ppm");

    // train
    auto* cmd_tr = app.add_subcommand("train", "run a training phase");
    std::string config_path, tr_seed, tr_preset, tr_out, tr_steps, tr_data, tr_phase, tr_resume,
        tr_holdout, tr_batch;
    bool tr_without_gdl = false;
    cmd_tr->add_option("--config", config_path, "key=value config file");
    cmd_tr->add_option("--seed", tr_seed, "random seed (overrides config)");
    cmd_tr->add_option("--preset", tr_preset, "model preset: paper|desk|micro");
    cmd_tr->add_option("--out", tr_out, "output directory for history/checkpoints");
    cmd_tr->add_option("--steps", tr_steps, "total optimization steps");
    cmd_tr->add_option("--data", tr_data, "paired dataset directory");
    cmd_tr->add_option("--phase", tr_phase, "pretrain|finetune");
    cmd_tr->add_option("--resume", tr_resume, "checkpoint to resume from");
    cmd_tr->add_option("--holdout", tr_holdout, "pairs excluded from training");
    cmd_tr->add_option("--batch-size", tr_batch, "batch size");
    cmd_tr->add_flag("--without-gdl", tr_without_gdl, "ablation: drop the gdl term");

    // enhance
    auto* cmd_en = app.add_subcommand("enhance", "reconstruct enhanced images");
    std::string en_ckpt, en_preset = "desk", en_in, en_out;
    cmd_en->add_option("--ckpt", en_ckpt)->required();
    cmd_en->add_option("--preset", en_preset, "model preset the checkpoint was trained with");
    cmd_en->add_option("--in", en_in)->required();
    cmd_en->add_option("--out", en_out)->required();

    // compress / decompress
    auto* cmd_co = app.add_subcommand("compress", "store an image as its latent code");
    std::string co_ckpt, co_preset = "desk", co_img, co_out;
    cmd_co->add_option("--ckpt", co_ckpt)->required();
    cmd_co->add_option("--preset", co_preset);
    cmd_co->add_option("--img", co_img)->required();
    cmd_co->add_option("--out", co_out);

    auto* cmd_dc = app.add_subcommand("decompress", "reconstruct an image from a latent code");
    std::string dc_ckpt, dc_preset = "desk", dc_latent, dc_out;
    cmd_dc->add_option("--ckpt", dc_ckpt)->required();
    cmd_dc->add_option("--preset", dc_preset);
    cmd_dc->add_option("--latent", dc_latent)->required();
    cmd_dc->add_option("--out", dc_out);

    // evaluate
    auto* cmd_ev = app.add_subcommand("evaluate", "compute image-quality metrics");
    std::string ev_images, ev_reference, ev_pairs, ev_metrics = "psnr,uciqe,uiqm,edge", ev_out;
    cmd_ev->add_option("--images", ev_images, "directory of images to score");
    cmd_ev->add_option("--reference", ev_reference, "matching ground-truth directory");
    cmd_ev->add_option("--pairs", ev_pairs, "dataset directory with degraded/ and clean/");
    cmd_ev->add_option("--metrics", ev_metrics, "comma list: psnr,uciqe,uiqm,edge");
    cmd_ev->add_option("--out", ev_out, "directory for report.txt / report.kv");

    // gradcheck
    auto* cmd_gc = app.add_subcommand("gradcheck", "finite-difference verification");
    std::string gc_preset = "desk";
    cmd_gc->add_option("--preset", gc_preset, "scale preset: desk|micro|paper");

    try {
        app.parse(argc, argv);

        if (cmd_deg->parsed()) {
            if ((synthetic > 0) == !in_dir.empty())
                throw ConfigError("degrade: use exactly one of --synthetic or --in");
            return run_degrade(synthetic, in_dir, preset_water, seed, out_dir, size, format);
        }
        if (cmd_tr->parsed()) {
            TrainRunOptions opt;
            KvMap kv;
            if (!config_path.empty()) kv = parse_config_file(config_path);
            // flags win over the config file
            if (!tr_seed.empty()) kv["seed"] = tr_seed;
            if (!tr_preset.empty()) kv["preset"] = tr_preset;
            if (!tr_out.empty()) kv["out_dir"] = tr_out;
            if (!tr_steps.empty()) kv["steps"] = tr_steps;
            if (!tr_data.empty()) kv["data_dir"] = tr_data;
            if (!tr_phase.empty()) kv["phase"] = tr_phase;
            if (!tr_resume.empty()) kv["resume"] = tr_resume;
            if (!tr_holdout.empty()) kv["holdout"] = tr_holdout;
            if (!tr_batch.empty()) kv["batch_size"] = tr_batch;
            if (tr_without_gdl) kv["without_gdl"] = "1";
            apply_run_config(opt, kv);
            return run_train(std::move(opt));
        }
        if (cmd_en->parsed()) return run_enhance(en_ckpt, en_preset, en_in, en_out);
        if (cmd_co->parsed()) return run_compress(co_ckpt, co_preset, co_img, co_out);
        if (cmd_dc->parsed()) return run_decompress(dc_ckpt, dc_preset, dc_latent, dc_out);
        if (cmd_ev->parsed()) return run_evaluate(ev_images, ev_reference, ev_pairs, ev_metrics, ev_out);
        if (cmd_gc->parsed()) return run_gradcheck(gc_preset);
        return 1;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const CheckFailure& e) {
        std::cerr << "check failed: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
