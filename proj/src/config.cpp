#include "cvgan/config.hpp"

#include <fstream>
#include <sstream>

namespace cvgan {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

long parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        long r = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
    }
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

}  // namespace

KvMap parse_config_text(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        kv[key] = value;
    }
    return kv;
}

KvMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

ModelConfig preset_by_name(const std::string& name) {
    if (name == "paper") return ModelConfig::paper();
    if (name == "desk") return ModelConfig::desk();
    if (name == "micro") return ModelConfig::micro();
    throw ConfigError("unknown model preset '" + name + "' (want paper|desk|micro)");
}

void apply_run_config(TrainRunOptions& opt, const KvMap& kv) {
    TrainConfig& t = opt.train;
    for (const auto& [key, v] : kv) {
        if (key == "phase") {
            if (v == "pretrain")
                t.phase = Phase::Pretrain;
            else if (v == "finetune")
                t.phase = Phase::Finetune;
            else
                throw ConfigError("config key 'phase': want pretrain|finetune, got '" + v + "'");
        } else if (key == "batch_size") {
            t.batch_size = static_cast<int>(parse_int(key, v));
            if (t.batch_size < 1) throw ConfigError("config key 'batch_size': must be >= 1");
        } else if (key == "steps") {
            t.steps = static_cast<int>(parse_int(key, v));
        } else if (key == "lr_g") {
            t.lr_g = parse_real(key, v);
            if (!(t.lr_g > 0)) throw ConfigError("config key 'lr_g': must be > 0");
        } else if (key == "lr_d") {
            t.lr_d = parse_real(key, v);
            if (!(t.lr_d > 0)) throw ConfigError("config key 'lr_d': must be > 0");
        } else if (key == "beta1") {
            t.beta1 = parse_real(key, v);
        } else if (key == "beta2") {
            t.beta2 = parse_real(key, v);
        } else if (key == "seed") {
            t.seed = static_cast<uint64_t>(parse_int(key, v));
        } else if (key == "preset") {
            t.model = preset_by_name(v);
        } else if (key == "without_gdl") {
            t.without_gdl = parse_bool(key, v);
        } else if (key == "gamma") {
            t.gamma = static_cast<int>(parse_int(key, v));
        } else if (key == "delta") {
            t.delta = parse_real(key, v);
        } else if (key == "lambda_max") {
            t.lambda_max = parse_real(key, v);
        } else if (key == "disc_start") {
            t.disc_start = static_cast<int>(parse_int(key, v));
        } else if (key == "lambda_scales_disc") {
            t.lambda_scales_disc = parse_bool(key, v);
        } else if (key == "detach_coupling") {
            t.detach_coupling = parse_bool(key, v);
        } else if (key == "checkpoint_every") {
            t.checkpoint_every = static_cast<int>(parse_int(key, v));
        } else if (key == "out_dir") {
            t.out_dir = v;
        } else if (key == "data_dir") {
            opt.data_dir = v;
        } else if (key == "holdout") {
            opt.holdout = static_cast<int>(parse_int(key, v));
        } else if (key == "resume") {
            opt.resume = v;
        } else if (key == "reinit_disc") {
            opt.reinit_disc = parse_bool(key, v);
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
}

std::string resolved_run_config(const TrainRunOptions& opt) {
    const TrainConfig& t = opt.train;
    std::ostringstream os;
    os << "phase=" << (t.phase == Phase::Pretrain ? "pretrain" : "finetune") << "\n";
    os << "batch_size=" << t.batch_size << "\n";
    os << "steps=" << t.steps << "\n";
    os << "lr_g=" << t.lr_g << "\n";
    os << "lr_d=" << t.lr_d << "\n";
    os << "beta1=" << t.beta1 << "\n";
    os << "beta2=" << t.beta2 << "\n";
    os << "seed=" << t.seed << "\n";
    os << "model=" << t.model.canonical() << "\n";
    os << "without_gdl=" << (t.without_gdl ? 1 : 0) << "\n";
    os << "gamma=" << t.gamma << "\n";
    os << "delta=" << t.delta << "\n";
    os << "lambda_max=" << t.lambda_max << "\n";
    os << "disc_start=" << t.disc_start << "\n";
    os << "lambda_scales_disc=" << (t.lambda_scales_disc ? 1 : 0) << "\n";
    os << "detach_coupling=" << (t.detach_coupling ? 1 : 0) << "\n";
    os << "checkpoint_every=" << t.checkpoint_every << "\n";
    os << "out_dir=" << t.out_dir << "\n";
    os << "data_dir=" << opt.data_dir << "\n";
    os << "holdout=" << opt.holdout << "\n";
    os << "resume=" << opt.resume << "\n";
    os << "reinit_disc=" << (opt.reinit_disc ? 1 : 0) << "\n";
    return os.str();
}

}  // namespace cvgan
