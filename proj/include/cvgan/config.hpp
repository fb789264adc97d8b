#pragma once

#include <map>
#include <string>

#include "cvgan/train.hpp"

namespace cvgan {

using KvMap = std::map<std::string, std::string>;

// Plain key=value text; '#' starts a comment, blank lines ignored.
KvMap parse_config_file(const std::string& path);
KvMap parse_config_text(const std::string& text);

// Options a training run needs beyond TrainConfig itself.
struct TrainRunOptions {
    TrainConfig train;
    std::string data_dir;
    int holdout = 0;  // pairs held out from the end of the shuffled order
    std::string resume;
    bool reinit_disc = false;
};

// Applies recognized keys; throws ConfigError naming the first unknown key.
void apply_run_config(TrainRunOptions& opt, const KvMap& kv);

// The resolved configuration as key=value lines, logged by every run.
std::string resolved_run_config(const TrainRunOptions& opt);

ModelConfig preset_by_name(const std::string& name);  // paper | desk | micro

}  // namespace cvgan
