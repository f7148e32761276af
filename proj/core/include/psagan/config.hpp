#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "psagan/context_fid.hpp"
#include "psagan/train.hpp"

namespace psagan {

// Resolved run configuration. The on-disk form is a flat key=value file
// ('#' comments and blank lines ignored); every field below has exactly one
// key and unknown keys are rejected, so a config echo is a complete and
// replayable description of a run.
struct RunConfig {
    // data
    std::string dataset;
    std::string dataset_format = "csv";  // csv | jsonlines
    std::string split;                   // train/test boundary timestamp; may be empty
    bool scale_per_series = true;

    // model + training (key names match the TrainConfig fields)
    TrainConfig train;

    // embedding encoder for the distribution score (keys: encoder_*)
    EncoderConfig encoder;

    // scoring
    std::int64_t score_windows = 5120;
    std::int64_t score_repeats = 5;

    // sampling
    std::int64_t sample_count = 64;

    // scenarios
    std::string scenario_kind = "far_forecast";
    std::int64_t scenario_window = 32;
    std::int64_t scenario_n_windows = 7;
    std::int64_t scenario_stretch_len = 50;
    double scenario_fraction = 0.1;
    std::uint64_t scenario_seed = 0;
    std::string scenario_file;

    // artifacts consumed by sample/score/impute/eval
    std::string checkpoint;
    std::string samples;
    std::string encoder_checkpoint;
    bool train_encoder = false;

    // evaluation
    std::string eval_seeds = "0";  // comma-separated
    std::int64_t eval_n_samples = 100;
    std::int64_t eval_ma_window = 10;
    bool eval_baselines = true;
    std::int64_t impute_window = 0;

    std::string out_dir = "out";

    // Throws ConfigError naming the offending field. The generation length is
    // bounded to the supported resolution ladder 16..256.
    void validate() const;

    // Canonical ordered key=value view of every field, defaults resolved.
    std::vector<std::pair<std::string, std::string>> echo() const;
};

// Parses and validates a key=value map; unknown keys and malformed values
// raise ConfigError naming the key.
RunConfig parse_run_config(const std::map<std::string, std::string>& kv);

// Reads a key=value file (IoError if unreadable, ConfigError on bad lines).
std::map<std::string, std::string> read_config_file(const std::string& path);

// Applies one "key=value" override string (ConfigError if there is no '=').
void apply_override(std::map<std::string, std::string>& kv, const std::string& setting);

// File (optional: empty path = all defaults) + overrides -> validated config.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

// echo() joined as "key=value\n" lines.
std::string run_config_text(const RunConfig& cfg);

// "1,2,3" -> {1,2,3}; ConfigError on junk or an empty list.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace psagan
