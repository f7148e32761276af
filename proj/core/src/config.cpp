#include "psagan/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "psagan/common.hpp"
#include "psagan/scenario.hpp"

namespace psagan {

namespace {

std::string trim(const std::string& s) {
    const std::size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    const std::size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

std::int64_t to_i64(const std::string& key, const std::string& val) {
    try {
        std::size_t pos = 0;
        const std::int64_t v = std::stoll(val, &pos);
        if (pos != val.size() || val.empty()) throw std::invalid_argument(val);
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + val + "'");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& val) {
    try {
        if (val.empty() || val[0] == '-') throw std::invalid_argument(val);
        std::size_t pos = 0;
        const std::uint64_t v = std::stoull(val, &pos);
        if (pos != val.size()) throw std::invalid_argument(val);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" +
                          val + "'");
    }
}

double to_f64(const std::string& key, const std::string& val) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(val, &pos);
        if (pos != val.size() || val.empty()) throw std::invalid_argument(val);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + val + "'");
    }
}

float to_f32(const std::string& key, const std::string& val) {
    return static_cast<float>(to_f64(key, val));
}

bool to_bool(const std::string& key, const std::string& val) {
    if (val == "1" || val == "true") return true;
    if (val == "0" || val == "false") return false;
    throw ConfigError("config key '" + key + "': expected a boolean (0/1/true/false), got '" +
                      val + "'");
}

std::string fmt(double v) {
    char b[64];
    std::snprintf(b, sizeof b, "%.8g", v);
    return b;
}

std::string fmt(bool v) { return v ? "1" : "0"; }

}  // namespace

void RunConfig::validate() const {
    train.validate();
    encoder.validate();
    bool ladder = false;
    for (std::int64_t t = 16; t <= 256; t *= 2) ladder = ladder || train.tau == t;
    if (!ladder) throw ConfigError("tau must be one of 16, 32, 64, 128, 256");
    if (dataset_format != "csv" && dataset_format != "jsonlines")
        throw ConfigError("dataset_format must be 'csv' or 'jsonlines'");
    if (score_windows < 2) throw ConfigError("score_windows must be at least 2");
    if (score_repeats < 1) throw ConfigError("score_repeats must be positive");
    if (sample_count < 1) throw ConfigError("sample_count must be positive");
    if (scenario_window < 1) throw ConfigError("scenario_window must be positive");
    if (scenario_n_windows < 1) throw ConfigError("scenario_n_windows must be positive");
    if (scenario_stretch_len < 1) throw ConfigError("scenario_stretch_len must be positive");
    if (!(scenario_fraction > 0.0) || scenario_fraction > 1.0)
        throw ConfigError("scenario_fraction must lie in (0, 1]");
    scenario_kind_from_name(scenario_kind);
    if (eval_n_samples < 1) throw ConfigError("eval_n_samples must be positive");
    if (eval_ma_window < 1) throw ConfigError("eval_ma_window must be positive");
    if (impute_window < 0) throw ConfigError("impute_window must be non-negative");
    if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
    parse_seed_list(eval_seeds);
}

std::vector<std::pair<std::string, std::string>> RunConfig::echo() const {
    std::vector<std::pair<std::string, std::string>> e;
    auto put = [&](const char* k, std::string v) { e.emplace_back(k, std::move(v)); };
    put("dataset", dataset);
    put("dataset_format", dataset_format);
    put("split", split);
    put("scale_per_series", fmt(scale_per_series));
    put("tau", std::to_string(train.tau));
    put("epochs", std::to_string(train.epochs));
    put("batches_per_epoch", std::to_string(train.batches_per_epoch));
    put("batch_size", std::to_string(train.batch_size));
    put("stage_epochs", std::to_string(train.stage_epochs));
    put("fade_epochs", std::to_string(train.fade_epochs));
    put("lr", fmt(train.lr));
    put("beta1", fmt(train.beta1));
    put("beta2", fmt(train.beta2));
    put("moment_loss_weight", fmt(train.moment_loss_weight));
    put("context_length", std::to_string(train.context_length));
    put("self_attention", fmt(train.self_attention));
    put("fade_in", fmt(train.fade_in));
    put("moment_loss", fmt(train.moment_loss));
    put("seed", std::to_string(train.seed));
    put("encoder_channels", std::to_string(encoder.channels));
    put("encoder_embed_dim", std::to_string(encoder.embed_dim));
    put("encoder_kernel", std::to_string(encoder.kernel));
    put("encoder_depth", std::to_string(encoder.depth));
    put("encoder_steps", std::to_string(encoder.steps));
    put("encoder_batch_size", std::to_string(encoder.batch_size));
    put("encoder_negatives", std::to_string(encoder.negatives));
    put("encoder_lr", fmt(encoder.lr));
    put("score_windows", std::to_string(score_windows));
    put("score_repeats", std::to_string(score_repeats));
    put("sample_count", std::to_string(sample_count));
    put("scenario_kind", scenario_kind);
    put("scenario_window", std::to_string(scenario_window));
    put("scenario_n_windows", std::to_string(scenario_n_windows));
    put("scenario_stretch_len", std::to_string(scenario_stretch_len));
    put("scenario_fraction", fmt(scenario_fraction));
    put("scenario_seed", std::to_string(scenario_seed));
    put("scenario_file", scenario_file);
    put("checkpoint", checkpoint);
    put("samples", samples);
    put("encoder_checkpoint", encoder_checkpoint);
    put("train_encoder", fmt(train_encoder));
    put("eval_seeds", eval_seeds);
    put("eval_n_samples", std::to_string(eval_n_samples));
    put("eval_ma_window", std::to_string(eval_ma_window));
    put("eval_baselines", fmt(eval_baselines));
    put("impute_window", std::to_string(impute_window));
    put("out_dir", out_dir);
    return e;
}

RunConfig parse_run_config(const std::map<std::string, std::string>& kv) {
    RunConfig c;
    for (const auto& [key, val] : kv) {
        if (key == "dataset") c.dataset = val;
        else if (key == "dataset_format") c.dataset_format = val;
        else if (key == "split") c.split = val;
        else if (key == "scale_per_series") c.scale_per_series = to_bool(key, val);
        else if (key == "tau") c.train.tau = to_i64(key, val);
        else if (key == "epochs") c.train.epochs = to_i64(key, val);
        else if (key == "batches_per_epoch") c.train.batches_per_epoch = to_i64(key, val);
        else if (key == "batch_size") c.train.batch_size = to_i64(key, val);
        else if (key == "stage_epochs") c.train.stage_epochs = to_i64(key, val);
        else if (key == "fade_epochs") c.train.fade_epochs = to_i64(key, val);
        else if (key == "lr") c.train.lr = to_f32(key, val);
        else if (key == "beta1") c.train.beta1 = to_f32(key, val);
        else if (key == "beta2") c.train.beta2 = to_f32(key, val);
        else if (key == "moment_loss_weight") c.train.moment_loss_weight = to_f32(key, val);
        else if (key == "context_length") c.train.context_length = to_i64(key, val);
        else if (key == "self_attention") c.train.self_attention = to_bool(key, val);
        else if (key == "fade_in") c.train.fade_in = to_bool(key, val);
        else if (key == "moment_loss") c.train.moment_loss = to_bool(key, val);
        else if (key == "seed") c.train.seed = to_u64(key, val);
        else if (key == "encoder_channels") c.encoder.channels = to_i64(key, val);
        else if (key == "encoder_embed_dim") c.encoder.embed_dim = to_i64(key, val);
        else if (key == "encoder_kernel") c.encoder.kernel = to_i64(key, val);
        else if (key == "encoder_depth") c.encoder.depth = to_i64(key, val);
        else if (key == "encoder_steps") c.encoder.steps = to_i64(key, val);
        else if (key == "encoder_batch_size") c.encoder.batch_size = to_i64(key, val);
        else if (key == "encoder_negatives") c.encoder.negatives = to_i64(key, val);
        else if (key == "encoder_lr") c.encoder.lr = to_f32(key, val);
        else if (key == "score_windows") c.score_windows = to_i64(key, val);
        else if (key == "score_repeats") c.score_repeats = to_i64(key, val);
        else if (key == "sample_count") c.sample_count = to_i64(key, val);
        else if (key == "scenario_kind") c.scenario_kind = val;
        else if (key == "scenario_window") c.scenario_window = to_i64(key, val);
        else if (key == "scenario_n_windows") c.scenario_n_windows = to_i64(key, val);
        else if (key == "scenario_stretch_len") c.scenario_stretch_len = to_i64(key, val);
        else if (key == "scenario_fraction") c.scenario_fraction = to_f64(key, val);
        else if (key == "scenario_seed") c.scenario_seed = to_u64(key, val);
        else if (key == "scenario_file") c.scenario_file = val;
        else if (key == "checkpoint") c.checkpoint = val;
        else if (key == "samples") c.samples = val;
        else if (key == "encoder_checkpoint") c.encoder_checkpoint = val;
        else if (key == "train_encoder") c.train_encoder = to_bool(key, val);
        else if (key == "eval_seeds") c.eval_seeds = val;
        else if (key == "eval_n_samples") c.eval_n_samples = to_i64(key, val);
        else if (key == "eval_ma_window") c.eval_ma_window = to_i64(key, val);
        else if (key == "eval_baselines") c.eval_baselines = to_bool(key, val);
        else if (key == "impute_window") c.impute_window = to_i64(key, val);
        else if (key == "out_dir") c.out_dir = val;
        else throw ConfigError("unknown config key '" + key + "'");
    }
    // one master seed: the encoder derives its stream from the run seed
    c.encoder.seed = c.train.seed;
    c.validate();
    return c;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError(path + " line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (!kv.emplace(key, val).second)
            throw ConfigError(path + " line " + std::to_string(lineno) + ": duplicate key '" +
                              key + "'");
    }
    return kv;
}

void apply_override(std::map<std::string, std::string>& kv, const std::string& setting) {
    const std::size_t eq = setting.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + setting + "' is not of the form key=value");
    kv[trim(setting.substr(0, eq))] = trim(setting.substr(eq + 1));
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    std::map<std::string, std::string> kv;
    if (!path.empty()) kv = read_config_file(path);
    for (const auto& s : overrides) apply_override(kv, s);
    return parse_run_config(kv);
}

std::string run_config_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& [k, v] : cfg.echo()) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string cur;
    while (std::getline(ss, cur, ',')) {
        cur = trim(cur);
        if (cur.empty())
            throw ConfigError("eval_seeds: empty entry in '" + text + "'");
        seeds.push_back(to_u64("eval_seeds", cur));
    }
    if (seeds.empty()) throw ConfigError("eval_seeds must list at least one seed");
    return seeds;
}

}  // namespace psagan
