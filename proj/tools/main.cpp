#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "psagan/checkpoint.hpp"
#include "psagan/common.hpp"
#include "psagan/config.hpp"
#include "psagan/context_fid.hpp"
#include "psagan/data.hpp"
#include "psagan/eval.hpp"
#include "psagan/scenario.hpp"
#include "psagan/train.hpp"

using namespace psagan;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArtifactError("cannot read " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string hash_file(const std::string& path) {
    const std::string bytes = slurp(path);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return buf;
}

// ---- run manifests ---------------------------------------------------------
// Every command records its resolved config plus content hashes of the files
// it read and wrote; `replay` re-runs from exactly this record and checks the
// fresh outputs hash-identical.

struct Manifest {
    std::string command;
    const RunConfig* config = nullptr;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
};

void write_manifest(const Manifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    j["seed"] = m.config->train.seed;
    j["out_dir"] = m.config->out_dir;
    nlohmann::json cfg = nlohmann::json::object();
    for (const auto& [k, v] : m.config->echo()) cfg[k] = v;
    j["config"] = cfg;
    auto files = [&](const std::vector<std::string>& paths) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& p : paths)
            a.push_back({{"path", p}, {"fnv1a64", hash_file(p)}});
        return a;
    };
    j["inputs"] = files(m.inputs);
    j["outputs"] = files(m.outputs);
    const std::string path = m.config->out_dir + "/" + m.command + "_manifest.json";
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << "\n";
    std::cerr << "manifest: " << path << "\n";
}

// ---- shared plumbing ---------------------------------------------------------

struct LoadedPanel {
    SeriesPanel panel;  // scaled
    MinMaxScaler scaler;
};

SeriesPanel load_dataset_raw(const RunConfig& cfg) {
    if (cfg.dataset.empty()) throw ConfigError("config key 'dataset' is required");
    if (!fs::exists(cfg.dataset)) throw ArtifactError("dataset not found: " + cfg.dataset);
    SeriesPanel p = load_panel(cfg.dataset, cfg.dataset_format);
    if (!cfg.split.empty()) {
        try {
            p.set_split(parse_timestamp(cfg.split));
        } catch (const Error& e) {
            throw ConfigError(std::string("config key 'split': ") + e.what());
        }
    }
    return p;
}

LoadedPanel load_dataset_scaled(const RunConfig& cfg) {
    SeriesPanel p = load_dataset_raw(cfg);
    if (p.split_idx <= 0) throw ConfigError("config key 'split' is required for this command");
    MinMaxScaler sc = fit_minmax(p, cfg.scale_per_series);
    scale_panel(p, sc);
    return {std::move(p), std::move(sc)};
}

ScenarioDataset load_scenario(const RunConfig& cfg) {
    if (cfg.scenario_file.empty())
        throw ConfigError("config key 'scenario_file' is required for this command");
    if (!fs::exists(cfg.scenario_file))
        throw ArtifactError("scenario file not found: " + cfg.scenario_file);
    return scenario_from_json(slurp(cfg.scenario_file));
}

// Generates aligned windows in bounded chunks so arbitrarily large draws never
// hold a full-batch activation set.
Tensor generate_windows(GeneratorStack& gen, const SeriesPanel& panel,
                        const std::vector<std::int64_t>& series,
                        const std::vector<std::int64_t>& starts,
                        const std::vector<std::vector<float>>& feats, Rng& rng) {
    NoGradGuard ng;
    const std::int64_t tau = gen.shape().tau;
    const std::int64_t b = static_cast<std::int64_t>(series.size());
    std::vector<float> all(static_cast<std::size_t>(b * tau));
    constexpr std::int64_t kChunk = 256;
    for (std::int64_t at = 0; at < b; at += kChunk) {
        const std::int64_t n = std::min(kChunk, b - at);
        std::vector<std::int64_t> cs(series.begin() + at, series.begin() + at + n);
        std::vector<std::int64_t> st(starts.begin() + at, starts.begin() + at + n);
        Tensor fw = feature_windows(feats, st, tau);
        Tensor noise = random_normal({n, 1, tau}, rng);
        Tensor out;
        if (gen.shape().context_enabled()) {
            auto [cv, cm] = context_windows(panel, cs, st, gen.shape().context_length);
            out = gen.forward(noise, cs, fw, cv, cm, false);
        } else {
            out = gen.forward(noise, cs, fw, false);
        }
        std::copy(out.data().begin(), out.data().end(),
                  all.begin() + static_cast<std::ptrdiff_t>(at * tau));
    }
    return Tensor::from({b, 1, tau}, std::move(all));
}

// ---- encoder artifacts -------------------------------------------------------

std::string encoder_echo(const EncoderConfig& e) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "channels=%lld\nembed_dim=%lld\nkernel=%lld\ndepth=%lld\n",
                  static_cast<long long>(e.channels), static_cast<long long>(e.embed_dim),
                  static_cast<long long>(e.kernel), static_cast<long long>(e.depth));
    return buf;
}

CausalEncoder encoder_from_checkpoint(const std::string& path, EncoderConfig base) {
    Checkpoint ck = load_checkpoint(path);
    std::istringstream in(ck.config_echo);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "channels") base.channels = std::stoll(val);
        else if (key == "embed_dim") base.embed_dim = std::stoll(val);
        else if (key == "kernel") base.kernel = std::stoll(val);
        else if (key == "depth") base.depth = std::stoll(val);
    }
    Rng rng(0);
    CausalEncoder enc(base, rng);
    restore_named(ck, enc.params(), enc.buffers());
    enc.freeze();
    return enc;
}

// ---- commands ----------------------------------------------------------------

int cmd_train(const RunConfig& cfg) {
    LoadedPanel lp = load_dataset_scaled(cfg);
    std::cerr << "training on " << lp.panel.n_series() << " series x " << lp.panel.t_len()
              << " steps (tau=" << cfg.train.tau << ", epochs=" << cfg.train.epochs << ")\n";
    TrainResult res = train(lp.panel, cfg.train, cfg.out_dir);
    std::cerr << "final checkpoint: " << res.checkpoint_path << " (stage " << res.final_stage
              << ")\n";
    Manifest m{"train", &cfg, {cfg.dataset}, {}};
    m.outputs = res.stage_checkpoints;
    m.outputs.push_back(res.checkpoint_path);
    m.outputs.push_back(res.metrics_path);
    write_manifest(m);
    return 0;
}

int cmd_sample(const RunConfig& cfg) {
    LoadedPanel lp = load_dataset_scaled(cfg);
    if (cfg.checkpoint.empty())
        throw ConfigError("config key 'checkpoint' is required for sample");
    if (!fs::exists(cfg.checkpoint))
        throw ArtifactError("checkpoint not found: " + cfg.checkpoint);
    GeneratorStack gen = generator_from_checkpoint(cfg.checkpoint, lp.panel.n_series());
    const std::int64_t tau = gen.shape().tau;
    if (lp.panel.t_len() < tau)
        throw ConfigError("panel shorter than the generation length " + std::to_string(tau));

    Rng rng = Rng(cfg.train.seed).split("sample");
    const std::int64_t b = cfg.sample_count;
    std::vector<std::int64_t> series(static_cast<std::size_t>(b));
    std::vector<std::int64_t> starts(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) {
        series[static_cast<std::size_t>(i)] = rng.uniform_int(0, lp.panel.n_series() - 1);
        starts[static_cast<std::size_t>(i)] = rng.uniform_int(0, lp.panel.t_len() - tau);
    }
    const auto feats = time_features(lp.panel.start_hour, lp.panel.t_len());
    SampleFile sf;
    sf.tau = tau;
    sf.series = series;
    sf.starts = starts;
    sf.values = generate_windows(gen, lp.panel, series, starts, feats, rng);

    fs::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/samples.bin";
    save_samples(path, sf);
    std::cerr << "wrote " << b << " windows of length " << tau << " to " << path << "\n";
    Manifest m{"sample", &cfg, {cfg.dataset, cfg.checkpoint}, {path}};
    write_manifest(m);
    return 0;
}

int cmd_score(const RunConfig& cfg) {
    if (!cfg.checkpoint.empty() && !cfg.samples.empty())
        throw ConfigError("score takes either 'checkpoint' or 'samples', not both");
    if (cfg.checkpoint.empty() && cfg.samples.empty())
        throw ConfigError("score needs 'checkpoint' or 'samples'");
    LoadedPanel lp = load_dataset_scaled(cfg);
    fs::create_directories(cfg.out_dir);
    Manifest m{"score", &cfg, {cfg.dataset}, {}};

    // the scored artifact fixes the window length, not the train config
    SampleFile sf;
    GeneratorStack gen;
    if (!cfg.samples.empty()) {
        if (!fs::exists(cfg.samples)) throw ArtifactError("sample file not found: " + cfg.samples);
        m.inputs.push_back(cfg.samples);
        sf = load_samples(cfg.samples);
    } else {
        if (!fs::exists(cfg.checkpoint))
            throw ArtifactError("checkpoint not found: " + cfg.checkpoint);
        m.inputs.push_back(cfg.checkpoint);
        gen = generator_from_checkpoint(cfg.checkpoint, lp.panel.n_series());
    }
    const std::int64_t tau = cfg.samples.empty() ? gen.shape().tau : sf.tau;

    const std::string enc_path =
        cfg.encoder_checkpoint.empty() ? cfg.out_dir + "/encoder.bin" : cfg.encoder_checkpoint;
    CausalEncoder encoder = [&]() -> CausalEncoder {
        if (fs::exists(enc_path)) {
            std::cerr << "loading encoder " << enc_path << "\n";
            m.inputs.push_back(enc_path);
            return encoder_from_checkpoint(enc_path, cfg.encoder);
        }
        if (!cfg.train_encoder)
            throw ArtifactError("encoder checkpoint not found at '" + enc_path +
                                "'; set train_encoder=1 to fit one first");
        std::cerr << "training embedding encoder (" << cfg.encoder.steps << " steps)\n";
        EncoderTrainResult r = train_encoder(lp.panel, tau, cfg.encoder);
        Checkpoint ck =
            snapshot_named(r.encoder.params(), r.encoder.buffers(), encoder_echo(cfg.encoder));
        save_checkpoint(enc_path, ck);
        m.outputs.push_back(enc_path);
        return std::move(r.encoder);
    }();
    if (tau < encoder.receptive_min())
        throw ConfigError("windows of length " + std::to_string(tau) +
                          " are below the encoder's receptive minimum " +
                          std::to_string(encoder.receptive_min()) +
                          "; score longer windows or shrink encoder_kernel/encoder_depth");

    ContextFidReport report;
    if (!cfg.samples.empty()) {
        // a sample file fixes its own alignment, so this is one paired draw
        Tensor real = value_windows(lp.panel, sf.series, sf.starts, sf.tau);
        const double score = context_fid_score(encoder, real, sf.values);
        report.mean = score;
        report.stddev = 0.0;
        report.scores = {score};
        report.n_windows = static_cast<std::int64_t>(sf.series.size());
        report.tau = sf.tau;
        report.seed = cfg.train.seed;
    } else {
        const auto feats = time_features(lp.panel.start_hour, lp.panel.t_len());
        WindowSource source = [&](const std::vector<std::int64_t>& series,
                                  const std::vector<std::int64_t>& starts, std::int64_t want,
                                  Rng& rng) {
            if (want != gen.shape().tau)
                throw ContractError("scoring window length does not match the generator");
            return generate_windows(gen, lp.panel, series, starts, feats, rng);
        };
        report = context_fid(encoder, source, lp.panel, cfg.score_windows, gen.shape().tau,
                             cfg.score_repeats, cfg.train.seed);
    }

    nlohmann::json js;
    js["mean"] = report.mean;
    js["stddev"] = report.stddev;
    js["scores"] = report.scores;
    js["n_windows"] = report.n_windows;
    js["tau"] = report.tau;
    js["seed"] = report.seed;
    js["repeats"] = report.scores.size();
    const std::string path = cfg.out_dir + "/score.json";
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << js.dump(2) << "\n";
    f.close();
    std::cerr << "context-fid " << report.mean << " +- " << report.stddev << " over "
              << report.n_windows << " windows (seed " << report.seed << ")\n";
    m.outputs.push_back(path);
    write_manifest(m);
    return 0;
}

int cmd_impute(const RunConfig& cfg) {
    LoadedPanel lp = load_dataset_scaled(cfg);
    if (cfg.checkpoint.empty())
        throw ConfigError("config key 'checkpoint' is required for impute");
    if (!fs::exists(cfg.checkpoint))
        throw ArtifactError("checkpoint not found: " + cfg.checkpoint);
    ScenarioDataset sc = load_scenario(cfg);
    GeneratorStack gen = generator_from_checkpoint(cfg.checkpoint, lp.panel.n_series());
    ObservationMask mask;
    try {
        mask = observation_mask(sc, lp.panel.n_series(), lp.panel.t_len(), cfg.impute_window);
    } catch (const ContractError& e) {
        throw ConfigError(std::string("config key 'impute_window': ") + e.what());
    }
    Rng rng = Rng(cfg.train.seed).split("impute");
    SeriesPanel filled = gan_impute(gen, lp.panel, mask, cfg.eval_n_samples, rng);
    unscale_panel(filled, lp.scaler);
    fs::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/imputed.csv";
    save_panel_csv(path, filled);
    std::cerr << "imputed panel written to " << path << "\n";
    Manifest m{"impute", &cfg, {cfg.dataset, cfg.checkpoint, cfg.scenario_file}, {path}};
    write_manifest(m);
    return 0;
}

int cmd_scenario(const RunConfig& cfg) {
    SeriesPanel p = load_dataset_raw(cfg);
    if (p.split_idx <= 0) throw ConfigError("config key 'split' is required for scenario");
    const ScenarioKind kind = scenario_kind_from_name(cfg.scenario_kind);
    ScenarioDataset sc;
    switch (kind) {
        case ScenarioKind::far_forecast:
            sc = make_far_forecast_scenario(p, cfg.scenario_window, cfg.scenario_n_windows);
            break;
        case ScenarioKind::stretch:
            sc = make_stretch_scenario(p, cfg.scenario_stretch_len, cfg.scenario_seed);
            break;
        case ScenarioKind::cold_start:
            sc = make_cold_start_scenario(p, cfg.scenario_fraction, cfg.scenario_seed);
            break;
    }
    fs::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/scenario_" + cfg.scenario_kind + ".json";
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << scenario_to_json(sc);
    f.close();
    std::cerr << "scenario " << cfg.scenario_kind << ": " << sc.forecast_starts.size()
              << " windows, missing fraction " << sc.achieved_missing;
    if (!sc.cold_series.empty()) {
        std::cerr << ", cold series";
        for (auto s : sc.cold_series) std::cerr << ' ' << p.ids[static_cast<std::size_t>(s)];
    }
    std::cerr << "\n" << "scenario file: " << path << "\n";
    Manifest m{"scenario", &cfg, {cfg.dataset}, {path}};
    write_manifest(m);
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    LoadedPanel lp = load_dataset_scaled(cfg);
    ScenarioDataset sc = load_scenario(cfg);
    Manifest m{"eval", &cfg, {cfg.dataset, cfg.scenario_file}, {}};
    std::vector<ModelSpec> models;
    if (!cfg.checkpoint.empty()) {
        if (!fs::exists(cfg.checkpoint))
            throw DependencyError("missing checkpoint: " + cfg.checkpoint +
                                  " (run the train command first)");
        models.push_back({"gan", "gan", cfg.checkpoint, cfg.eval_n_samples, cfg.eval_ma_window});
        m.inputs.push_back(cfg.checkpoint);
    }
    if (cfg.eval_baselines) {
        models.push_back({"moving_average", "moving_average", "", 1, cfg.eval_ma_window});
        models.push_back({"mean", "mean", "", 1, cfg.eval_ma_window});
    }
    if (models.empty())
        throw ConfigError("eval has no models: set 'checkpoint' and/or eval_baselines=1");

    EvalReport rep =
        run_scenario_eval(sc, lp.panel, lp.scaler, models, parse_seed_list(cfg.eval_seeds));

    fs::create_directories(cfg.out_dir);
    const std::string json_path = cfg.out_dir + "/eval.json";
    {
        std::ofstream f(json_path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + json_path);
        f << eval_report_to_json(rep);
    }
    const std::string csv_path = cfg.out_dir + "/eval_per_window.csv";
    write_per_window_csv(rep, csv_path);
    for (const auto& s : rep.summary)
        std::cerr << "model=" << s.model << " nrmse=" << s.mean << " +- " << s.stddev << " (runs "
                  << s.per_seed.size() << ")\n";
    for (const auto& r : rep.runs)
        if (r.failed)
            std::cerr << "FAILED model=" << r.model << " seed=" << r.seed << ": " << r.error
                      << "\n";
    m.outputs.push_back(json_path);
    m.outputs.push_back(csv_path);
    write_manifest(m);
    if (rep.any_failed) {
        std::cerr << "evaluation finished with failed runs\n";
        return 1;
    }
    return 0;
}

int dispatch(const std::string& command, const RunConfig& cfg) {
    if (command == "train") return cmd_train(cfg);
    if (command == "sample") return cmd_sample(cfg);
    if (command == "score") return cmd_score(cfg);
    if (command == "impute") return cmd_impute(cfg);
    if (command == "scenario") return cmd_scenario(cfg);
    if (command == "eval") return cmd_eval(cfg);
    throw ConfigError("unknown command '" + command + "'");
}

int cmd_replay(const std::string& manifest_file) {
    if (!fs::exists(manifest_file)) throw ArtifactError("manifest not found: " + manifest_file);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(slurp(manifest_file));
        j.at("command");
        j.at("config");
        j.at("out_dir");
        j.at("inputs");
        j.at("outputs");
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(std::string("manifest is not a valid run record: ") + e.what());
    }
    const std::string command = j["command"].get<std::string>();

    std::string stale;
    for (const auto& in : j["inputs"]) {
        const std::string path = in.at("path").get<std::string>();
        if (!fs::exists(path)) {
            stale += " " + path + " (missing)";
            continue;
        }
        if (hash_file(path) != in.at("fnv1a64").get<std::string>())
            stale += " " + path + " (content changed)";
    }
    if (!stale.empty())
        throw ArtifactError("replay inputs are not the recorded ones:" + stale);

    auto kv = j["config"].get<std::map<std::string, std::string>>();
    const std::string orig_out = j["out_dir"].get<std::string>();
    const std::string replay_out = orig_out + "/replay_" + command;
    kv["out_dir"] = replay_out;
    const RunConfig cfg = parse_run_config(kv);
    std::cerr << "replaying " << command << " into " << replay_out << "\n";
    const int rc = dispatch(command, cfg);
    if (rc != 0) throw Error("replayed command exited with status " + std::to_string(rc));

    std::int64_t verified = 0;
    for (const auto& out : j["outputs"]) {
        const fs::path orig(out.at("path").get<std::string>());
        const fs::path rel = orig.lexically_relative(orig_out);
        const fs::path fresh = fs::path(replay_out) / rel;
        if (!fs::exists(fresh)) throw Error("replay did not produce " + rel.string());
        if (hash_file(fresh.string()) != out.at("fnv1a64").get<std::string>())
            throw Error("replay output differs from the recorded run: " + rel.string());
        ++verified;
    }
    std::cerr << "replay verified " << verified << " outputs bit-for-bit\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"progressive time-series GAN: train, sample, score, impute, scenario, eval"};
    app.require_subcommand(1);
    std::string config_path;
    std::vector<std::string> sets;
    std::string manifest_file;

    const std::vector<std::pair<std::string, std::string>> kCommands = {
        {"train", "fit the generator/discriminator pair and write checkpoints"},
        {"sample", "draw aligned windows from a checkpoint into a sample file"},
        {"score", "distribution score of a checkpoint or sample file"},
        {"impute", "fill a scenario's hidden positions from a checkpoint"},
        {"scenario", "construct a reproducible degradation scenario"},
        {"eval", "score models against a scenario's evaluation windows"},
    };
    for (const auto& [name, help] : kCommands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", config_path, "key=value config file");
        sub->add_option("--set", sets, "override, key=value (repeatable)");
    }
    auto* replay = app.add_subcommand("replay", "re-run a manifest, verify outputs bit-for-bit");
    replay->add_option("manifest", manifest_file, "manifest JSON written by a previous run")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, std::cerr, std::cerr);
    } catch (const CLI::ParseError& e) {
        app.exit(e, std::cerr, std::cerr);
        return 2;
    }

    try {
        const std::string cmd = app.get_subcommands().front()->get_name();
        if (cmd == "replay") return cmd_replay(manifest_file);
        return dispatch(cmd, load_run_config(config_path, sets));
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ArtifactError& e) {
        std::cerr << "artifact error: " << e.what() << "\n";
        return 3;
    } catch (const DependencyError& e) {
        std::cerr << "dependency error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
