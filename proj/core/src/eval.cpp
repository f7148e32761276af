#include "psagan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <numeric>
#include <set>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "psagan/checkpoint.hpp"
#include "psagan/common.hpp"

namespace psagan {

namespace {

constexpr std::int64_t kHorizon = 32;

bool observed_at(const ObservationMask* mask, std::int64_t series, std::int64_t t) {
    if (mask == nullptr) return true;
    return (*mask)[static_cast<std::size_t>(series)][static_cast<std::size_t>(t)] != 0;
}

void check_mask_dims(const SeriesPanel& panel, const ObservationMask& mask) {
    if (mask.size() != static_cast<std::size_t>(panel.n_series()))
        throw DimensionError("observation mask has " + std::to_string(mask.size()) +
                             " series, panel has " + std::to_string(panel.n_series()));
    for (const auto& row : mask)
        if (row.size() != static_cast<std::size_t>(panel.t_len()))
            throw DimensionError("observation mask row length does not match the panel");
}

// History [start - len, start): unobserved or out-of-range positions read as
// value 0 with mask-channel 0, so hidden values never leak into conditioning.
std::pair<Tensor, Tensor> masked_context(const SeriesPanel& panel, const ObservationMask* mask,
                                         const std::vector<std::int64_t>& series,
                                         const std::vector<std::int64_t>& starts,
                                         std::int64_t len) {
    const std::int64_t b = static_cast<std::int64_t>(series.size());
    std::vector<float> vals(static_cast<std::size_t>(b * len), 0.0f);
    std::vector<float> obs(static_cast<std::size_t>(b * len), 0.0f);
    for (std::int64_t i = 0; i < b; ++i) {
        for (std::int64_t j = 0; j < len; ++j) {
            const std::int64_t t = starts[static_cast<std::size_t>(i)] - len + j;
            if (t < 0 || t >= panel.t_len()) continue;
            if (!observed_at(mask, series[static_cast<std::size_t>(i)], t)) continue;
            const std::size_t at = static_cast<std::size_t>(i * len + j);
            vals[at] = panel.values[static_cast<std::size_t>(series[static_cast<std::size_t>(i)])]
                                   [static_cast<std::size_t>(t)];
            obs[at] = 1.0f;
        }
    }
    Tensor v = Tensor::from({b, 1, len}, std::move(vals));
    Tensor m = Tensor::from({b, 1, len}, std::move(obs));
    return {v, m};
}

void require_full_resolution(GeneratorStack& gen, std::int64_t n_samples) {
    if (n_samples < 1) throw ContractError("sample count must be positive");
    if (gen.current_len() != gen.shape().tau)
        throw ContractError("generator must be grown to full resolution before evaluation");
}

// Per-step mean over n_samples generated windows, all placed at (series, start).
std::vector<float> sample_mean_window(GeneratorStack& gen, const SeriesPanel& panel,
                                      const ObservationMask* mask,
                                      const std::vector<std::vector<float>>& feats,
                                      std::int64_t series, std::int64_t start,
                                      std::int64_t n_samples, Rng& rng) {
    NoGradGuard ng;
    const std::int64_t len = gen.shape().tau;
    std::vector<std::int64_t> series_rep(static_cast<std::size_t>(n_samples), series);
    std::vector<std::int64_t> starts_rep(static_cast<std::size_t>(n_samples), start);
    Tensor fw = feature_windows(feats, starts_rep, len);
    Tensor noise = random_normal({n_samples, 1, len}, rng);
    Tensor out;
    if (gen.shape().context_enabled()) {
        auto [cv, cm] =
            masked_context(panel, mask, series_rep, starts_rep, gen.shape().context_length);
        out = gen.forward(noise, series_rep, fw, cv, cm, false);
    } else {
        out = gen.forward(noise, series_rep, fw, false);
    }
    std::vector<float> mean(static_cast<std::size_t>(len), 0.0f);
    const auto& d = out.data();
    for (std::int64_t s = 0; s < n_samples; ++s)
        for (std::int64_t j = 0; j < len; ++j)
            mean[static_cast<std::size_t>(j)] += d[static_cast<std::size_t>(s * len + j)];
    for (auto& v : mean) v /= static_cast<float>(n_samples);
    return mean;
}

}  // namespace

double nrmse(const std::vector<float>& forecast, const std::vector<float>& target) {
    if (forecast.size() != target.size() || forecast.empty())
        throw DimensionError("nrmse needs equal-length, non-empty forecast and target");
    double se = 0.0;
    double denom = 0.0;
    for (std::size_t i = 0; i < forecast.size(); ++i) {
        const double d = static_cast<double>(forecast[i]) - static_cast<double>(target[i]);
        se += d * d;
        denom += std::abs(static_cast<double>(target[i]));
    }
    const double n = static_cast<double>(target.size());
    denom /= n;
    if (denom == 0.0) throw NumericError("nrmse normalizer is zero: target is identically zero");
    return std::sqrt(se / n) / denom;
}

std::vector<float> gan_forecast(GeneratorStack& gen, const SeriesPanel& scaled_panel,
                                const MinMaxScaler& scaler,
                                const std::vector<std::vector<float>>& feats, std::int64_t series,
                                std::int64_t t, std::int64_t n_samples, Rng& rng,
                                const ObservationMask* mask) {
    if (!scaled_panel.scaled) throw ContractError("gan_forecast expects a scaled panel");
    if (series < 0 || series >= scaled_panel.n_series())
        throw IndexError("forecast series out of range");
    require_full_resolution(gen, n_samples);
    const std::int64_t tau = gen.shape().tau;
    if (tau < kHorizon)
        throw ContractError("generation length is shorter than the 32-step horizon");
    const std::int64_t w_start = t + kHorizon - tau;
    if (w_start < 0)
        throw ConfigError("forecast origin too early: the generation window starts before the panel");
    if (t + kHorizon > scaled_panel.t_len())
        throw ConfigError("forecast window extends past the end of the panel");
    std::vector<float> mean =
        sample_mean_window(gen, scaled_panel, mask, feats, series, w_start, n_samples, rng);
    std::vector<float> out(static_cast<std::size_t>(kHorizon));
    for (std::int64_t j = 0; j < kHorizon; ++j)
        out[static_cast<std::size_t>(j)] =
            scaler.inv(mean[static_cast<std::size_t>(tau - kHorizon + j)], series);
    return out;
}

SeriesPanel gan_impute(GeneratorStack& gen, const SeriesPanel& scaled_panel,
                       const ObservationMask& mask, std::int64_t n_samples, Rng& rng) {
    if (!scaled_panel.scaled) throw ContractError("gan_impute expects a scaled panel");
    check_mask_dims(scaled_panel, mask);
    require_full_resolution(gen, n_samples);
    const std::int64_t tau = gen.shape().tau;
    const std::int64_t T = scaled_panel.t_len();
    const auto feats = time_features(scaled_panel.start_hour, T);
    SeriesPanel out = scaled_panel;
    for (std::int64_t s = 0; s < scaled_panel.n_series(); ++s) {
        const auto& row = mask[static_cast<std::size_t>(s)];
        // Tile every masked run with generation windows; the final window is
        // end-clamped so coverage never needs positions past the panel.
        std::set<std::int64_t> starts;
        for (std::int64_t t = 0; t < T;) {
            if (row[static_cast<std::size_t>(t)]) {
                ++t;
                continue;
            }
            if (T < tau)
                throw ConfigError("panel is shorter than the generation window, cannot impute");
            std::int64_t run_end = t;
            while (run_end < T && !row[static_cast<std::size_t>(run_end)]) ++run_end;
            for (std::int64_t w = t; w < run_end;) {
                const std::int64_t ws = std::min(w, T - tau);
                starts.insert(ws);
                w = ws + tau;
            }
            t = run_end;
        }
        if (starts.empty()) continue;
        std::vector<double> sums(static_cast<std::size_t>(T), 0.0);
        std::vector<std::int64_t> counts(static_cast<std::size_t>(T), 0);
        for (std::int64_t ws : starts) {
            std::vector<float> m =
                sample_mean_window(gen, scaled_panel, &mask, feats, s, ws, n_samples, rng);
            for (std::int64_t j = 0; j < tau; ++j) {
                const std::int64_t p = ws + j;
                if (row[static_cast<std::size_t>(p)]) continue;
                sums[static_cast<std::size_t>(p)] += m[static_cast<std::size_t>(j)];
                counts[static_cast<std::size_t>(p)] += 1;
            }
        }
        for (std::int64_t p = 0; p < T; ++p) {
            if (row[static_cast<std::size_t>(p)]) continue;
            out.values[static_cast<std::size_t>(s)][static_cast<std::size_t>(p)] =
                static_cast<float>(sums[static_cast<std::size_t>(p)] /
                                   static_cast<double>(counts[static_cast<std::size_t>(p)]));
        }
    }
    return out;
}

void moving_average_fill(std::vector<float>& values, const std::vector<char>& observed,
                         std::int64_t window) {
    if (values.size() != observed.size())
        throw DimensionError("moving-average fill needs matching value/mask lengths");
    if (window < 1) throw ConfigError("moving-average window must be positive");
    for (std::size_t t = 0; t < values.size(); ++t) {
        if (observed[t]) continue;
        if (t == 0) {
            values[t] = 0.0f;
            continue;
        }
        const std::size_t lo = t > static_cast<std::size_t>(window)
                                   ? t - static_cast<std::size_t>(window)
                                   : 0;
        double acc = 0.0;
        for (std::size_t j = lo; j < t; ++j) acc += static_cast<double>(values[j]);
        values[t] = static_cast<float>(acc / static_cast<double>(t - lo));
    }
}

SeriesPanel moving_average_impute(const SeriesPanel& panel, const ObservationMask& mask,
                                  std::int64_t window) {
    check_mask_dims(panel, mask);
    SeriesPanel out = panel;
    for (std::int64_t s = 0; s < panel.n_series(); ++s)
        moving_average_fill(out.values[static_cast<std::size_t>(s)],
                            mask[static_cast<std::size_t>(s)], window);
    return out;
}

SeriesPanel mean_impute(const SeriesPanel& panel, const ObservationMask& mask) {
    check_mask_dims(panel, mask);
    const std::int64_t train_end = panel.split_idx > 0 ? panel.split_idx : panel.t_len();
    SeriesPanel out = panel;
    for (std::int64_t s = 0; s < panel.n_series(); ++s) {
        double acc = 0.0;
        std::int64_t n = 0;
        for (std::int64_t t = 0; t < train_end; ++t) {
            if (!mask[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)]) continue;
            acc += static_cast<double>(
                panel.values[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)]);
            ++n;
        }
        const float fill = n > 0 ? static_cast<float>(acc / static_cast<double>(n)) : 0.0f;
        for (std::int64_t t = 0; t < panel.t_len(); ++t)
            if (!mask[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)])
                out.values[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)] = fill;
    }
    return out;
}

namespace {

ModelShape shape_from_checkpoint(const Checkpoint& ckpt, std::int64_t n_series) {
    ModelShape shape;
    shape.n_series = n_series;
    std::istringstream in(ckpt.config_echo);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "tau") shape.tau = std::stoll(val);
        else if (key == "context_length") shape.context_length = std::stoll(val);
        else if (key == "self_attention") shape.self_attention = (val != "0");
    }
    return shape;
}

}  // namespace

GeneratorStack generator_from_checkpoint(const std::string& path, std::int64_t n_series) {
    Checkpoint ckpt = load_checkpoint(path);
    const ModelShape shape = shape_from_checkpoint(ckpt, n_series);
    Rng rng(0);
    GeneratorStack g(shape, rng);
    DiscriminatorStack d(shape, rng);
    restore(ckpt, g, d);
    return g;
}

namespace {

double vec_mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

RunRecord run_one(const ScenarioDataset& sc, const SeriesPanel& panel, const MinMaxScaler& scaler,
                  const ModelSpec& spec, std::uint64_t seed, std::uint64_t model_index) {
    RunRecord rec;
    rec.model = spec.name;
    rec.seed = seed;
    const std::int64_t n = panel.n_series();
    const std::int64_t T = panel.t_len();

    std::vector<std::int64_t> eval_series;
    if (sc.kind == ScenarioKind::cold_start) {
        eval_series = sc.cold_series;
    } else {
        eval_series.resize(static_cast<std::size_t>(n));
        std::iota(eval_series.begin(), eval_series.end(), 0);
    }

    GeneratorStack gen;
    if (spec.kind == "gan") gen = generator_from_checkpoint(spec.checkpoint_path, n);

    Rng rng = Rng(seed).split("scenario_eval", model_index);
    for (std::size_t w = 0; w < sc.forecast_starts.size(); ++w) {
        ObservationMask mask = observation_mask(sc, n, T, static_cast<std::int64_t>(w));
        const std::int64_t fs = sc.forecast_starts[w];
        for (std::int64_t s : eval_series)
            for (std::int64_t t = fs; t < fs + sc.forecast_len; ++t)
                mask[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)] = 0;

        SeriesPanel filled;
        if (spec.kind == "gan") {
            filled = gan_impute(gen, panel, mask, spec.n_samples, rng);
        } else if (spec.kind == "moving_average") {
            filled = moving_average_impute(panel, mask, spec.ma_window);
        } else {
            filled = mean_impute(panel, mask);
        }

        // One NRMSE per window, pooled across the evaluated series, in raw units.
        std::vector<float> fc, ty;
        for (std::int64_t s : eval_series) {
            for (std::int64_t t = fs; t < fs + sc.forecast_len; ++t) {
                fc.push_back(scaler.inv(
                    filled.values[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)], s));
                ty.push_back(scaler.inv(
                    panel.values[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)], s));
            }
        }
        rec.per_window.push_back(nrmse(fc, ty));
    }
    rec.aggregate = vec_mean(rec.per_window);
    return rec;
}

}  // namespace

EvalReport run_scenario_eval(const ScenarioDataset& scenario, const SeriesPanel& scaled_panel,
                             const MinMaxScaler& scaler, const std::vector<ModelSpec>& models,
                             const std::vector<std::uint64_t>& seeds) {
    if (!scaled_panel.scaled) throw ContractError("run_scenario_eval expects a scaled panel");
    if (models.empty()) throw ConfigError("no models to evaluate");
    if (seeds.empty()) throw ConfigError("no seeds to evaluate");
    if (scenario.forecast_starts.empty())
        throw ConfigError("scenario has no evaluation windows");
    for (const auto& m : models) {
        if (m.kind != "gan" && m.kind != "moving_average" && m.kind != "mean")
            throw ConfigError("unknown model kind '" + m.kind + "' for model '" + m.name + "'");
        if (m.kind == "gan" && m.checkpoint_path.empty())
            throw ConfigError("model '" + m.name + "' needs a checkpoint path");
    }

    EvalReport report;
    report.scenario_kind = scenario_kind_name(scenario.kind);
    report.scenario_seed = scenario.seed;

    // Every (model, seed) pair is an independent worker with its own model
    // replica and seed-derived stream, so join order never changes results.
    std::vector<std::future<RunRecord>> futures;
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
        for (std::uint64_t seed : seeds) {
            futures.push_back(std::async(std::launch::async, [&, mi, seed] {
                return run_one(scenario, scaled_panel, scaler, models[mi], seed,
                               static_cast<std::uint64_t>(mi));
            }));
        }
    }
    std::size_t fi = 0;
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
        for (std::uint64_t seed : seeds) {
            RunRecord rec;
            try {
                rec = futures[fi].get();
            } catch (const std::exception& e) {
                rec.model = models[mi].name;
                rec.seed = seed;
                rec.failed = true;
                rec.error = e.what();
                report.any_failed = true;
            }
            report.runs.push_back(std::move(rec));
            ++fi;
        }
    }

    for (const auto& m : models) {
        ModelSummary sum;
        sum.model = m.name;
        for (const auto& rec : report.runs)
            if (rec.model == m.name && !rec.failed) sum.per_seed.push_back(rec.aggregate);
        if (!sum.per_seed.empty()) {
            sum.mean = vec_mean(sum.per_seed);
            if (sum.per_seed.size() > 1) {
                double acc = 0.0;
                for (double v : sum.per_seed) acc += (v - sum.mean) * (v - sum.mean);
                sum.stddev = std::sqrt(acc / static_cast<double>(sum.per_seed.size() - 1));
            }
        }
        report.summary.push_back(std::move(sum));
    }
    return report;
}

std::string eval_report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["scenario"] = report.scenario_kind;
    j["scenario_seed"] = report.scenario_seed;
    j["any_failed"] = report.any_failed;
    j["runs"] = nlohmann::json::array();
    for (const auto& rec : report.runs) {
        nlohmann::json r;
        r["model"] = rec.model;
        r["seed"] = rec.seed;
        r["failed"] = rec.failed;
        if (rec.failed) r["error"] = rec.error;
        else {
            r["per_window"] = rec.per_window;
            r["aggregate"] = rec.aggregate;
        }
        j["runs"].push_back(std::move(r));
    }
    j["summary"] = nlohmann::json::array();
    for (const auto& sum : report.summary) {
        nlohmann::json s;
        s["model"] = sum.model;
        s["per_seed"] = sum.per_seed;
        s["mean"] = sum.mean;
        s["stddev"] = sum.stddev;
        s["n_runs"] = sum.per_seed.size();
        j["summary"].push_back(std::move(s));
    }
    return j.dump(2) + "\n";
}

void write_per_window_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "model,seed,window,nrmse\n";
    char buf[64];
    for (const auto& rec : report.runs) {
        if (rec.failed) continue;
        for (std::size_t w = 0; w < rec.per_window.size(); ++w) {
            std::snprintf(buf, sizeof(buf), "%.10g", rec.per_window[w]);
            out << rec.model << ',' << rec.seed << ',' << w << ',' << buf << '\n';
        }
    }
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace psagan
