#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psagan/data.hpp"
#include "psagan/model.hpp"
#include "psagan/rng.hpp"
#include "psagan/scenario.hpp"

namespace psagan {

using ObservationMask = std::vector<std::vector<char>>;  // [n_series][t], nonzero = observed

// sqrt(mean((forecast-target)^2)) / mean(|target|). Callers must pass raw-unit
// (back-scaled) values; the normalizer choice makes absolute numbers depend on
// it, so it is pinned here: mean absolute target over the evaluated span.
double nrmse(const std::vector<float>& forecast, const std::vector<float>& target);

// 32-step point forecast for one series in raw units: the generator emits
// full windows end-aligned to [t+32-len, t+32), the horizon is the final 32
// steps, and the point forecast is the per-step mean over n_samples draws.
// `mask` (when given) hides unobserved history from the context variant.
std::vector<float> gan_forecast(GeneratorStack& gen, const SeriesPanel& scaled_panel,
                                const MinMaxScaler& scaler,
                                const std::vector<std::vector<float>>& feats, std::int64_t series,
                                std::int64_t t, std::int64_t n_samples, Rng& rng,
                                const ObservationMask* mask = nullptr);

// Fills every unobserved position with generator output (per-step mean over
// n_samples) while leaving observed positions bitwise untouched. Gaps are
// tiled with generation windows; overlapping windows are averaged on the
// masked positions. Operates in scaled units.
SeriesPanel gan_impute(GeneratorStack& gen, const SeriesPanel& scaled_panel,
                       const ObservationMask& mask, std::int64_t n_samples, Rng& rng);

// Lagged moving average (window 10 by default): each missing position becomes
// the mean of the nearest preceding `window` filled values; a leading gap with
// no history at all falls back to 0.
void moving_average_fill(std::vector<float>& values, const std::vector<char>& observed,
                         std::int64_t window = 10);
SeriesPanel moving_average_impute(const SeriesPanel& panel, const ObservationMask& mask,
                                  std::int64_t window = 10);

// Constant fill with the mean of the series' observed training-range values.
SeriesPanel mean_impute(const SeriesPanel& panel, const ObservationMask& mask);

struct ModelSpec {
    std::string name;                // report identifier
    std::string kind;                // "gan" | "moving_average" | "mean"
    std::string checkpoint_path;     // required for kind == "gan"
    std::int64_t n_samples = 100;
    std::int64_t ma_window = 10;
};

struct RunRecord {
    std::string model;
    std::uint64_t seed = 0;
    std::vector<double> per_window;  // NRMSE per evaluation window
    double aggregate = 0.0;          // unweighted mean over windows
    bool failed = false;
    std::string error;
};

struct ModelSummary {
    std::string model;
    std::vector<double> per_seed;  // aggregate NRMSE per successful seed
    double mean = 0.0;
    double stddev = 0.0;
};

struct EvalReport {
    std::string scenario_kind;
    std::uint64_t scenario_seed = 0;
    std::vector<RunRecord> runs;        // one per (model, seed), input order
    std::vector<ModelSummary> summary;  // across seeds, per model
    bool any_failed = false;
};

// Rebuilds a generator from a training checkpoint (shape comes from the
// checkpoint's config echo, the series count from the panel the model was
// trained on).
GeneratorStack generator_from_checkpoint(const std::string& path, std::int64_t n_series);

// Evaluates every (model, seed) pair on the scenario: each evaluation window
// is hidden along with the scenario's own mask, the model fills the panel,
// and NRMSE is computed in raw units over the hidden window (cold-start
// scores only the truncated series). Pairs run concurrently; each worker
// owns its own model replica. Sub-run exceptions become failure records.
EvalReport run_scenario_eval(const ScenarioDataset& scenario, const SeriesPanel& scaled_panel,
                             const MinMaxScaler& scaler, const std::vector<ModelSpec>& models,
                             const std::vector<std::uint64_t>& seeds);

std::string eval_report_to_json(const EvalReport& report);
// Plot-data export: model,seed,window,nrmse rows.
void write_per_window_csv(const EvalReport& report, const std::string& path);

}  // namespace psagan
