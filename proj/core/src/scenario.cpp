#include "psagan/scenario.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "psagan/common.hpp"
#include "psagan/rng.hpp"

namespace psagan {

std::string scenario_kind_name(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::far_forecast: return "far_forecast";
        case ScenarioKind::stretch: return "stretch";
        case ScenarioKind::cold_start: return "cold_start";
    }
    throw ContractError("unknown scenario kind");
}

ScenarioKind scenario_kind_from_name(const std::string& name) {
    if (name == "far_forecast") return ScenarioKind::far_forecast;
    if (name == "stretch") return ScenarioKind::stretch;
    if (name == "cold_start") return ScenarioKind::cold_start;
    throw ConfigError("unknown scenario kind '" + name +
                      "' (far_forecast|stretch|cold_start)");
}

namespace {

void require_split(const SeriesPanel& panel) {
    if (panel.split_idx <= 0)
        throw ContractError("scenario construction needs the train/test split set");
}

std::vector<std::int64_t> rolling_windows(const SeriesPanel& panel, std::int64_t window) {
    std::vector<std::int64_t> starts;
    for (std::int64_t t = panel.split_idx; t + window <= panel.t_len(); t += window)
        starts.push_back(t);
    return starts;
}

}  // namespace

ScenarioDataset make_far_forecast_scenario(const SeriesPanel& panel, std::int64_t window,
                                           std::int64_t n_windows) {
    require_split(panel);
    if (window <= 0 || n_windows <= 0)
        throw ConfigError("far_forecast needs positive window and window count");
    std::int64_t need = window * n_windows;
    std::int64_t have = panel.t_len() - panel.split_idx;
    if (have < need)
        throw ConfigError("test range holds " + std::to_string(have) + " points but " +
                          std::to_string(n_windows) + " windows of " + std::to_string(window) +
                          " need " + std::to_string(need));
    ScenarioDataset sc;
    sc.kind = ScenarioKind::far_forecast;
    sc.window = window;
    sc.n_windows = n_windows;
    sc.forecast_len = window;
    for (std::int64_t w = 0; w < n_windows; ++w) {
        sc.forecast_starts.push_back(panel.split_idx + w * window);
        std::vector<MaskedRun> runs;
        if (w > 0) runs.push_back({-1, panel.split_idx, w * window});
        sc.window_masks.push_back(std::move(runs));
    }
    return sc;
}

ScenarioDataset make_stretch_scenario(const SeriesPanel& panel, std::int64_t stretch_len,
                                      std::uint64_t seed) {
    require_split(panel);
    double band_lo, band_hi;
    if (stretch_len == 50) {
        band_lo = 0.054;
        band_hi = 0.077;
    } else if (stretch_len == 110) {
        band_lo = 0.099;
        band_hi = 0.169;
    } else {
        throw ConfigError("no missing-fraction band pinned for stretch length " +
                          std::to_string(stretch_len) + " (use 50 or 110)");
    }
    std::int64_t half = panel.split_idx / 2;
    if (stretch_len > panel.split_idx - half)
        throw ConfigError("stretch length " + std::to_string(stretch_len) +
                          " exceeds the second half of the train range (" +
                          std::to_string(panel.split_idx - half) + ")");

    ScenarioDataset sc;
    sc.kind = ScenarioKind::stretch;
    sc.seed = seed;
    sc.stretch_len = stretch_len;
    Rng rng = Rng(seed).split("stretch");
    const double total = static_cast<double>(panel.n_series()) *
                         static_cast<double>(panel.split_idx);
    std::int64_t masked_points = 0;
    std::int64_t attempts = 0, max_attempts = 200000;
    while (masked_points < band_lo * total) {
        if (++attempts > max_attempts)
            throw ConfigError("could not place non-overlapping stretches after " +
                              std::to_string(max_attempts) + " draws");
        std::int64_t s = rng.uniform_int(0, panel.n_series() - 1);
        std::int64_t start = rng.uniform_int(half, panel.split_idx - stretch_len);
        bool overlaps = false;
        for (const auto& r : sc.masked)
            if (r.series == s && start < r.start + r.len && r.start < start + stretch_len) {
                overlaps = true;
                break;
            }
        if (overlaps) continue;
        sc.masked.push_back({s, start, stretch_len});
        masked_points += stretch_len;
    }
    sc.achieved_missing = masked_points / total;
    if (sc.achieved_missing > band_hi)
        throw ConfigError("panel too small for the stretch band: one more stretch of " +
                          std::to_string(stretch_len) + " overshoots to " +
                          std::to_string(sc.achieved_missing));
    std::sort(sc.masked.begin(), sc.masked.end(), [](const MaskedRun& a, const MaskedRun& b) {
        return a.series != b.series ? a.series < b.series : a.start < b.start;
    });
    sc.forecast_starts = rolling_windows(panel, sc.forecast_len);
    if (sc.forecast_starts.empty())
        throw ConfigError("test range too short for one forecast window");
    sc.window_masks.assign(sc.forecast_starts.size(), {});
    return sc;
}

ScenarioDataset make_cold_start_scenario(const SeriesPanel& panel, double fraction,
                                         std::uint64_t seed) {
    require_split(panel);
    std::int64_t n = panel.n_series();
    if (fraction <= 0.0 || fraction * n < 1.0)
        throw ConfigError("cold-start fraction " + std::to_string(fraction) + " selects under 1 of " +
                          std::to_string(n) + " series");
    std::int64_t k = static_cast<std::int64_t>(std::ceil(fraction * n));
    k = std::min(k, n);
    if (panel.split_idx <= 24)
        throw ConfigError("cold start keeps the last 24 train values; train range is only " +
                          std::to_string(panel.split_idx));
    if (panel.t_len() - panel.split_idx < 32)
        throw ConfigError("test range too short for one forecast window");

    ScenarioDataset sc;
    sc.kind = ScenarioKind::cold_start;
    sc.seed = seed;
    sc.fraction = fraction;
    Rng rng = Rng(seed).split("cold_start");
    std::vector<std::int64_t> order(n);
    for (std::int64_t i = 0; i < n; ++i) order[i] = i;
    for (std::int64_t i = n - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_int(0, i)]);
    sc.cold_series.assign(order.begin(), order.begin() + k);
    std::sort(sc.cold_series.begin(), sc.cold_series.end());
    for (std::int64_t s : sc.cold_series) sc.masked.push_back({s, 0, panel.split_idx - 24});
    sc.achieved_missing = static_cast<double>(k) * (panel.split_idx - 24) /
                          (static_cast<double>(n) * panel.split_idx);
    sc.forecast_starts = {panel.split_idx};
    sc.window_masks = {{}};
    return sc;
}

Tensor augmentation_mix(const Tensor& real, const Tensor& synth) {
    if (real.shape() != synth.shape())
        throw DimensionError("augmentation mix needs aligned batches, got " +
                             shape_str(real.shape()) + " vs " + shape_str(synth.shape()));
    return scale(add(real, synth), 0.5f);
}

std::vector<std::vector<char>> observation_mask(const ScenarioDataset& sc, std::int64_t n_series,
                                                std::int64_t t_len, std::int64_t window_index) {
    if (window_index < 0 ||
        window_index >= static_cast<std::int64_t>(sc.window_masks.size()))
        throw ContractError("window index " + std::to_string(window_index) + " out of range [0, " +
                            std::to_string(sc.window_masks.size()) + ")");
    std::vector<std::vector<char>> mask(n_series, std::vector<char>(t_len, 1));
    auto apply = [&](const MaskedRun& r) {
        std::int64_t lo = std::max<std::int64_t>(r.start, 0);
        std::int64_t hi = std::min<std::int64_t>(r.start + r.len, t_len);
        std::int64_t s0 = r.series < 0 ? 0 : r.series;
        std::int64_t s1 = r.series < 0 ? n_series : r.series + 1;
        for (std::int64_t s = s0; s < s1; ++s)
            for (std::int64_t t = lo; t < hi; ++t) mask[s][t] = 0;
    };
    for (const auto& r : sc.masked) apply(r);
    for (const auto& r : sc.window_masks[window_index]) apply(r);
    return mask;
}

std::string scenario_to_json(const ScenarioDataset& sc) {
    nlohmann::json j;
    j["kind"] = scenario_kind_name(sc.kind);
    j["seed"] = sc.seed;
    j["forecast_len"] = sc.forecast_len;
    j["forecast_starts"] = sc.forecast_starts;
    auto runs_json = [](const std::vector<MaskedRun>& runs) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& r : runs) a.push_back({r.series, r.start, r.len});
        return a;
    };
    j["masked"] = runs_json(sc.masked);
    nlohmann::json wm = nlohmann::json::array();
    for (const auto& runs : sc.window_masks) wm.push_back(runs_json(runs));
    j["window_masks"] = wm;
    j["cold_series"] = sc.cold_series;
    j["achieved_missing"] = sc.achieved_missing;
    j["params"] = {{"window", sc.window},
                   {"n_windows", sc.n_windows},
                   {"stretch_len", sc.stretch_len},
                   {"fraction", sc.fraction}};
    return j.dump(2);
}

ScenarioDataset scenario_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(std::string("scenario manifest is not valid JSON: ") + e.what());
    }
    try {
        ScenarioDataset sc;
        sc.kind = scenario_kind_from_name(j.at("kind").get<std::string>());
        sc.seed = j.at("seed").get<std::uint64_t>();
        sc.forecast_len = j.at("forecast_len").get<std::int64_t>();
        sc.forecast_starts = j.at("forecast_starts").get<std::vector<std::int64_t>>();
        auto runs_from = [](const nlohmann::json& a) {
            std::vector<MaskedRun> runs;
            for (const auto& r : a)
                runs.push_back({r.at(0).get<std::int64_t>(), r.at(1).get<std::int64_t>(),
                                r.at(2).get<std::int64_t>()});
            return runs;
        };
        sc.masked = runs_from(j.at("masked"));
        for (const auto& a : j.at("window_masks")) sc.window_masks.push_back(runs_from(a));
        sc.cold_series = j.at("cold_series").get<std::vector<std::int64_t>>();
        sc.achieved_missing = j.at("achieved_missing").get<double>();
        sc.window = j.at("params").at("window").get<std::int64_t>();
        sc.n_windows = j.at("params").at("n_windows").get<std::int64_t>();
        sc.stretch_len = j.at("params").at("stretch_len").get<std::int64_t>();
        sc.fraction = j.at("params").at("fraction").get<double>();
        if (sc.window_masks.size() != sc.forecast_starts.size())
            throw ArtifactError("scenario manifest: window_masks and forecast_starts disagree");
        return sc;
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(std::string("scenario manifest is missing fields: ") + e.what());
    }
}

}  // namespace psagan
