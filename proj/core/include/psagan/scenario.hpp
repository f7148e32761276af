#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psagan/data.hpp"
#include "psagan/tensor.hpp"

namespace psagan {

enum class ScenarioKind { far_forecast, stretch, cold_start };

std::string scenario_kind_name(ScenarioKind k);
ScenarioKind scenario_kind_from_name(const std::string& name);

// A contiguous run of unobserved positions; series == -1 spans every series.
struct MaskedRun {
    std::int64_t series = -1;
    std::int64_t start = 0;
    std::int64_t len = 0;
};

// A reproducible degradation of a panel: which positions the models may not
// observe, and which test windows get forecast. Masks are pure functions of
// (panel shape, parameters, seed).
struct ScenarioDataset {
    ScenarioKind kind = ScenarioKind::far_forecast;
    std::uint64_t seed = 0;
    std::int64_t forecast_len = 32;
    std::vector<std::int64_t> forecast_starts;         // absolute start per window
    std::vector<std::vector<MaskedRun>> window_masks;  // extra unobserved runs, per window
    std::vector<MaskedRun> masked;                     // unobserved runs for every window
    std::vector<std::int64_t> cold_series;
    double achieved_missing = 0.0;                     // fraction of the train region
    // parameter echo
    std::int64_t window = 32;
    std::int64_t n_windows = 0;
    std::int64_t stretch_len = 0;
    double fraction = 0.0;
};

// Seven (by default) forecast windows marching away from the train end;
// window w additionally hides the window*w positions between the train end
// and its own start.
ScenarioDataset make_far_forecast_scenario(const SeriesPanel& panel, std::int64_t window = 32,
                                           std::int64_t n_windows = 7);

// Hides non-overlapping runs of stretch_len inside the second half of the
// train range until the achieved missing fraction reaches the band pinned for
// that length (50 -> 5.4%..7.7%, 110 -> 9.9%..16.9%).
ScenarioDataset make_stretch_scenario(const SeriesPanel& panel, std::int64_t stretch_len,
                                      std::uint64_t seed);

// Truncates ceil(fraction * n) randomly chosen series to their last 24 train
// values; evaluates a single forecast window at the train end.
ScenarioDataset make_cold_start_scenario(const SeriesPanel& panel, double fraction,
                                         std::uint64_t seed);

// Elementwise mean of aligned real and synthetic batches.
Tensor augmentation_mix(const Tensor& real, const Tensor& synth);

// true = observed, for the given evaluation window.
std::vector<std::vector<char>> observation_mask(const ScenarioDataset& sc, std::int64_t n_series,
                                                std::int64_t t_len, std::int64_t window_index);

std::string scenario_to_json(const ScenarioDataset& sc);
ScenarioDataset scenario_from_json(const std::string& text);

}  // namespace psagan
