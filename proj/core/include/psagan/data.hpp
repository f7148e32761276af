#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psagan/tensor.hpp"

namespace psagan {

// ---- hourly timestamp grid ----------------------------------------------
// Times are epoch hours (hours since 1970-01-01 00:00). Dates use the
// proleptic Gregorian calendar.

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d);
void civil_from_days(std::int64_t days, std::int64_t& y, unsigned& m, unsigned& d);

// Accepts "YYYY-MM-DD", "YYYY-MM-DD HH:MM" and "YYYY-MM-DD HH:MM:SS" (space
// or 'T'); minutes/seconds must be zero. Throws IoError otherwise.
std::int64_t parse_timestamp(const std::string& s);
std::string format_timestamp(std::int64_t hours);

// ---- panel ---------------------------------------------------------------

struct SeriesPanel {
    std::vector<std::string> ids;             // first-appearance order
    std::vector<std::vector<float>> values;   // [n_series][t_len]
    std::int64_t start_hour = 0;
    std::int64_t split_idx = 0;               // first test position (= train length)
    bool scaled = false;

    std::int64_t n_series() const { return static_cast<std::int64_t>(values.size()); }
    std::int64_t t_len() const {
        return values.empty() ? 0 : static_cast<std::int64_t>(values[0].size());
    }
    // Positions the train/test boundary at the given timestamp.
    void set_split(std::int64_t split_hour);
};

SeriesPanel load_panel_csv(const std::string& path);
SeriesPanel load_panel_jsonl(const std::string& path);
SeriesPanel load_panel(const std::string& path, const std::string& format);

// Writes the CSV panel format (series_id,timestamp,value plus header);
// values print with enough digits that a reload is bit-exact.
void save_panel_csv(const std::string& path, const SeriesPanel& panel);

// ---- scaling ---------------------------------------------------------------
// Fit on the training range only; the affine map extends past [0,1] for test
// values outside the train extremes, which is intended.

struct MinMaxScaler {
    bool per_series = false;
    std::vector<float> lo, hi;                // one entry, or one per series

    float fwd(float v, std::int64_t series) const;
    float inv(float v, std::int64_t series) const;
};

MinMaxScaler fit_minmax(const SeriesPanel& panel, bool per_series);
void scale_panel(SeriesPanel& panel, const MinMaxScaler& s);
void unscale_panel(SeriesPanel& panel, const MinMaxScaler& s);

// ---- time features ---------------------------------------------------------

constexpr std::int64_t kDTime = 5;

// Rows: HourOfDay, DayOfWeek (Monday = 0), DayOfMonth, DayOfYear — each
// index/(cardinality−1) − 0.5 — and Age = log(2 + t) with t zero-based.
std::vector<std::vector<float>> time_features(std::int64_t start_hour, std::int64_t T);

// ---- window batching -------------------------------------------------------

// Gathers value windows [b,1,len]; throws IndexError past the panel bounds.
Tensor value_windows(const SeriesPanel& panel, const std::vector<std::int64_t>& series,
                     const std::vector<std::int64_t>& starts, std::int64_t len);
// Gathers feature windows [b,d,len] from a [d][T] matrix.
Tensor feature_windows(const std::vector<std::vector<float>>& feats,
                       const std::vector<std::int64_t>& starts, std::int64_t len);

}  // namespace psagan
