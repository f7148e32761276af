#include "psagan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>
#include <utility>

#include <json.hpp>

#include "psagan/common.hpp"

namespace psagan {

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b, r = a % b;
    return (r != 0 && (r < 0) != (b < 0)) ? q - 1 : q;
}

std::int64_t floor_mod(std::int64_t a, std::int64_t b) {
    return a - floor_div(a, b) * b;
}

}  // namespace

// Howard Hinnant's branchless civil-calendar algorithms.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yr = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y = yr + (m <= 2);
}

std::int64_t parse_timestamp(const std::string& s) {
    int y = 0, mo = 0, dd = 0, h = 0, mi = 0, se = 0, used = 0;
    char sep[2] = {0, 0};
    bool ok = false;
    if (std::sscanf(s.c_str(), "%d-%d-%d%1[ T]%d:%d:%d%n", &y, &mo, &dd, sep, &h, &mi, &se,
                    &used) == 7 &&
        used == static_cast<int>(s.size())) {
        ok = true;
    } else if (std::sscanf(s.c_str(), "%d-%d-%d%1[ T]%d:%d%n", &y, &mo, &dd, sep, &h, &mi,
                           &used) == 6 &&
               used == static_cast<int>(s.size())) {
        ok = true;
        se = 0;
    } else if (std::sscanf(s.c_str(), "%d-%d-%d%n", &y, &mo, &dd, &used) == 3 &&
               used == static_cast<int>(s.size())) {
        ok = true;
        h = mi = se = 0;
    }
    if (!ok) throw IoError("unparseable timestamp '" + s + "'");
    if (mo < 1 || mo > 12 || dd < 1 || dd > 31 || h < 0 || h > 23 || mi < 0 || se < 0)
        throw IoError("timestamp '" + s + "' has out-of-range fields");
    std::int64_t days = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(dd));
    std::int64_t ry;
    unsigned rm, rd;
    civil_from_days(days, ry, rm, rd);
    if (ry != y || rm != static_cast<unsigned>(mo) || rd != static_cast<unsigned>(dd))
        throw IoError("timestamp '" + s + "' names a nonexistent date");
    if (mi != 0 || se != 0)
        throw IoError("timestamp '" + s + "' is not on the hourly grid");
    return days * 24 + h;
}

std::string format_timestamp(std::int64_t hours) {
    std::int64_t days = floor_div(hours, 24);
    std::int64_t hod = floor_mod(hours, 24);
    std::int64_t y;
    unsigned m, d;
    civil_from_days(days, y, m, d);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02u %02lld:00:00", static_cast<long long>(y), m,
                  d, static_cast<long long>(hod));
    return buf;
}

void SeriesPanel::set_split(std::int64_t split_hour) {
    std::int64_t idx = split_hour - start_hour;
    if (idx <= 0 || idx >= t_len())
        throw ConfigError("split " + format_timestamp(split_hour) + " falls outside the panel [" +
                          format_timestamp(start_hour) + ", " +
                          format_timestamp(start_hour + t_len()) + ")");
    split_idx = idx;
}

namespace {

// Shared tail of both loaders: per-series (hour, value) observations into a
// validated contiguous panel.
SeriesPanel assemble(std::vector<std::string> ids,
                     std::vector<std::vector<std::pair<std::int64_t, float>>> obs,
                     const std::string& path) {
    if (ids.empty()) throw IoError(path + " contains no series");
    SeriesPanel panel;
    panel.ids = std::move(ids);
    std::int64_t start = 0, len = 0;
    for (std::size_t s = 0; s < obs.size(); ++s) {
        auto& o = obs[s];
        std::sort(o.begin(), o.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        for (std::size_t i = 1; i < o.size(); ++i) {
            if (o[i].first == o[i - 1].first)
                throw IoError(path + ": duplicate observation for series " + panel.ids[s] +
                              " at " + format_timestamp(o[i].first));
            if (o[i].first != o[i - 1].first + 1)
                throw IoError(path + ": series " + panel.ids[s] + " is missing " +
                              format_timestamp(o[i - 1].first + 1));
        }
        if (o.empty()) throw IoError(path + ": series " + panel.ids[s] + " has no observations");
        if (s == 0) {
            start = o.front().first;
            len = static_cast<std::int64_t>(o.size());
        } else if (o.front().first != start || static_cast<std::int64_t>(o.size()) != len) {
            throw IoError(path + ": series " + panel.ids[s] + " covers [" +
                          format_timestamp(o.front().first) + ", +" + std::to_string(o.size()) +
                          "h) but series " + panel.ids[0] + " covers [" +
                          format_timestamp(start) + ", +" + std::to_string(len) + "h)");
        }
        std::vector<float> vals(o.size());
        for (std::size_t i = 0; i < o.size(); ++i) {
            if (!std::isfinite(o[i].second))
                throw IoError(path + ": non-finite value in series " + panel.ids[s] + " at " +
                              format_timestamp(o[i].first));
            vals[i] = o[i].second;
        }
        panel.values.push_back(std::move(vals));
    }
    panel.start_hour = start;
    return panel;
}

float parse_value(const std::string& field, int lineno, const std::string& path) {
    const char* c = field.c_str();
    char* end = nullptr;
    float v = std::strtof(c, &end);
    if (end == c || *end != '\0')
        throw IoError(path + " line " + std::to_string(lineno) + ": non-numeric value '" + field +
                      "'");
    return v;
}

}  // namespace

SeriesPanel load_panel_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::unordered_map<std::string, std::size_t> index;
    std::vector<std::string> ids;
    std::vector<std::vector<std::pair<std::int64_t, float>>> obs;
    std::string line;
    int lineno = 0;
    bool first = true;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::size_t c1 = line.find(','), c2 = c1 == std::string::npos
                                                  ? std::string::npos
                                                  : line.find(',', c1 + 1);
        if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos)
            throw IoError(path + " line " + std::to_string(lineno) +
                          ": expected series_id,timestamp,value");
        std::string id = line.substr(0, c1);
        std::string ts = line.substr(c1 + 1, c2 - c1 - 1);
        std::string val = line.substr(c2 + 1);
        if (first) {
            first = false;
            char* end = nullptr;
            std::strtof(val.c_str(), &end);
            if (end == val.c_str() || *end != '\0') continue;  // header row
        }
        auto [it, inserted] = index.emplace(id, ids.size());
        if (inserted) {
            ids.push_back(id);
            obs.emplace_back();
        }
        obs[it->second].emplace_back(parse_timestamp(ts), parse_value(val, lineno, path));
    }
    return assemble(std::move(ids), std::move(obs), path);
}

SeriesPanel load_panel_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::vector<std::string> ids;
    std::vector<std::vector<std::pair<std::int64_t, float>>> obs;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError(path + " line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.contains("start") || !j.contains("target"))
            throw IoError(path + " line " + std::to_string(lineno) +
                          ": record needs 'start' and 'target'");
        std::int64_t start = parse_timestamp(j["start"].get<std::string>());
        std::string id = j.contains("item_id") ? j["item_id"].get<std::string>()
                                               : std::to_string(ids.size());
        std::vector<std::pair<std::int64_t, float>> series;
        for (const auto& v : j["target"]) {
            if (!v.is_number())
                throw IoError(path + " line " + std::to_string(lineno) +
                              ": non-numeric target entry");
            series.emplace_back(start + static_cast<std::int64_t>(series.size()),
                                v.get<float>());
        }
        ids.push_back(id);
        obs.push_back(std::move(series));
    }
    return assemble(std::move(ids), std::move(obs), path);
}

SeriesPanel load_panel(const std::string& path, const std::string& format) {
    if (format == "csv") return load_panel_csv(path);
    if (format == "jsonlines") return load_panel_jsonl(path);
    throw ConfigError("unknown panel format '" + format + "' (csv|jsonlines)");
}

void save_panel_csv(const std::string& path, const SeriesPanel& panel) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "series_id,timestamp,value\n";
    char buf[48];
    for (std::int64_t s = 0; s < panel.n_series(); ++s) {
        const auto& id = panel.ids[static_cast<std::size_t>(s)];
        if (id.find_first_of(",\r\n") != std::string::npos)
            throw IoError("series id '" + id + "' cannot be written as CSV");
        for (std::int64_t t = 0; t < panel.t_len(); ++t) {
            // %.9g keeps every float distinguishable on reload
            std::snprintf(buf, sizeof buf, "%.9g",
                          panel.values[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)]);
            f << id << ',' << format_timestamp(panel.start_hour + t) << ',' << buf << '\n';
        }
    }
    if (!f) throw IoError("failed writing " + path);
}

float MinMaxScaler::fwd(float v, std::int64_t series) const {
    std::size_t i = per_series ? static_cast<std::size_t>(series) : 0;
    return (v - lo[i]) / (hi[i] - lo[i]);
}

float MinMaxScaler::inv(float v, std::int64_t series) const {
    std::size_t i = per_series ? static_cast<std::size_t>(series) : 0;
    return v * (hi[i] - lo[i]) + lo[i];
}

MinMaxScaler fit_minmax(const SeriesPanel& panel, bool per_series) {
    if (panel.split_idx <= 0)
        throw ContractError("scaler must be fit after the train/test split is set");
    MinMaxScaler s;
    s.per_series = per_series;
    auto fit_range = [&](std::int64_t s0, std::int64_t s1) {
        float lo = panel.values[s0][0], hi = lo;
        for (std::int64_t i = s0; i < s1; ++i)
            for (std::int64_t t = 0; t < panel.split_idx; ++t) {
                lo = std::min(lo, panel.values[i][t]);
                hi = std::max(hi, panel.values[i][t]);
            }
        if (hi == lo)
            throw NumericError("series " + panel.ids[s0] +
                               (per_series ? std::string("") : std::string(" (and dataset)")) +
                               " is constant over the training range; minmax is degenerate");
        s.lo.push_back(lo);
        s.hi.push_back(hi);
    };
    if (per_series)
        for (std::int64_t i = 0; i < panel.n_series(); ++i) fit_range(i, i + 1);
    else
        fit_range(0, panel.n_series());
    return s;
}

void scale_panel(SeriesPanel& panel, const MinMaxScaler& s) {
    if (panel.scaled) throw ContractError("panel is already scaled");
    for (std::int64_t i = 0; i < panel.n_series(); ++i)
        for (auto& v : panel.values[i]) v = s.fwd(v, i);
    panel.scaled = true;
}

void unscale_panel(SeriesPanel& panel, const MinMaxScaler& s) {
    if (!panel.scaled) throw ContractError("panel is not scaled");
    for (std::int64_t i = 0; i < panel.n_series(); ++i)
        for (auto& v : panel.values[i]) v = s.inv(v, i);
    panel.scaled = false;
}

std::vector<std::vector<float>> time_features(std::int64_t start_hour, std::int64_t T) {
    std::vector<std::vector<float>> rows(kDTime, std::vector<float>(T));
    for (std::int64_t t = 0; t < T; ++t) {
        std::int64_t abs_hour = start_hour + t;
        std::int64_t days = floor_div(abs_hour, 24);
        std::int64_t hod = floor_mod(abs_hour, 24);
        std::int64_t wd = floor_mod(days + 3, 7);  // 1970-01-01 was a Thursday
        std::int64_t y;
        unsigned m, d;
        civil_from_days(days, y, m, d);
        std::int64_t doy = days - days_from_civil(y, 1, 1);
        rows[0][t] = static_cast<float>(hod / 23.0 - 0.5);
        rows[1][t] = static_cast<float>(wd / 6.0 - 0.5);
        rows[2][t] = static_cast<float>((d - 1) / 30.0 - 0.5);
        rows[3][t] = static_cast<float>(doy / 365.0 - 0.5);
        rows[4][t] = static_cast<float>(std::log(2.0 + static_cast<double>(t)));
    }
    return rows;
}

Tensor value_windows(const SeriesPanel& panel, const std::vector<std::int64_t>& series,
                     const std::vector<std::int64_t>& starts, std::int64_t len) {
    if (series.size() != starts.size())
        throw DimensionError("series/starts size mismatch: " + std::to_string(series.size()) +
                             " vs " + std::to_string(starts.size()));
    std::int64_t b = static_cast<std::int64_t>(series.size());
    std::vector<float> data(static_cast<std::size_t>(b) * len);
    for (std::int64_t i = 0; i < b; ++i) {
        std::int64_t s = series[i], t0 = starts[i];
        if (s < 0 || s >= panel.n_series())
            throw IndexError("series index " + std::to_string(s) + " out of range [0, " +
                             std::to_string(panel.n_series()) + ")");
        if (t0 < 0 || t0 + len > panel.t_len())
            throw IndexError("window [" + std::to_string(t0) + ", " + std::to_string(t0 + len) +
                             ") exceeds panel length " + std::to_string(panel.t_len()));
        std::copy(panel.values[s].begin() + t0, panel.values[s].begin() + t0 + len,
                  data.begin() + i * len);
    }
    return Tensor::from({b, 1, len}, std::move(data));
}

Tensor feature_windows(const std::vector<std::vector<float>>& feats,
                       const std::vector<std::int64_t>& starts, std::int64_t len) {
    std::int64_t d = static_cast<std::int64_t>(feats.size());
    std::int64_t T = d > 0 ? static_cast<std::int64_t>(feats[0].size()) : 0;
    std::int64_t b = static_cast<std::int64_t>(starts.size());
    std::vector<float> data(static_cast<std::size_t>(b) * d * len);
    for (std::int64_t i = 0; i < b; ++i) {
        std::int64_t t0 = starts[i];
        if (t0 < 0 || t0 + len > T)
            throw IndexError("feature window [" + std::to_string(t0) + ", " +
                             std::to_string(t0 + len) + ") exceeds matrix length " +
                             std::to_string(T));
        for (std::int64_t r = 0; r < d; ++r)
            std::copy(feats[r].begin() + t0, feats[r].begin() + t0 + len,
                      data.begin() + (i * d + r) * len);
    }
    return Tensor::from({b, d, len}, std::move(data));
}

}  // namespace psagan
