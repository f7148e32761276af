#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "psagan/eval.hpp"
#include "psagan/train.hpp"

using namespace psagan;

namespace {

struct ScaledPanel {
    SeriesPanel panel;
    MinMaxScaler scaler;
};

ScaledPanel make_panel(std::int64_t n, std::int64_t t_len, std::int64_t split, std::uint64_t seed,
                       float slope = 0.0f) {
    SeriesPanel p;
    p.start_hour = 0;
    Rng rng(seed);
    for (std::int64_t s = 0; s < n; ++s) {
        std::vector<float> v(static_cast<std::size_t>(t_len));
        for (std::int64_t i = 0; i < t_len; ++i)
            v[static_cast<std::size_t>(i)] =
                static_cast<float>(std::sin(2.0 * 3.14159265 * i / 24.0 + 0.9 * s) + slope * i +
                                   0.1 * s + 0.05 * rng.normal());
        p.values.push_back(std::move(v));
        p.ids.push_back("s" + std::to_string(s));
    }
    p.split_idx = split;
    MinMaxScaler sc = fit_minmax(p, true);
    scale_panel(p, sc);
    return {std::move(p), std::move(sc)};
}

GeneratorStack make_gen(std::int64_t tau, std::int64_t n_series, std::uint64_t seed,
                        std::int64_t context_length = 0) {
    ModelShape shape;
    shape.tau = tau;
    shape.n_series = n_series;
    shape.context_length = context_length;
    Rng rng(seed);
    GeneratorStack g(shape, rng);
    if (g.growth_stage() < shape.n_stages()) g.grow_to(shape.n_stages(), rng);
    g.set_alpha(1.0f);
    return g;
}

std::string scratch_dir(const std::string& stem) {
    auto d = std::filesystem::temp_directory_path() / stem;
    std::filesystem::remove_all(d);
    return d.string();
}

}  // namespace

TEST_CASE("nrmse: hand values, scale invariance, failure modes") {
    CHECK(nrmse({1.f, 2.f, 3.f}, {1.f, 2.f, 3.f}) == doctest::Approx(0.0));
    CHECK(nrmse({3.f, 3.f, 3.f, 3.f}, {2.f, 2.f, 2.f, 2.f}) == doctest::Approx(0.5));
    // scaling forecast and target together leaves the score unchanged
    CHECK(nrmse({30.f, 30.f}, {20.f, 20.f}) == doctest::Approx(0.5));
    CHECK(nrmse({0.f, 0.f}, {3.f, 3.f}) == doctest::Approx(1.0));
    // the normalizer is the mean absolute target, so signs cancel nothing
    CHECK(nrmse({1.f, -1.f}, {2.f, -2.f}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(nrmse({1.f}, {0.f}), NumericError);
    CHECK_THROWS_AS(nrmse({1.f, 2.f}, {1.f}), DimensionError);
    CHECK_THROWS_AS(nrmse({}, {}), DimensionError);
}

TEST_CASE("point forecast: horizon shape, determinism, alignment contracts") {
    auto sp = make_panel(2, 220, 160, 11);
    auto feats = time_features(sp.panel.start_hour, sp.panel.t_len());
    auto g = make_gen(32, 2, 5);

    Rng r1(7);
    auto fc = gan_forecast(g, sp.panel, sp.scaler, feats, 0, 160, 8, r1);
    REQUIRE(fc.size() == 32);
    for (float v : fc) CHECK(std::isfinite(v));

    Rng r2(7);
    auto fc2 = gan_forecast(g, sp.panel, sp.scaler, feats, 0, 160, 8, r2);
    CHECK(fc == fc2);
    Rng r3(8);
    auto fc3 = gan_forecast(g, sp.panel, sp.scaler, feats, 0, 160, 8, r3);
    CHECK(fc != fc3);

    // without history conditioning the panel values never reach the
    // generator: hiding everything changes nothing
    ObservationMask hidden(2, std::vector<char>(220, 0));
    Rng r4(7);
    auto fc4 = gan_forecast(g, sp.panel, sp.scaler, feats, 0, 160, 8, r4, &hidden);
    CHECK(fc == fc4);

    Rng r(0);
    ModelShape half;
    half.tau = 32;
    half.n_series = 2;
    Rng init(1);
    GeneratorStack shallow(half, init);  // still at stage 1, length 16
    CHECK_THROWS_AS(gan_forecast(shallow, sp.panel, sp.scaler, feats, 0, 160, 8, r),
                    ContractError);

    auto tiny = make_gen(16, 2, 5);
    CHECK_THROWS_AS(gan_forecast(tiny, sp.panel, sp.scaler, feats, 0, 160, 8, r), ContractError);

    auto wide = make_gen(64, 2, 5);
    CHECK_THROWS_AS(gan_forecast(wide, sp.panel, sp.scaler, feats, 0, 16, 8, r), ConfigError);

    CHECK_THROWS_AS(gan_forecast(g, sp.panel, sp.scaler, feats, 0, 200, 8, r), ConfigError);
    CHECK_THROWS_AS(gan_forecast(g, sp.panel, sp.scaler, feats, 5, 160, 8, r), IndexError);
    CHECK_THROWS_AS(gan_forecast(g, sp.panel, sp.scaler, feats, 0, 160, 0, r), ContractError);

    SeriesPanel raw = sp.panel;
    raw.scaled = false;
    CHECK_THROWS_AS(gan_forecast(g, raw, sp.scaler, feats, 0, 160, 8, r), ContractError);
}

TEST_CASE("point forecast: sample-mean spread shrinks like 1/sqrt(n)") {
    auto sp = make_panel(1, 220, 160, 3);
    auto feats = time_features(0, 220);
    auto g = make_gen(32, 1, 9);
    const int K = 20;
    auto spread = [&](std::int64_t n_samples, std::uint64_t base) {
        std::vector<std::vector<float>> runs;
        for (int k = 0; k < K; ++k) {
            Rng r(base + static_cast<std::uint64_t>(k));
            runs.push_back(gan_forecast(g, sp.panel, sp.scaler, feats, 0, 160, n_samples, r));
        }
        double acc = 0.0;
        for (std::size_t j = 0; j < 32; ++j) {
            double m = 0.0;
            for (const auto& run : runs) m += run[j];
            m /= K;
            double var = 0.0;
            for (const auto& run : runs) var += (run[j] - m) * (run[j] - m);
            acc += std::sqrt(var / (K - 1));
        }
        return acc / 32.0;
    };
    const double s8 = spread(8, 100);
    const double s32 = spread(32, 200);
    const double s128 = spread(128, 300);
    CHECK(s8 > s32);
    CHECK(s32 > s128);
    // each 4x sample increase should halve the spread, give or take noise
    CHECK(s8 / s32 > 1.4);
    CHECK(s8 / s32 < 2.9);
    CHECK(s32 / s128 > 1.4);
    CHECK(s32 / s128 < 2.9);
}

TEST_CASE("history conditioning reads only observed context") {
    auto sp = make_panel(1, 220, 160, 21);
    auto feats = time_features(0, 220);
    auto g = make_gen(32, 1, 13, 8);
    // the history correction is an exact identity at init; give it weight so
    // context actually reaches the output
    for (auto& nt : g.params())
        if (nt.name.find(".ctx.") != std::string::npos)
            std::fill(nt.value.data().begin(), nt.value.data().end(), 0.05f);

    // generation window for t=160 is [160, 192), so history is [152, 160)
    SeriesPanel poked = sp.panel;
    poked.values[0][155] += 0.5f;

    ObservationMask all(1, std::vector<char>(220, 1));
    Rng ra(5), rb(5);
    auto base = gan_forecast(g, sp.panel, sp.scaler, feats, 0, 160, 4, ra, &all);
    auto moved = gan_forecast(g, poked, sp.scaler, feats, 0, 160, 4, rb, &all);
    CHECK(base != moved);  // observed history feeds the generator

    ObservationMask hide = all;
    hide[0][155] = 0;
    Rng rc(5), rd(5);
    auto h1 = gan_forecast(g, sp.panel, sp.scaler, feats, 0, 160, 4, rc, &hide);
    auto h2 = gan_forecast(g, poked, sp.scaler, feats, 0, 160, 4, rd, &hide);
    CHECK(h1 == h2);  // a hidden position cannot leak through the context
}

TEST_CASE("imputation writes only masked positions") {
    auto sp = make_panel(2, 120, 96, 31);
    auto g = make_gen(16, 2, 7);

    ObservationMask all(2, std::vector<char>(120, 1));
    Rng r0(3);
    SeriesPanel same = gan_impute(g, sp.panel, all, 4, r0);
    CHECK(same.values == sp.panel.values);

    ObservationMask mask = all;
    for (std::int64_t t = 40; t < 70; ++t) mask[0][static_cast<std::size_t>(t)] = 0;
    mask[1][5] = 0;
    Rng r1(3);
    SeriesPanel filled = gan_impute(g, sp.panel, mask, 4, r1);
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t t = 0; t < 120; ++t) {
            if (mask[s][t])
                CHECK(filled.values[s][t] == sp.panel.values[s][t]);
            else
                CHECK(std::isfinite(filled.values[s][t]));
        }
    CHECK(filled.values[0][40] != sp.panel.values[0][40]);

    Rng r2(3);
    SeriesPanel again = gan_impute(g, sp.panel, mask, 4, r2);
    CHECK(again.values == filled.values);
    Rng r3(4);
    SeriesPanel other = gan_impute(g, sp.panel, mask, 4, r3);
    CHECK(other.values != filled.values);

    ObservationMask bad(1, std::vector<char>(120, 1));
    Rng r4(3);
    CHECK_THROWS_AS(gan_impute(g, sp.panel, bad, 4, r4), DimensionError);

    // a gap in a panel shorter than the generation window is unservable
    auto short_sp = make_panel(1, 12, 8, 5);
    ObservationMask sm(1, std::vector<char>(12, 1));
    sm[0][6] = 0;
    auto g1 = make_gen(16, 1, 7);
    Rng r5(3);
    CHECK_THROWS_AS(gan_impute(g1, short_sp.panel, sm, 4, r5), ConfigError);
    Rng r6(3);
    CHECK_THROWS_AS(gan_impute(g, sp.panel, mask, 0, r6), ContractError);
}

TEST_CASE("moving-average fill: lagged-window recursion") {
    std::vector<float> v{1.f, 2.f, 7.f, 9.f};
    std::vector<char> obs{1, 1, 0, 1};
    moving_average_fill(v, obs, 10);
    CHECK(v[2] == doctest::Approx(1.5));
    CHECK(v[0] == 1.f);
    CHECK(v[1] == 2.f);
    CHECK(v[3] == 9.f);

    // a gap with no history at all falls back to zero
    std::vector<float> lead{5.f, 4.f, 3.f};
    std::vector<char> lobs{0, 1, 1};
    moving_average_fill(lead, lobs, 10);
    CHECK(lead[0] == 0.0f);

    // imputed values feed later positions of the same gap
    std::vector<float> rec{2.f, -1.f, -1.f};
    std::vector<char> robs{1, 0, 0};
    moving_average_fill(rec, robs, 10);
    CHECK(rec[1] == doctest::Approx(2.0));
    CHECK(rec[2] == doctest::Approx(2.0));

    // the window limits the lookback
    std::vector<float> win{1.f, 2.f, 0.f, 0.f};
    std::vector<char> wobs{1, 1, 0, 0};
    moving_average_fill(win, wobs, 2);
    CHECK(win[2] == doctest::Approx(1.5));
    CHECK(win[3] == doctest::Approx(1.75));

    std::vector<float> a{1.f};
    std::vector<char> b{1, 1};
    CHECK_THROWS_AS(moving_average_fill(a, b, 10), DimensionError);
    std::vector<float> c{1.f};
    std::vector<char> d{0};
    CHECK_THROWS_AS(moving_average_fill(c, d, 0), ConfigError);

    SeriesPanel p;
    p.values = {{1.f, 0.f, 3.f}, {4.f, 5.f, 0.f}};
    p.ids = {"a", "b"};
    ObservationMask m{{1, 0, 1}, {1, 1, 0}};
    SeriesPanel f = moving_average_impute(p, m, 10);
    CHECK(f.values[0][1] == doctest::Approx(1.0));
    CHECK(f.values[1][2] == doctest::Approx(4.5));
    CHECK(f.values[0][0] == 1.f);
    CHECK(f.values[0][2] == 3.f);
}

TEST_CASE("mean imputer uses the observed training mean") {
    SeriesPanel p;
    p.values = {{1.f, 9.f, 3.f, 40.f, 50.f}};
    p.ids = {"a"};
    p.split_idx = 3;
    ObservationMask m{{1, 0, 1, 1, 0}};
    SeriesPanel f = mean_impute(p, m);
    CHECK(f.values[0][1] == doctest::Approx(2.0));  // observed train mean of {1, 3}
    CHECK(f.values[0][4] == doctest::Approx(2.0));  // test gaps get the same constant
    CHECK(f.values[0][0] == 1.f);
    CHECK(f.values[0][3] == 40.f);

    // without a split the whole length counts as training range
    SeriesPanel q;
    q.values = {{2.f, 4.f, 0.f}};
    q.ids = {"a"};
    ObservationMask qm{{1, 1, 0}};
    SeriesPanel fq = mean_impute(q, qm);
    CHECK(fq.values[0][2] == doctest::Approx(3.0));
}

TEST_CASE("scenario evaluation: run records, summaries, exports, determinism") {
    auto sp = make_panel(3, 256 + 64, 256, 41);
    auto dir = scratch_dir("psagan_eval_run");
    TrainConfig cfg;
    cfg.tau = 16;
    cfg.epochs = 1;
    cfg.batches_per_epoch = 2;
    cfg.batch_size = 8;
    cfg.seed = 5;
    TrainResult tr = train(sp.panel, cfg, dir);

    ScenarioDataset sc = make_far_forecast_scenario(sp.panel, 32, 2);
    std::vector<ModelSpec> models{
        {"gan", "gan", tr.checkpoint_path, 4, 10},
        {"ma", "moving_average", "", 1, 10},
        {"mean", "mean", "", 1, 10},
    };
    EvalReport rep = run_scenario_eval(sc, sp.panel, sp.scaler, models, {1, 2});
    CHECK_FALSE(rep.any_failed);
    REQUIRE(rep.runs.size() == 6);
    for (const auto& rec : rep.runs) {
        CHECK_FALSE(rec.failed);
        REQUIRE(rec.per_window.size() == 2);
        for (double w : rec.per_window) {
            CHECK(std::isfinite(w));
            CHECK(w >= 0.0);
        }
        CHECK(rec.aggregate == doctest::Approx((rec.per_window[0] + rec.per_window[1]) / 2));
    }
    CHECK(rep.runs[0].model == "gan");
    CHECK(rep.runs[0].seed == 1);
    CHECK(rep.runs[1].seed == 2);
    CHECK(rep.runs[4].model == "mean");

    REQUIRE(rep.summary.size() == 3);
    for (const auto& s : rep.summary) {
        REQUIRE(s.per_seed.size() == 2);
        CHECK(s.mean == doctest::Approx((s.per_seed[0] + s.per_seed[1]) / 2));
        CHECK(s.stddev >= 0.0);
    }
    // the baselines are seed-free, so both seeds agree exactly
    CHECK(rep.summary[1].per_seed[0] == rep.summary[1].per_seed[1]);
    CHECK(rep.summary[2].stddev == 0.0);

    EvalReport rep2 = run_scenario_eval(sc, sp.panel, sp.scaler, models, {1, 2});
    CHECK(eval_report_to_json(rep) == eval_report_to_json(rep2));

    const std::string csv_path = dir + "/per_window.csv";
    write_per_window_csv(rep, csv_path);
    std::ifstream csv(csv_path);
    std::string line;
    std::getline(csv, line);
    CHECK(line == "model,seed,window,nrmse");
    int rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 12);

    auto j = nlohmann::json::parse(eval_report_to_json(rep));
    CHECK(j["scenario"] == "far_forecast");
    CHECK(j["runs"].size() == 6);
    CHECK(j["summary"].size() == 3);

    CHECK_THROWS_AS(run_scenario_eval(sc, sp.panel, sp.scaler, {}, {1}), ConfigError);
    CHECK_THROWS_AS(run_scenario_eval(sc, sp.panel, sp.scaler, models, {}), ConfigError);
    std::vector<ModelSpec> badkind{{"x", "linear", "", 1, 10}};
    CHECK_THROWS_AS(run_scenario_eval(sc, sp.panel, sp.scaler, badkind, {1}), ConfigError);
    std::vector<ModelSpec> nockpt{{"g", "gan", "", 1, 10}};
    CHECK_THROWS_AS(run_scenario_eval(sc, sp.panel, sp.scaler, nockpt, {1}), ConfigError);
}

TEST_CASE("scenario evaluation: a missing artifact fails only its runs") {
    auto sp = make_panel(2, 256 + 64, 256, 43);
    ScenarioDataset sc = make_far_forecast_scenario(sp.panel, 32, 1);
    std::vector<ModelSpec> models{
        {"gan", "gan", "/nonexistent/ckpt.bin", 2, 10},
        {"ma", "moving_average", "", 1, 10},
    };
    EvalReport rep = run_scenario_eval(sc, sp.panel, sp.scaler, models, {1, 2});
    CHECK(rep.any_failed);
    REQUIRE(rep.runs.size() == 4);
    CHECK(rep.runs[0].failed);
    CHECK_FALSE(rep.runs[0].error.empty());
    CHECK(rep.runs[1].failed);
    CHECK_FALSE(rep.runs[2].failed);
    CHECK_FALSE(rep.runs[3].failed);
    CHECK(rep.summary[0].per_seed.empty());
    CHECK(rep.summary[1].per_seed.size() == 2);
    auto j = nlohmann::json::parse(eval_report_to_json(rep));
    CHECK(j["any_failed"] == true);
    CHECK(j["runs"][0].contains("error"));
}

TEST_CASE("cold-start evaluation scores only the truncated series") {
    auto sp = make_panel(5, 288, 256, 47);
    ScenarioDataset sc = make_cold_start_scenario(sp.panel, 0.4, 9);
    REQUIRE(sc.cold_series.size() == 2);
    std::vector<ModelSpec> models{{"mean", "mean", "", 1, 10}};
    EvalReport rep = run_scenario_eval(sc, sp.panel, sp.scaler, models, {1});
    REQUIRE(rep.runs.size() == 1);
    REQUIRE(rep.runs[0].per_window.size() == 1);

    // recompute with the public primitives: hide the evaluation window for
    // the truncated series, fill, and pool the NRMSE over just those series
    ObservationMask mask = observation_mask(sc, 5, 288, 0);
    for (std::int64_t s : sc.cold_series)
        for (std::int64_t t = sc.forecast_starts[0]; t < sc.forecast_starts[0] + sc.forecast_len;
             ++t)
            mask[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)] = 0;
    SeriesPanel filled = mean_impute(sp.panel, mask);
    std::vector<float> fc, ty;
    for (std::int64_t s : sc.cold_series)
        for (std::int64_t t = sc.forecast_starts[0]; t < sc.forecast_starts[0] + sc.forecast_len;
             ++t) {
            fc.push_back(sp.scaler.inv(
                filled.values[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)], s));
            ty.push_back(sp.scaler.inv(
                sp.panel.values[static_cast<std::size_t>(s)][static_cast<std::size_t>(t)], s));
        }
    CHECK(rep.runs[0].per_window[0] == doctest::Approx(nrmse(fc, ty)).epsilon(1e-12));
}

TEST_CASE("moving-average error grows with forecast distance on trending data") {
    double avg[3] = {0.0, 0.0, 0.0};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto sp = make_panel(1, 256 + 96, 256, 100 + seed, 0.05f);
        ScenarioDataset sc = make_far_forecast_scenario(sp.panel, 32, 3);
        std::vector<ModelSpec> models{{"ma", "moving_average", "", 1, 10}};
        EvalReport rep = run_scenario_eval(sc, sp.panel, sp.scaler, models, {seed});
        REQUIRE(rep.runs.size() == 1);
        REQUIRE_FALSE(rep.runs[0].failed);
        for (int w = 0; w < 3; ++w) avg[w] += rep.runs[0].per_window[static_cast<std::size_t>(w)];
    }
    CHECK(avg[0] < avg[1]);
    CHECK(avg[1] < avg[2]);
}
