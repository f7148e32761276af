#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "oracles.hpp"
#include "psagan/checkpoint.hpp"
#include "psagan/train.hpp"

using namespace psagan;

namespace {

SeriesPanel train_panel(std::int64_t n, std::int64_t t, std::int64_t split) {
    SeriesPanel p;
    p.start_hour = parse_timestamp("2013-06-01 00:00:00");
    for (std::int64_t s = 0; s < n; ++s) {
        std::vector<float> v(t);
        for (std::int64_t i = 0; i < t; ++i)
            v[i] = static_cast<float>(std::sin(2.0 * 3.14159265 * i / 24.0 + 0.7 * s) +
                                      0.05 * s);
        p.values.push_back(std::move(v));
        p.ids.push_back("s" + std::to_string(s));
    }
    p.split_idx = split;
    scale_panel(p, fit_minmax(p, false));
    return p;
}

std::string scratch_dir(const std::string& stem) {
    auto d = std::filesystem::temp_directory_path() / stem;
    std::filesystem::remove_all(d);
    return d.string();
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct MetricsLine {
    long long epoch, stage;
    double alpha, d_loss, g_loss, ml;
};

std::vector<MetricsLine> parse_metrics(const std::string& path) {
    std::ifstream f(path);
    std::vector<MetricsLine> out;
    std::string line;
    while (std::getline(f, line)) {
        MetricsLine m{};
        REQUIRE(std::sscanf(line.c_str(), "epoch=%lld stage=%lld alpha=%lf d_loss=%lf g_loss=%lf ml=%lf",
                            &m.epoch, &m.stage, &m.alpha, &m.d_loss, &m.g_loss, &m.ml) == 6);
        out.push_back(m);
    }
    return out;
}

}  // namespace

TEST_CASE("stage schedule: growth index and linear fade") {
    TrainConfig cfg;  // stage 1000, fade 500
    CHECK(schedule_stage(0, cfg, 5).growth_stage == 1);
    CHECK(schedule_stage(0, cfg, 5).alpha == 1.0f);
    CHECK(schedule_stage(999, cfg, 5).growth_stage == 1);
    CHECK(schedule_stage(1000, cfg, 5).growth_stage == 2);
    CHECK(schedule_stage(1000, cfg, 5).alpha == 0.0f);
    CHECK(schedule_stage(1250, cfg, 5).growth_stage == 2);
    CHECK(schedule_stage(1250, cfg, 5).alpha == doctest::Approx(0.5));
    CHECK(schedule_stage(1500, cfg, 5).alpha == 1.0f);
    CHECK(schedule_stage(5999, cfg, 5).growth_stage == 5);
    CHECK(schedule_stage(5999, cfg, 5).alpha == 1.0f);
    // Stage index clamps once every block exists.
    CHECK(schedule_stage(4500, cfg, 3).growth_stage == 3);
    CHECK(schedule_stage(4500, cfg, 3).alpha == 1.0f);

    TrainConfig abrupt = cfg;
    abrupt.fade_in = false;
    CHECK(schedule_stage(1250, abrupt, 5).alpha == 1.0f);
    CHECK(schedule_stage(1000, abrupt, 5).growth_stage == 2);

    CHECK_THROWS_AS(schedule_stage(-1, cfg, 5), ContractError);
    CHECK_THROWS_AS(schedule_stage(cfg.epochs, cfg, 5), ContractError);
}

TEST_CASE("training config rejects inconsistent fields") {
    TrainConfig cfg;
    cfg.validate();
    TrainConfig bad = cfg;
    bad.fade_epochs = bad.stage_epochs + 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.tau = 20;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.lr = 0.0f;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("least-squares objectives: fixed points and hand values") {
    Tensor ones = Tensor::full({4}, 1.0f);
    Tensor zeros = Tensor::zeros({4});
    CHECK(lsgan_d_loss(ones, zeros).item() == doctest::Approx(0.0));
    CHECK(lsgan_d_loss(zeros, ones).item() == doctest::Approx(1.0));
    CHECK(lsgan_g_loss(ones).item() == doctest::Approx(0.0));
    CHECK(lsgan_g_loss(zeros).item() == doctest::Approx(0.5));
    CHECK(lsgan_g_loss(Tensor::from({2}, {0.0f, 2.0f})).item() == doctest::Approx(0.5));
    CHECK_THROWS_AS(lsgan_d_loss(ones, Tensor::zeros({3})), DimensionError);

    // d/ds of the generator objective is (s - 1)/batch.
    Tensor scores = Tensor::from({4}, {0.0f, 0.5f, 1.0f, 2.0f}, true);
    backward(lsgan_g_loss(scores));
    for (int i = 0; i < 4; ++i)
        CHECK(scores.grad()[i] == doctest::Approx((scores.data()[i] - 1.0f) / 4.0f));
}

TEST_CASE("moment penalty: zero case, hand value, homogeneity, gradient") {
    Tensor a = Tensor::from({2, 3}, {0.1f, 0.5f, 0.9f, 0.2f, 0.4f, 0.3f});
    CHECK(moment_loss_term(a, a).item() == doctest::Approx(0.0));

    Tensor fake = Tensor::from({1, 2}, {0.4f, 0.6f});  // mean 0.5, sigma 0.1
    Tensor real = Tensor::from({1, 2}, {0.1f, 0.5f});  // mean 0.3, sigma 0.2
    CHECK(moment_loss_term(fake, real).item() == doctest::Approx(0.3));

    CHECK(moment_loss_term(scale(fake, 3.0f), scale(real, 3.0f)).item() ==
          doctest::Approx(0.9));

    // Mean-only and std-only mismatches are both visible.
    Tensor shifted = add_const(a, 0.25f);
    CHECK(moment_loss_term(shifted, a).item() == doctest::Approx(0.25));
    Tensor spread = add(scale(sub(a, mean_all(a)), 2.0f), mean_all(a));
    CHECK(moment_loss_term(spread, a).item() > 0.0f);

    Rng rng(33);
    Tensor x = Tensor::from({2, 4}, {0.1f, 0.9f, 0.4f, 0.7f, 0.3f, 0.2f, 0.8f, 0.5f}, true);
    Tensor ref = Tensor::from({2, 4}, {0.6f, 0.1f, 0.2f, 0.9f, 0.5f, 0.3f, 0.7f, 0.4f});
    Tensor w = Tensor::full({1}, 1.0f);
    auto gc = oracles::check_grad([&] { return moment_loss_term(x, ref); }, w, x);
    CHECK_MESSAGE(gc.ok, gc.detail);
    CHECK_THROWS_AS(moment_loss_term(a, Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("adam: fixed point, signed first step, quadratic descent, poisoned grad") {
    AdamState state;
    std::vector<NamedTensor> params;
    params.push_back({"w", Tensor::from({3}, {1.0f, 2.0f, -3.0f}, true)});
    std::vector<float> before = params[0].value.data();
    adam_step(params, state, 5e-4f);  // grads never touched: zero-initialized
    CHECK(params[0].value.data() == before);
    CHECK(state.step == 1);

    params[0].value.grad() = {0.5f, -2.0f, 0.001f};
    adam_step(params, state, 5e-4f);
    for (int i = 0; i < 3; ++i) {
        float delta = params[0].value.data()[i] - before[i];
        float sign = (i == 1) ? 1.0f : -1.0f;  // minus lr times the gradient sign
        CHECK(delta == doctest::Approx(sign * 5e-4f).epsilon(1e-3));
    }
    CHECK(params[0].value.grad() == std::vector<float>{0.0f, 0.0f, 0.0f});

    // f(theta) = theta^2 from 1: strictly decreasing under the default rate.
    std::vector<NamedTensor> quad;
    quad.push_back({"theta", Tensor::from({1}, {1.0f}, true)});
    AdamState qs;
    float prev = 1.0f;
    for (int step = 0; step < 100; ++step) {
        backward(mul(quad[0].value, quad[0].value));
        adam_step(quad, qs, 5e-4f);
        float cur = quad[0].value.data()[0];
        CHECK(cur < prev);
        CHECK(cur > 0.0f);
        prev = cur;
    }

    params[0].value.grad() = {0.0f, std::nanf(""), 0.0f};
    CHECK_THROWS_WITH_AS(adam_step(params, state, 5e-4f), doctest::Contains("'w'"),
                         NumericError);
}

TEST_CASE("full-resolution windows pool to the stage grid by block means") {
    Rng rng(9);
    Tensor x = random_normal({2, 1, 16}, rng);
    Tensor pooled = stage_pool(x, 4);
    REQUIRE(pooled.shape() == Shape{2, 1, 4});
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 4; ++i) {
            float m = 0;
            for (int k = 0; k < 4; ++k) m += x.data()[b * 16 + 4 * i + k];
            CHECK(pooled.data()[b * 4 + i] == doctest::Approx(m / 4.0f));
        }
    CHECK(stage_pool(x, 16).data() == x.data());
    CHECK_THROWS_AS(stage_pool(x, 3), DimensionError);
}

TEST_CASE("aligned batches pair real windows with their own positions and noise") {
    SeriesPanel p = train_panel(3, 200, 160);
    auto feats = time_features(p.start_hour, p.t_len());
    Rng rng(21);
    AlignedBatch b = sample_aligned_batch(p, feats, 16, 12, 0, rng);
    REQUIRE(b.real.shape() == Shape{12, 1, 16});
    REQUIRE(b.feats.shape() == Shape{12, kDTime, 16});
    REQUIRE(b.noise.shape() == Shape{12, 1, 16});
    CHECK_FALSE(b.context_values.defined());
    for (int i = 0; i < 12; ++i) {
        CHECK(b.series[i] >= 0);
        CHECK(b.series[i] < 3);
        CHECK(b.starts[i] >= 0);
        CHECK(b.starts[i] <= 160 - 16);  // whole window inside the training range
        for (int t = 0; t < 16; ++t) {
            CHECK(b.real.data()[i * 16 + t] == p.values[b.series[i]][b.starts[i] + t]);
            CHECK(b.feats.data()[(i * kDTime) * 16 + t] == feats[0][b.starts[i] + t]);
        }
    }
    Rng rng2(21);
    AlignedBatch again = sample_aligned_batch(p, feats, 16, 12, 0, rng2);
    CHECK(again.starts == b.starts);
    CHECK(again.noise.data() == b.noise.data());

    SeriesPanel shallow = train_panel(2, 40, 10);
    CHECK_THROWS_AS(sample_aligned_batch(shallow, feats, 16, 4, 0, rng), ConfigError);
}

TEST_CASE("history windows pad the left edge and mark padding in the mask") {
    SeriesPanel p = train_panel(2, 120, 100);
    auto [cv, cm] = context_windows(p, {0, 1}, {64, 10}, 64);
    REQUIRE(cv.shape() == Shape{2, 1, 64});
    for (int k = 0; k < 64; ++k) {
        CHECK(cv.data()[k] == p.values[0][k]);
        CHECK(cm.data()[k] == 1.0f);
    }
    for (int k = 0; k < 54; ++k) {
        CHECK(cv.data()[64 + k] == 0.0f);
        CHECK(cm.data()[64 + k] == 0.0f);
    }
    for (int k = 54; k < 64; ++k) {
        CHECK(cv.data()[64 + k] == p.values[1][k - 54]);
        CHECK(cm.data()[64 + k] == 1.0f);
    }
    CHECK_THROWS_AS(context_windows(p, {0}, {10, 20}, 8), DimensionError);
    CHECK_THROWS_AS(context_windows(p, {5}, {10}, 8), IndexError);
}

TEST_CASE("smoke training run: finishes, logs, checkpoints, reproduces") {
    SeriesPanel p = train_panel(4, 96, 72);
    TrainConfig cfg;
    cfg.tau = 16;
    cfg.epochs = 2;
    cfg.batches_per_epoch = 3;
    cfg.batch_size = 8;
    cfg.seed = 11;
    std::string dir_a = scratch_dir("psagan_train_a");
    TrainResult res = train(p, cfg, dir_a);
    CHECK(res.final_stage == 1);
    CHECK(res.stage_checkpoints.empty());

    auto lines = parse_metrics(res.metrics_path);
    REQUIRE(lines.size() == 2);
    for (const auto& m : lines) {
        CHECK(m.stage == 1);
        CHECK(m.alpha == 1.0);
        CHECK(std::isfinite(m.d_loss));
        CHECK(std::isfinite(m.g_loss));
        CHECK(std::isfinite(m.ml));
        CHECK(m.ml >= 0.0);
    }

    Checkpoint ckpt = load_checkpoint(res.checkpoint_path);
    CHECK(ckpt.growth_stage == 1);
    ModelShape shape;
    shape.tau = 16;
    shape.n_series = 4;
    Rng r0(0);
    GeneratorStack g(shape, r0);
    DiscriminatorStack d(shape, r0);
    restore(ckpt, g, d);
    Rng noise_rng(3);
    Tensor sample = g.forward(random_normal({2, 1, 16}, noise_rng), {0, 1},
                              feature_windows(time_features(p.start_hour, 96), {0, 8}, 16), false);
    REQUIRE(sample.shape() == Shape{2, 1, 16});
    for (float v : sample.data()) CHECK(std::isfinite(v));

    std::string dir_b = scratch_dir("psagan_train_b");
    train(p, cfg, dir_b);
    CHECK(slurp(dir_a + "/metrics.log") == slurp(dir_b + "/metrics.log"));

    SeriesPanel raw = train_panel(4, 96, 72);
    raw.scaled = false;
    CHECK_THROWS_AS(train(raw, cfg, scratch_dir("psagan_train_c")), ContractError);
}

TEST_CASE("progressive run grows exactly on the boundaries and keeps old weights") {
    SeriesPanel p = train_panel(3, 256, 200);
    TrainConfig cfg;
    cfg.tau = 64;  // three stages
    cfg.epochs = 6;
    cfg.batches_per_epoch = 1;
    cfg.batch_size = 4;
    cfg.stage_epochs = 2;
    cfg.fade_epochs = 1;
    cfg.seed = 5;

    std::vector<std::int64_t> grow_epochs;
    std::vector<MetricsLine> trace;
    std::map<std::string, std::vector<float>> last_params;
    std::size_t count_before_grow = 0;
    bool preserved = true, count_grew = true;

    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochStats& st, GeneratorStack& g, DiscriminatorStack& d) {
        trace.push_back({st.epoch, st.stage, st.alpha, st.d_loss, st.g_loss, st.ml});
        last_params.clear();
        for (auto& pr : g.params()) last_params["g:" + pr.name] = pr.value.data();
        for (auto& pr : d.params()) last_params["d:" + pr.name] = pr.value.data();
        count_before_grow = last_params.size();
    };
    hooks.on_grow = [&](std::int64_t epoch, GeneratorStack& g, DiscriminatorStack& d) {
        grow_epochs.push_back(epoch);
        std::map<std::string, std::vector<float>> now;
        for (auto& pr : g.params()) now["g:" + pr.name] = pr.value.data();
        for (auto& pr : d.params()) now["d:" + pr.name] = pr.value.data();
        count_grew = count_grew && now.size() > count_before_grow;
        for (auto& [name, vals] : last_params) {
            auto it = now.find(name);
            if (it == now.end() || it->second != vals) preserved = false;
        }
        CHECK(g.alpha() == 0.0f);
    };

    std::string dir = scratch_dir("psagan_train_grow");
    TrainResult res = train(p, cfg, dir, hooks);
    CHECK(grow_epochs == std::vector<std::int64_t>{2, 4});
    CHECK(count_grew);
    CHECK(preserved);
    CHECK(res.final_stage == 3);
    REQUIRE(res.stage_checkpoints.size() == 2);
    CHECK(load_checkpoint(res.stage_checkpoints[0]).growth_stage == 1);
    CHECK(load_checkpoint(res.stage_checkpoints[1]).growth_stage == 2);
    CHECK(load_checkpoint(res.checkpoint_path).growth_stage == 3);

    REQUIRE(trace.size() == 6);
    for (const auto& m : trace) {
        StageState expect = schedule_stage(m.epoch, cfg, 3);
        CHECK(m.stage == expect.growth_stage);
        CHECK(m.alpha == doctest::Approx(expect.alpha));
    }
}

TEST_CASE("ablation switches alter the trajectory under a fixed seed") {
    SeriesPanel p = train_panel(4, 96, 72);
    TrainConfig cfg;
    cfg.tau = 16;
    cfg.epochs = 2;
    cfg.batches_per_epoch = 2;
    cfg.batch_size = 8;
    cfg.seed = 7;

    TrainConfig no_ml = cfg;
    no_ml.moment_loss = false;
    auto with_ml = parse_metrics(train(p, cfg, scratch_dir("psagan_abl_a")).metrics_path);
    auto without = parse_metrics(train(p, no_ml, scratch_dir("psagan_abl_b")).metrics_path);
    REQUIRE(with_ml.size() == 2);
    REQUIRE(without.size() == 2);
    CHECK(without[1].ml == 0.0);
    CHECK(with_ml[1].ml > 0.0);
    // The generator followed a different objective, so the adversarial game diverges.
    CHECK(with_ml[1].d_loss != without[1].d_loss);

    TrainConfig no_attn = cfg;
    no_attn.self_attention = false;
    auto plain = parse_metrics(train(p, no_attn, scratch_dir("psagan_abl_c")).metrics_path);
    CHECK(plain[1].g_loss != with_ml[1].g_loss);
}

TEST_CASE("abrupt-growth variant trains with alpha pinned to one") {
    SeriesPanel p = train_panel(3, 256, 200);
    TrainConfig cfg;
    cfg.tau = 32;
    cfg.epochs = 3;
    cfg.batches_per_epoch = 1;
    cfg.batch_size = 4;
    cfg.stage_epochs = 2;
    cfg.fade_epochs = 1;
    cfg.fade_in = false;
    cfg.seed = 13;
    auto lines = parse_metrics(train(p, cfg, scratch_dir("psagan_nofade")).metrics_path);
    REQUIRE(lines.size() == 3);
    for (const auto& m : lines) CHECK(m.alpha == 1.0);
    CHECK(lines[2].stage == 2);
}

TEST_CASE("history-conditioned variant trains end to end") {
    SeriesPanel p = train_panel(3, 120, 96);
    TrainConfig cfg;
    cfg.tau = 16;
    cfg.epochs = 1;
    cfg.batches_per_epoch = 2;
    cfg.batch_size = 6;
    cfg.context_length = 16;
    cfg.seed = 19;
    TrainResult res = train(p, cfg, scratch_dir("psagan_ctx"));
    Checkpoint ckpt = load_checkpoint(res.checkpoint_path);
    CHECK(ckpt.config_echo.find("context_length=16") != std::string::npos);
    bool has_ctx = false;
    for (auto& [name, t] : ckpt.entries)
        if (name.find(".ctx.") != std::string::npos) has_ctx = true;
    CHECK(has_ctx);
}
