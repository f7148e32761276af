#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "psagan/context_fid.hpp"

using namespace psagan;

namespace {

EncoderConfig tiny_encoder_cfg() {
    EncoderConfig cfg;
    cfg.channels = 8;
    cfg.embed_dim = 8;
    cfg.steps = 80;
    cfg.batch_size = 16;
    cfg.seed = 3;
    return cfg;
}

// Two well-separated families: fast (period 12) and slow (period 48) waves.
SeriesPanel two_class_panel(std::int64_t per_class, std::int64_t t) {
    SeriesPanel p;
    p.start_hour = 0;
    for (std::int64_t s = 0; s < 2 * per_class; ++s) {
        double period = s < per_class ? 12.0 : 48.0;
        double phase = 0.9 * static_cast<double>(s % per_class);
        std::vector<float> v(t);
        for (std::int64_t i = 0; i < t; ++i)
            v[i] = static_cast<float>(0.5 + 0.4 * std::sin(2.0 * 3.14159265 * i / period + phase));
        p.values.push_back(std::move(v));
        p.ids.push_back("s" + std::to_string(s));
    }
    p.scaled = true;  // values already live in [0,1]
    return p;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b, std::size_t row_a,
              std::size_t row_b, std::size_t d) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < d; ++i) {
        dot += a[row_a * d + i] * b[row_b * d + i];
        na += a[row_a * d + i] * a[row_a * d + i];
        nb += b[row_b * d + i] * b[row_b * d + i];
    }
    return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
}

}  // namespace

TEST_CASE("causal encoder: shapes, determinism, batch independence") {
    Rng rng(17);
    CausalEncoder enc(tiny_encoder_cfg(), rng);
    CHECK(enc.receptive_min() == 31);

    Rng data(5);
    Tensor w = random_normal({3, 1, 40}, data);
    Tensor e = enc.embed(w);
    REQUIRE(e.shape() == Shape{3, 8});
    for (float v : e.data()) CHECK(std::isfinite(v));

    // Each row embeds independently of its batch neighbours.
    for (int r = 0; r < 3; ++r) {
        Tensor one = Tensor::from(
            {1, 1, 40}, std::vector<float>(w.data().begin() + r * 40, w.data().begin() + (r + 1) * 40));
        Tensor er = enc.embed(one);
        for (int j = 0; j < 8; ++j) CHECK(er.data()[j] == e.data()[r * 8 + j]);
    }

    CHECK_THROWS_AS(enc.embed(random_normal({2, 1, 30}, data)), ContractError);
    CHECK_THROWS_AS(enc.embed(random_normal({2, 3, 40}, data)), DimensionError);
}

TEST_CASE("causal encoder: the last step cannot leak backwards") {
    Rng rng(23);
    CausalEncoder enc(tiny_encoder_cfg(), rng);
    Rng data(7);
    const std::int64_t l = 48;
    Tensor x = random_normal({1, 1, l}, data);
    Tensor base = enc.features(x);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor y = Tensor::from({1, 1, l}, x.data());
        y.data()[l - 1] += data.uniform(0.5f, 2.0f);
        Tensor f = enc.features(y);
        bool earlier_equal = true;
        for (int c = 0; c < 8; ++c)
            for (int t = 0; t + 1 < l; ++t)
                if (f.data()[c * l + t] != base.data()[c * l + t]) earlier_equal = false;
        CHECK(earlier_equal);
        bool last_moved = false;
        for (int c = 0; c < 8; ++c)
            if (f.data()[c * l + l - 1] != base.data()[c * l + l - 1]) last_moved = true;
        CHECK(last_moved);
    }
}

TEST_CASE("embedding statistics: hand covariance and exact symmetry") {
    Tensor e = Tensor::from({2, 2}, {0, 0, 2, 0});
    GaussianStats st = gaussian_stats(e);
    CHECK(st.mean == std::vector<double>{1.0, 0.0});
    CHECK(st.cov == std::vector<double>{2.0, 0.0, 0.0, 0.0});

    Tensor same = Tensor::from({3, 2}, {0.4f, 0.7f, 0.4f, 0.7f, 0.4f, 0.7f});
    for (double c : gaussian_stats(same).cov) CHECK(c == 0.0);

    Rng rng(11);
    GaussianStats r = gaussian_stats(random_normal({7, 5}, rng));
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(r.cov[i * 5 + j] == r.cov[j * 5 + i]);

    CHECK_THROWS_AS(gaussian_stats(Tensor::zeros({1, 4})), ContractError);
    CHECK_THROWS_AS(gaussian_stats(Tensor::zeros({4})), DimensionError);
}

TEST_CASE("frechet distance: closed forms, symmetry, guards") {
    GaussianStats a{1, {0.0}, {1.0}};
    GaussianStats b{1, {1.0}, {1.0}};
    CHECK(frechet_distance(a, a) == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(frechet_distance(a, b) == doctest::Approx(1.0).epsilon(1e-6));
    GaussianStats c{1, {0.0}, {4.0}};
    CHECK(frechet_distance(a, c) == doctest::Approx(1.0).epsilon(1e-6));

    Rng rng(29);
    GaussianStats p = gaussian_stats(random_normal({40, 6}, rng));
    GaussianStats q = gaussian_stats(random_normal({40, 6}, rng));
    CHECK(frechet_distance(p, q) == doctest::Approx(frechet_distance(q, p)).epsilon(1e-6));
    CHECK(frechet_distance(p, p) == doctest::Approx(0.0).epsilon(1e-6));

    CHECK_THROWS_AS(frechet_distance(a, p), DimensionError);
    GaussianStats bad{1, {0.0}, {-1.0}};
    CHECK_THROWS_AS(frechet_distance(bad, a), NumericError);
}

TEST_CASE("frechet distance: disjoint draws from one generator stay close") {
    const std::int64_t n = 4096, d = 8;
    Rng rng(41);
    // Rows z = 0.3*eps + mild cross-channel mixing, shared by both samples.
    auto draw = [&](std::int64_t rows) {
        Tensor out = Tensor::zeros({rows, d});
        for (std::int64_t r = 0; r < rows; ++r) {
            float base = rng.normal();
            for (std::int64_t j = 0; j < d; ++j)
                out.data()[r * d + j] = 0.3f * rng.normal() + 0.1f * base;
        }
        return out;
    };
    double dist = frechet_distance(gaussian_stats(draw(n)), gaussian_stats(draw(n)));
    CHECK(dist < 0.05);
    CHECK(dist >= 0.0);
}

TEST_CASE("contrastive training separates wave families") {
    SeriesPanel p = two_class_panel(4, 256);
    EncoderConfig cfg = tiny_encoder_cfg();
    EncoderTrainResult res = train_encoder(p, 64, cfg);
    REQUIRE(res.losses.size() == static_cast<std::size_t>(cfg.steps));
    double early = 0, late = 0;
    for (int i = 0; i < 20; ++i) early += res.losses[i];
    for (int i = cfg.steps - 20; i < cfg.steps; ++i) late += res.losses[i];
    CHECK(late < early);

    for (auto& pr : res.encoder.params()) CHECK_FALSE(pr.value.requires_grad());

    // Four windows per series at staggered starts.
    std::vector<std::int64_t> series, starts;
    for (std::int64_t s = 0; s < 8; ++s)
        for (std::int64_t k = 0; k < 4; ++k) {
            series.push_back(s);
            starts.push_back(24 * k);
        }
    Tensor emb = res.encoder.embed(value_windows(p, series, starts, 64));
    auto& e = emb.data();
    double within = 0, across = 0;
    int nw = 0, nx = 0;
    for (std::size_t i = 0; i < series.size(); ++i)
        for (std::size_t j = i + 1; j < series.size(); ++j) {
            bool same_class = (series[i] < 4) == (series[j] < 4);
            double cs = cosine(e, e, i, j, 8);
            if (same_class) {
                within += cs;
                ++nw;
            } else {
                across += cs;
                ++nx;
            }
        }
    CHECK(within / nw > across / nx);

    CHECK_THROWS_AS(train_encoder(p, 32, cfg), ConfigError);  // subwindows under the RF
    SeriesPanel raw = p;
    raw.scaled = false;
    CHECK_THROWS_AS(train_encoder(raw, 64, cfg), ContractError);
}

TEST_CASE("score pipeline: determinism, self-score, noise ordering, degradation") {
    SeriesPanel p = two_class_panel(3, 200);
    EncoderConfig cfg = tiny_encoder_cfg();
    cfg.steps = 40;
    CausalEncoder enc = train_encoder(p, 64, cfg).encoder;

    WindowSource resample_real = [&](const std::vector<std::int64_t>&,
                                     const std::vector<std::int64_t>&, std::int64_t tau,
                                     Rng& rng) {
        std::int64_t b = 256;
        std::vector<std::int64_t> series(b), starts(b);
        for (auto i = 0; i < b; ++i) {
            series[i] = rng.uniform_int(0, p.n_series() - 1);
            starts[i] = rng.uniform_int(0, p.t_len() - tau);
        }
        return value_windows(p, series, starts, tau);
    };
    WindowSource white_noise = [](const std::vector<std::int64_t>& series,
                                  const std::vector<std::int64_t>&, std::int64_t tau, Rng& rng) {
        return random_normal({static_cast<std::int64_t>(series.size()), 1, tau}, rng);
    };

    ContextFidReport self = context_fid(enc, resample_real, p, 256, 64, 2, 77);
    ContextFidReport noise = context_fid(enc, white_noise, p, 256, 64, 2, 77);
    CHECK(self.mean >= 0.0);
    CHECK(noise.mean > 10.0 * self.mean);

    ContextFidReport again = context_fid(enc, resample_real, p, 256, 64, 2, 77);
    CHECK(again.scores == self.scores);
    ContextFidReport other = context_fid(enc, resample_real, p, 256, 64, 2, 78);
    CHECK(other.scores != self.scores);

    auto degraded = [&](float eps) {
        WindowSource src = [&p, eps](const std::vector<std::int64_t>& series,
                                     const std::vector<std::int64_t>& starts, std::int64_t tau,
                                     Rng& rng) {
            Tensor real = value_windows(p, series, starts, tau);
            return add(real, scale(random_normal(real.shape(), rng), eps));
        };
        return context_fid(enc, src, p, 256, 64, 2, 99).mean;
    };
    double d0 = degraded(0.0f), d1 = degraded(0.1f), d2 = degraded(0.3f);
    CHECK(d0 < d1);
    CHECK(d1 < d2);
    CHECK(d0 == doctest::Approx(0.0).epsilon(1e-6));  // aligned identical windows

    CHECK_THROWS_AS(context_fid(enc, white_noise, p, 256, 512, 2, 1), ConfigError);
    CHECK_THROWS_AS(context_fid(enc, white_noise, p, 1, 64, 2, 1), ContractError);
}

TEST_CASE("sample files round-trip bitwise and reject damage") {
    Rng rng(55);
    SampleFile s;
    s.tau = 16;
    s.series = {0, 3, 1};
    s.starts = {5, 90, 42};
    s.values = random_normal({3, 1, 16}, rng);
    std::string path = (std::filesystem::temp_directory_path() / "psagan_samples.bin").string();
    save_samples(path, s);
    SampleFile back = load_samples(path);
    CHECK(back.tau == s.tau);
    CHECK(back.series == s.series);
    CHECK(back.starts == s.starts);
    CHECK(back.values.data() == s.values.data());

    // Truncation and trailing garbage are both detected.
    std::string raw;
    {
        std::ifstream f(path, std::ios::binary);
        raw.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    }
    std::string cut = (std::filesystem::temp_directory_path() / "psagan_samples_cut.bin").string();
    {
        std::ofstream f(cut, std::ios::binary);
        f.write(raw.data(), static_cast<std::streamsize>(raw.size() - 7));
    }
    CHECK_THROWS_AS(load_samples(cut), ArtifactError);
    std::string fat = (std::filesystem::temp_directory_path() / "psagan_samples_fat.bin").string();
    {
        std::ofstream f(fat, std::ios::binary);
        f.write(raw.data(), static_cast<std::streamsize>(raw.size()));
        f << "xx";
    }
    CHECK_THROWS_AS(load_samples(fat), ArtifactError);
    CHECK_THROWS_AS(load_samples("/nonexistent/samples.bin"), ArtifactError);

    SampleFile bad = s;
    bad.starts.pop_back();
    CHECK_THROWS_AS(save_samples(path, bad), DimensionError);
}
