#include "psagan/context_fid.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "psagan/train.hpp"

namespace psagan {

void EncoderConfig::validate() const {
    if (channels <= 0 || embed_dim <= 0 || depth <= 0)
        throw ConfigError("encoder dimensions must be positive");
    if (kernel < 2) throw ConfigError("encoder kernel must be at least 2");
    if (steps < 0 || batch_size <= 0 || negatives <= 0)
        throw ConfigError("encoder training budget must be positive");
    if (!(lr > 0.0f)) throw ConfigError("encoder lr must be positive");
}

CausalEncoder::CausalEncoder(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    convs_.reserve(cfg.depth);
    convs_.emplace_back(1, cfg.channels, cfg.kernel, 0, false, rng, 1);
    for (std::int64_t i = 1; i < cfg.depth; ++i)
        convs_.emplace_back(cfg.channels, cfg.channels, cfg.kernel, 0, false, rng,
                            std::int64_t(1) << i);
    head_ = LinearLayer(cfg.channels, cfg.embed_dim, false, rng);
}

std::int64_t CausalEncoder::receptive_min() const {
    return 1 + (cfg_.kernel - 1) * ((std::int64_t(1) << cfg_.depth) - 1);
}

Tensor CausalEncoder::features(const Tensor& x) {
    if (x.ndim() != 3 || x.dim(1) != 1)
        throw DimensionError("encoder expects [b,1,l] windows");
    // Left-only padding keeps every output causal: position t sees only <= t.
    std::int64_t pad = cfg_.kernel - 1;
    Tensor h = leaky_relu(convs_[0].forward(pad_lastdim(x, pad, 0), false), kLeakySlope);
    for (std::size_t i = 1; i < convs_.size(); ++i) {
        std::int64_t dil = std::int64_t(1) << i;
        Tensor branch = leaky_relu(
            convs_[i].forward(pad_lastdim(h, (cfg_.kernel - 1) * dil, 0), false), kLeakySlope);
        h = add(h, branch);
    }
    return h;
}

Tensor CausalEncoder::embed_train(const Tensor& windows) {
    if (windows.ndim() != 3 || windows.dim(1) != 1)
        throw DimensionError("encoder expects [b,1,l] windows");
    if (windows.dim(2) < receptive_min())
        throw ContractError("window length " + std::to_string(windows.dim(2)) +
                            " below the encoder's receptive minimum " +
                            std::to_string(receptive_min()));
    return head_.forward(max_lastdim(features(windows)), false);
}

Tensor CausalEncoder::embed(const Tensor& windows) {
    if (windows.ndim() != 3 || windows.dim(1) != 1)
        throw DimensionError("encoder expects [b,1,l] windows");
    NoGradGuard ng;
    const std::int64_t b = windows.dim(0);
    const std::int64_t l = windows.dim(2);
    const std::int64_t chunk = 512;
    Tensor out = Tensor::zeros({b, cfg_.embed_dim});
    const std::vector<float>& src = windows.data();
    for (std::int64_t at = 0; at < b; at += chunk) {
        std::int64_t m = std::min(chunk, b - at);
        Tensor sub = Tensor::from(
            {m, 1, l}, std::vector<float>(src.begin() + at * l, src.begin() + (at + m) * l));
        Tensor e = embed_train(sub);
        std::copy(e.data().begin(), e.data().end(), out.data().begin() + at * cfg_.embed_dim);
    }
    return out;
}

std::vector<NamedTensor> CausalEncoder::params() {
    std::vector<NamedTensor> params, buffers;
    for (std::size_t i = 0; i < convs_.size(); ++i)
        convs_[i].collect("enc.conv" + std::to_string(i), params, buffers);
    head_.collect("enc.head", params, buffers);
    return params;
}

void CausalEncoder::freeze() {
    for (auto& p : params()) p.value.set_requires_grad(false);
}

namespace {

Tensor row_dot(const Tensor& a, const Tensor& b) {
    std::int64_t n = a.dim(0), d = a.dim(1);
    return bmm(reshape(a, {n, 1, d}), reshape(b, {n, d, 1}));
}

}  // namespace

EncoderTrainResult train_encoder(const SeriesPanel& panel, std::int64_t tau,
                                 const EncoderConfig& cfg) {
    cfg.validate();
    if (!panel.scaled) throw ContractError("panel must be minmax-scaled before encoder training");
    Rng root(cfg.seed);
    Rng init = root.split("enc_init");
    CausalEncoder encoder(cfg, init);
    const std::int64_t rmin = encoder.receptive_min();
    if (tau / 2 < rmin)
        throw ConfigError("window length " + std::to_string(tau) +
                          " cannot host subwindows covering the receptive field " +
                          std::to_string(rmin));
    const std::int64_t limit = panel.split_idx > 0 ? panel.split_idx : panel.t_len();
    const std::int64_t max_start = limit - tau;
    if (max_start < 0)
        throw ConfigError("0 admissible windows of length " + std::to_string(tau) +
                          " in a range of " + std::to_string(limit));

    Rng sample = root.split("enc_sample");
    auto params = encoder.params();
    AdamState state;
    EncoderTrainResult result{std::move(encoder), {}};
    const std::int64_t b = cfg.batch_size;
    const std::int64_t n = panel.n_series();

    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<std::int64_t> series(b), starts(b);
        for (std::int64_t i = 0; i < b; ++i) {
            series[i] = sample.uniform_int(0, n - 1);
            starts[i] = sample.uniform_int(0, max_start);
        }
        auto subwindow = [&](std::int64_t len, std::vector<std::int64_t>& out_starts) {
            for (std::int64_t i = 0; i < b; ++i)
                out_starts[i] = starts[i] + sample.uniform_int(0, tau - len);
        };
        std::int64_t la = sample.uniform_int(tau / 2, tau);
        std::vector<std::int64_t> a_starts(b);
        subwindow(la, a_starts);
        Tensor za = result.encoder.embed_train(value_windows(panel, series, a_starts, la));

        std::int64_t lp = sample.uniform_int(tau / 2, tau);
        std::vector<std::int64_t> p_starts(b);
        subwindow(lp, p_starts);
        Tensor zp = result.encoder.embed_train(value_windows(panel, series, p_starts, lp));

        Tensor loss = scale(mean_all(log_sigmoid(row_dot(za, zp))), -1.0f);
        for (std::int64_t k = 0; k < cfg.negatives; ++k) {
            std::int64_t ln = sample.uniform_int(tau / 2, tau);
            std::vector<std::int64_t> n_series(b), n_starts(b);
            for (std::int64_t i = 0; i < b; ++i) {
                if (n > 1) {
                    do {
                        n_series[i] = sample.uniform_int(0, n - 1);
                    } while (n_series[i] == series[i]);
                    n_starts[i] = sample.uniform_int(0, limit - ln);
                } else {
                    n_series[i] = 0;  // single series: negatives must not overlap the window
                    bool placed = false;
                    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
                        std::int64_t s = sample.uniform_int(0, limit - ln);
                        if (s + ln <= starts[i] || s >= starts[i] + tau) {
                            n_starts[i] = s;
                            placed = true;
                        }
                    }
                    if (!placed)
                        throw ConfigError("panel too short to place disjoint negative windows");
                }
            }
            Tensor zn = result.encoder.embed_train(value_windows(panel, n_series, n_starts, ln));
            loss = add(loss, scale(mean_all(log_sigmoid(scale(row_dot(za, zn), -1.0f))), -1.0f));
        }
        result.losses.push_back(loss.item());
        if (!std::isfinite(result.losses.back()))
            throw NumericError("non-finite encoder loss at step " + std::to_string(step));
        backward(loss);
        adam_step(params, state, cfg.lr);
    }
    result.encoder.freeze();
    return result;
}

GaussianStats gaussian_stats(const Tensor& embeddings) {
    if (embeddings.ndim() != 2) throw DimensionError("gaussian_stats expects [n,d]");
    const std::int64_t n = embeddings.dim(0);
    const std::int64_t d = embeddings.dim(1);
    if (n < 2) throw ContractError("gaussian_stats needs at least 2 rows");
    GaussianStats st;
    st.dim = d;
    st.mean.assign(d, 0.0);
    st.cov.assign(d * d, 0.0);
    const std::vector<float>& x = embeddings.data();
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t j = 0; j < d; ++j) st.mean[j] += x[r * d + j];
    for (std::int64_t j = 0; j < d; ++j) st.mean[j] /= static_cast<double>(n);
    for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t i = 0; i < d; ++i) {
            double di = x[r * d + i] - st.mean[i];
            for (std::int64_t j = i; j < d; ++j)
                st.cov[i * d + j] += di * (x[r * d + j] - st.mean[j]);
        }
    for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t j = i; j < d; ++j) {
            st.cov[i * d + j] /= static_cast<double>(n - 1);
            st.cov[j * d + i] = st.cov[i * d + j];  // symmetric by construction
        }
    return st;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.dim != b.dim) throw DimensionError("frechet_distance: dimension mismatch");
    const std::int64_t d = a.dim;
    constexpr double kTol = 1e-6;
    Eigen::MatrixXd sa(d, d), sb(d, d);
    Eigen::VectorXd diff(d);
    for (std::int64_t i = 0; i < d; ++i) {
        diff(i) = a.mean[i] - b.mean[i];
        for (std::int64_t j = 0; j < d; ++j) {
            sa(i, j) = a.cov[i * d + j];
            sb(i, j) = b.cov[i * d + j];
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esa(sa);
    if (esa.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");
    if (esa.eigenvalues().minCoeff() < -kTol)
        throw NumericError("covariance not positive semi-definite: eigenvalue " +
                           std::to_string(esa.eigenvalues().minCoeff()));
    Eigen::VectorXd root_vals = esa.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd root_a =
        esa.eigenvectors() * root_vals.asDiagonal() * esa.eigenvectors().transpose();
    Eigen::MatrixXd m = root_a * sb * root_a;
    m = 0.5 * (m + m.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esm(m);
    if (esm.info() != Eigen::Success) throw NumericError("product eigendecomposition failed");
    double trace_root = 0.0;
    for (std::int64_t i = 0; i < d; ++i) {
        double lambda = esm.eigenvalues()(i);
        if (lambda < -kTol)
            throw NumericError("covariance product not positive semi-definite: eigenvalue " +
                               std::to_string(lambda));
        trace_root += std::sqrt(std::max(0.0, lambda));
    }
    double dist = diff.squaredNorm() + sa.trace() + sb.trace() - 2.0 * trace_root;
    return std::max(0.0, dist);
}

double context_fid_score(CausalEncoder& encoder, const Tensor& real_windows,
                         const Tensor& synth_windows) {
    if (real_windows.shape() != synth_windows.shape())
        throw DimensionError("context_fid_score: window batches must share a shape");
    return frechet_distance(gaussian_stats(encoder.embed(real_windows)),
                            gaussian_stats(encoder.embed(synth_windows)));
}

ContextFidReport context_fid(CausalEncoder& encoder, const WindowSource& synth,
                             const SeriesPanel& panel, std::int64_t n_windows, std::int64_t tau,
                             std::int64_t repeats, std::uint64_t seed) {
    if (n_windows < 2) throw ContractError("context_fid needs at least 2 windows per draw");
    if (repeats < 1) throw ContractError("context_fid needs at least 1 repeat");
    const std::int64_t max_start = panel.t_len() - tau;
    if (max_start < 0)
        throw ConfigError("0 admissible windows: panel length " + std::to_string(panel.t_len()) +
                          " is below the window length " + std::to_string(tau));
    ContextFidReport report;
    report.n_windows = n_windows;
    report.tau = tau;
    report.seed = seed;
    for (std::int64_t r = 0; r < repeats; ++r) {
        Rng draw = Rng(seed).split("fid_draw", static_cast<std::uint64_t>(r));
        std::vector<std::int64_t> series(n_windows), starts(n_windows);
        for (std::int64_t i = 0; i < n_windows; ++i) {
            series[i] = draw.uniform_int(0, panel.n_series() - 1);
            starts[i] = draw.uniform_int(0, max_start);
        }
        Tensor real = value_windows(panel, series, starts, tau);
        Rng gen = Rng(seed).split("fid_gen", static_cast<std::uint64_t>(r));
        Tensor fake = synth(series, starts, tau, gen);
        report.scores.push_back(context_fid_score(encoder, real, fake));
    }
    double sum = 0.0;
    for (double s : report.scores) sum += s;
    report.mean = sum / static_cast<double>(repeats);
    if (repeats > 1) {
        double ss = 0.0;
        for (double s : report.scores) ss += (s - report.mean) * (s - report.mean);
        report.stddev = std::sqrt(ss / static_cast<double>(repeats - 1));
    }
    return report;
}

namespace {

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct SampleCursor {
    const std::string& buf;
    std::size_t at = 0;
    void need(std::size_t n) {
        if (at + n > buf.size())
            throw ArtifactError("sample file truncated at byte " + std::to_string(at));
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
        at += 8;
        return v;
    }
    float f32() {
        need(4);
        std::uint32_t bits = 0;
        for (int i = 0; i < 4; ++i)
            bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
        at += 4;
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace

void save_samples(const std::string& path, const SampleFile& samples) {
    const std::int64_t count = static_cast<std::int64_t>(samples.series.size());
    if (samples.starts.size() != samples.series.size())
        throw DimensionError("sample file: series/starts length mismatch");
    if (samples.values.shape() != Shape{count, 1, samples.tau})
        throw DimensionError("sample file: values must be [count,1,tau]");
    std::string out;
    put_u64(out, static_cast<std::uint64_t>(count));
    put_u64(out, static_cast<std::uint64_t>(samples.tau));
    for (std::int64_t i = 0; i < count; ++i) {
        put_u64(out, static_cast<std::uint64_t>(samples.series[i]));
        put_u64(out, static_cast<std::uint64_t>(samples.starts[i]));
    }
    for (float v : samples.values.data()) put_f32(out, v);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open sample file " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + path);
}

SampleFile load_samples(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArtifactError("cannot open sample file " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    SampleCursor c{buf};
    SampleFile s;
    std::int64_t count = static_cast<std::int64_t>(c.u64());
    s.tau = static_cast<std::int64_t>(c.u64());
    if (count < 0 || s.tau <= 0 ||
        static_cast<std::uint64_t>(count) > buf.size() / 16 ||
        static_cast<std::uint64_t>(count) * static_cast<std::uint64_t>(s.tau) > buf.size() / 4)
        throw ArtifactError("sample file header is implausible");
    s.series.resize(count);
    s.starts.resize(count);
    for (std::int64_t i = 0; i < count; ++i) {
        s.series[i] = static_cast<std::int64_t>(c.u64());
        s.starts[i] = static_cast<std::int64_t>(c.u64());
    }
    std::vector<float> values(count * s.tau);
    for (auto& v : values) v = c.f32();
    if (c.at != buf.size())
        throw ArtifactError("sample file has " + std::to_string(buf.size() - c.at) +
                            " trailing bytes");
    s.values = Tensor::from({count, 1, s.tau}, std::move(values));
    return s;
}

}  // namespace psagan
