#include "psagan/layers.hpp"

#include <algorithm>
#include <cmath>

#include "psagan/common.hpp"

namespace psagan {

namespace {

// Unit-normalizes in place; returns false (leaving v untouched) when the
// norm is too small to divide by.
bool normalize(std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e * e;
    s = std::sqrt(s);
    if (s < 1e-24) return false;
    for (double& e : v) e /= s;
    return true;
}

}  // namespace

Tensor init_conv_weight(std::int64_t co, std::int64_t ci, std::int64_t k, Rng& rng) {
    float bound = 1.0f / std::sqrt(static_cast<float>(ci * k));
    return random_uniform({co, ci, k}, -bound, bound, rng, true);
}

SpectralNorm::SpectralNorm(std::int64_t rows, Rng& rng) {
    std::vector<double> u(rows);
    for (double& e : u) e = rng.normal();
    if (!normalize(u)) u[0] = 1.0;
    std::vector<float> uf(rows);
    for (std::int64_t i = 0; i < rows; ++i) uf[i] = static_cast<float>(u[i]);
    u_ = Tensor::from({1, rows}, std::move(uf), false);
}

void SpectralNorm::power_iterate(const Tensor& w, int iterations) {
    const std::int64_t rows = w.dim(0);
    const std::int64_t cols = w.size() / rows;
    if (u_.size() != rows)
        throw DimensionError("spectral-norm u has " + std::to_string(u_.size()) +
                             " entries, weight has " + std::to_string(rows) + " rows");
    const std::vector<float>& wd = w.data();
    std::vector<float>& ud = u_.data();
    std::vector<double> u(ud.begin(), ud.end());
    std::vector<double> v(cols);
    for (int it = 0; it < iterations; ++it) {
        for (std::int64_t j = 0; j < cols; ++j) {
            double s = 0.0;
            for (std::int64_t i = 0; i < rows; ++i) s += u[i] * wd[i * cols + j];
            v[j] = s;
        }
        if (!normalize(v)) break;  // degenerate weight: keep previous u
        std::vector<double> un(rows);
        for (std::int64_t i = 0; i < rows; ++i) {
            double s = 0.0;
            for (std::int64_t j = 0; j < cols; ++j) s += wd[i * cols + j] * v[j];
            un[i] = s;
        }
        if (!normalize(un)) break;
        u = std::move(un);
        for (std::int64_t i = 0; i < rows; ++i) ud[i] = static_cast<float>(u[i]);
    }
}

float SpectralNorm::sigma_estimate(const Tensor& w) const {
    const std::int64_t rows = w.dim(0);
    const std::int64_t cols = w.size() / rows;
    const std::vector<float>& wd = w.data();
    const std::vector<float>& ud = u_.data();
    std::vector<double> v(cols);
    for (std::int64_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::int64_t i = 0; i < rows; ++i) s += ud[i] * wd[i * cols + j];
        v[j] = s;
    }
    if (!normalize(v)) return 0.0f;
    double sigma = 0.0;
    for (std::int64_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) s += wd[i * cols + j] * v[j];
        sigma += ud[i] * s;
    }
    return static_cast<float>(sigma);
}

Tensor SpectralNorm::apply(const Tensor& w, bool update_u) {
    if (update_u) power_iterate(w, 1);
    const std::int64_t rows = w.dim(0);
    const std::int64_t cols = w.size() / rows;
    const std::vector<float>& wd = w.data();
    const std::vector<float>& ud = u_.data();
    // v recomputed from the stored u; u and v enter the graph as constants so
    // sigma_hat = u^T W v stays differentiable in W alone.
    std::vector<double> v(cols);
    for (std::int64_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::int64_t i = 0; i < rows; ++i) s += ud[i] * wd[i * cols + j];
        v[j] = s;
    }
    if (!normalize(v)) std::fill(v.begin(), v.end(), 0.0);
    std::vector<float> vf(cols);
    for (std::int64_t j = 0; j < cols; ++j) vf[j] = static_cast<float>(v[j]);
    Tensor uc = Tensor::from({1, rows}, std::vector<float>(ud.begin(), ud.end()), false);
    Tensor vc = Tensor::from({cols, 1}, std::move(vf), false);
    Tensor sigma = matmul(matmul(uc, reshape(w, {rows, cols})), vc);  // [1,1]
    return mul(w, safe_reciprocal(sigma, kSigmaClampEps));
}

Conv1dLayer::Conv1dLayer(std::int64_t ci, std::int64_t co, std::int64_t k, std::int64_t padding,
                         bool spectral, Rng& rng, std::int64_t dilation)
    : padding_(padding), dilation_(dilation), spectral_(spectral) {
    weight_ = init_conv_weight(co, ci, k, rng);
    float bound = 1.0f / std::sqrt(static_cast<float>(ci * k));
    bias_ = random_uniform({co}, -bound, bound, rng, true);
    if (spectral_) sn_ = SpectralNorm(co, rng);
}

Tensor Conv1dLayer::forward(const Tensor& x, bool train) {
    if (!weight_.defined()) throw ContractError("conv layer used before initialization");
    Tensor w = spectral_ ? sn_.apply(weight_, train) : weight_;
    return conv1d(x, w, bias_, padding_, dilation_);
}

void Conv1dLayer::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                          std::vector<NamedTensor>& buffers) {
    params.push_back({prefix + ".weight", weight_});
    params.push_back({prefix + ".bias", bias_});
    if (spectral_) buffers.push_back({prefix + "#u", sn_.u()});
}

LinearLayer::LinearLayer(std::int64_t in, std::int64_t out, bool spectral, Rng& rng)
    : conv_(in, out, 1, 0, spectral, rng) {}

Tensor LinearLayer::forward(const Tensor& x, bool train) {
    if (x.ndim() != 2)
        throw DimensionError("linear layer expects [batch, features], got " +
                             shape_str(x.shape()));
    Tensor h = reshape(x, {x.dim(0), x.dim(1), 1});
    h = conv_.forward(h, train);
    return reshape(h, {h.dim(0), h.dim(1)});
}

void LinearLayer::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                          std::vector<NamedTensor>& buffers) {
    conv_.collect(prefix, params, buffers);
}

SelfAttention1d::SelfAttention1d(std::int64_t channels, Rng& rng) {
    std::int64_t d = std::max<std::int64_t>(1, channels / 8);
    query_ = Conv1dLayer(channels, d, 1, 0, true, rng);
    key_ = Conv1dLayer(channels, d, 1, 0, true, rng);
    value_ = Conv1dLayer(channels, channels, 1, 0, true, rng);
    out_ = Conv1dLayer(channels, channels, 1, 0, true, rng);
    gamma_ = Tensor::zeros({1}, true);
}

Tensor SelfAttention1d::attention_map(const Tensor& x, bool train) {
    Tensor q = query_.forward(x, train);                    // [b,d,l]
    Tensor k = key_.forward(x, train);                      // [b,d,l]
    Tensor scores = bmm(transpose_last2(q), k);             // [b,l,l]: (i,j) = q_i.k_j
    return softmax(scores, 2);                              // rows sum to 1 over keys
}

Tensor SelfAttention1d::attend(const Tensor& x, bool train) {
    Tensor a = attention_map(x, train);
    Tensor v = value_.forward(x, train);                    // [b,c,l]
    Tensor mix = bmm(v, transpose_last2(a));                // position i mixes values by a(i,.)
    return out_.forward(mix, train);
}

void SelfAttention1d::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                              std::vector<NamedTensor>& buffers) {
    query_.collect(prefix + ".query", params, buffers);
    key_.collect(prefix + ".key", params, buffers);
    value_.collect(prefix + ".value", params, buffers);
    out_.collect(prefix + ".out", params, buffers);
    params.push_back({prefix + ".gamma", gamma_});
}

MainBlock::MainBlock(std::int64_t ci, std::int64_t co, bool self_attention, Rng& rng)
    : conv_(ci, co, 3, 1, true, rng), self_attention_(self_attention) {
    if (self_attention_) attention_ = SelfAttention1d(co, rng);
}

Tensor MainBlock::forward(const Tensor& x, bool train) {
    Tensor f = leaky_relu(conv_.forward(x, train), kLeakySlope);
    if (!self_attention_) return f;
    // The attention branch is evaluated even while gamma == 0 so that gamma
    // receives gradient from the first step on.
    Tensor sa = attention_.attend(f, train);
    return add(f, mul(sa, attention_.gamma()));
}

void MainBlock::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                        std::vector<NamedTensor>& buffers) {
    conv_.collect(prefix + ".conv", params, buffers);
    if (self_attention_) attention_.collect(prefix + ".attn", params, buffers);
}

ContextBlock::ContextBlock(std::int64_t channels, std::int64_t context_len, Rng& rng)
    : fc1_(channels + 2, channels, 1, 0, false, rng),
      fc2_(channels, channels, 1, 0, false, rng),
      context_len_(context_len) {
    // Zero start: the block contributes nothing until trained.
    std::fill(fc2_.weight().data().begin(), fc2_.weight().data().end(), 0.0f);
    std::fill(fc2_.bias().data().begin(), fc2_.bias().data().end(), 0.0f);
}

Tensor ContextBlock::forward(const Tensor& h, const Tensor& history, const Tensor& mask,
                             bool train) {
    if (history.ndim() != 3 || history.dim(2) != context_len_)
        throw DimensionError("context history must be [b,1," + std::to_string(context_len_) +
                             "], got " + shape_str(history.shape()));
    std::int64_t l = h.dim(2);
    Tensor hist = history;
    Tensor m = mask;
    if (l < context_len_) {
        if (context_len_ % l != 0)
            throw DimensionError("context length " + std::to_string(context_len_) +
                                 " not divisible by feature length " + std::to_string(l));
        std::int64_t k = context_len_ / l;
        hist = avg_pool1d(hist, k, k);
        m = avg_pool1d(m, k, k);
    } else if (l > context_len_) {
        std::int64_t cur = context_len_;
        while (cur < l) {
            hist = upsample_linear2x(hist);
            m = upsample_linear2x(m);
            cur *= 2;
        }
        if (cur != l)
            throw DimensionError("feature length " + std::to_string(l) +
                                 " is not a power-of-two multiple of context length " +
                                 std::to_string(context_len_));
    }
    Tensor cat = concat_channels({h, hist, m});
    Tensor out = fc2_.forward(leaky_relu(fc1_.forward(cat, train), kLeakySlope), train);
    return add(h, out);
}

void ContextBlock::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                           std::vector<NamedTensor>& buffers) {
    fc1_.collect(prefix + ".fc1", params, buffers);
    fc2_.collect(prefix + ".fc2", params, buffers);
}

IndexEmbedding::IndexEmbedding(std::int64_t n, std::int64_t dim, Rng& rng) {
    table_ = random_normal({n, dim}, rng, true);
    for (float& e : table_.data()) e *= 0.01f;
}

Tensor IndexEmbedding::rows(const std::vector<std::int64_t>& idx) const {
    return take_rows(table_, idx);
}

void IndexEmbedding::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                             std::vector<NamedTensor>& buffers) {
    (void)buffers;
    params.push_back({prefix + ".table", table_});
}

}  // namespace psagan
