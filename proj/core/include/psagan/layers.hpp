#pragma once

#include <string>
#include <vector>

#include "psagan/rng.hpp"
#include "psagan/tensor.hpp"

namespace psagan {

// Named parameter/buffer registry entry; names are stable across runs and are
// the checkpoint keys.
struct NamedTensor {
    std::string name;
    Tensor value;
};

constexpr float kLeakySlope = 0.2f;
constexpr float kSigmaClampEps = 1e-12f;

// Centered uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor init_conv_weight(std::int64_t co, std::int64_t ci, std::int64_t k, Rng& rng);

// Spectral normalization state for one weight tensor, interpreted as a
// (dim0 x rest) matrix. Keeps a persistent left singular-vector estimate `u`
// (unit norm), refreshed by power iteration; `u` never participates in
// gradients. sigma_hat = u^T W v with v recomputed from u, and the returned
// weight is W / max(sigma_hat, eps).
class SpectralNorm {
  public:
    SpectralNorm() = default;
    SpectralNorm(std::int64_t rows, Rng& rng);

    // Runs `iterations` power-iteration steps on the raw weight data.
    void power_iterate(const Tensor& w, int iterations);
    // Current sigma estimate from the stored u (no update, no gradients).
    float sigma_estimate(const Tensor& w) const;
    // Normalized weight; differentiable in w. When `update_u` is set, one
    // power iteration refreshes u first (training-mode behavior).
    Tensor apply(const Tensor& w, bool update_u);

    Tensor& u() { return u_; }
    const Tensor& u() const { return u_; }

  private:
    Tensor u_;
};

// 1-D convolution layer; `spectral` selects weight spectral normalization.
class Conv1dLayer {
  public:
    Conv1dLayer() = default;
    Conv1dLayer(std::int64_t ci, std::int64_t co, std::int64_t k, std::int64_t padding,
                bool spectral, Rng& rng, std::int64_t dilation = 1);

    Tensor forward(const Tensor& x, bool train);
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>& buffers);

    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }
    SpectralNorm& sn() { return sn_; }
    bool spectral() const { return spectral_; }

  private:
    Tensor weight_, bias_;
    SpectralNorm sn_;
    std::int64_t padding_ = 0, dilation_ = 1;
    bool spectral_ = false;
};

// Fully connected layer as a k=1 convolution over a length-1 sequence.
class LinearLayer {
  public:
    LinearLayer() = default;
    LinearLayer(std::int64_t in, std::int64_t out, bool spectral, Rng& rng);

    // x: [b, in] -> [b, out]
    Tensor forward(const Tensor& x, bool train);
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>& buffers);
    Conv1dLayer& conv() { return conv_; }

  private:
    Conv1dLayer conv_;
};

// Single-head self-attention over time with learnable residual gate gamma
// (initialized to zero). Query/key channels are reduced by 8 (floor 1).
class SelfAttention1d {
  public:
    SelfAttention1d() = default;
    SelfAttention1d(std::int64_t channels, Rng& rng);

    // Attention output alone (no gamma, no residual); x: [b,c,l].
    Tensor attend(const Tensor& x, bool train);
    // Row-stochastic mixing weights [b,l,l]; row i holds position i's weights.
    Tensor attention_map(const Tensor& x, bool train);
    Tensor& gamma() { return gamma_; }
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>& buffers);

  private:
    Conv1dLayer query_, key_, value_, out_;
    Tensor gamma_;
};

// conv(k=3, same length) -> spectral norm -> LeakyReLU, then a gated
// attention residual: out = gamma * SA(f(x)) + f(x). The attention term is
// always evaluated, also at gamma == 0. With attention disabled the block
// reduces to f(x).
class MainBlock {
  public:
    MainBlock() = default;
    MainBlock(std::int64_t ci, std::int64_t co, bool self_attention, Rng& rng);

    Tensor forward(const Tensor& x, bool train);
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>& buffers);

    Conv1dLayer& conv() { return conv_; }
    SelfAttention1d& attention() { return attention_; }
    bool has_attention() const { return self_attention_; }

  private:
    Conv1dLayer conv_;
    SelfAttention1d attention_;
    bool self_attention_ = true;
};

// Conditions a feature map on recent observed history. The history window
// (values + observed-mask, fixed length) is resampled to the feature map's
// length, concatenated as two extra channels, and passed through a two-layer
// pointwise MLP whose second conv starts at zero — the block is an exact
// identity at init and learns an additive correction.
class ContextBlock {
  public:
    ContextBlock() = default;
    ContextBlock(std::int64_t channels, std::int64_t context_len, Rng& rng);

    // h: [b,c,l]; history/mask: [b,1,context_len]. Returns [b,c,l].
    Tensor forward(const Tensor& h, const Tensor& history, const Tensor& mask, bool train);
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>& buffers);

  private:
    Conv1dLayer fc1_, fc2_;
    std::int64_t context_len_ = 0;
};

// Learnable per-series embedding table [n, dim], rows drawn N(0, 0.01).
class IndexEmbedding {
  public:
    IndexEmbedding() = default;
    IndexEmbedding(std::int64_t n, std::int64_t dim, Rng& rng);

    // [batch, dim] rows for the given series indices.
    Tensor rows(const std::vector<std::int64_t>& idx) const;
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>& buffers);
    Tensor& table() { return table_; }
    std::int64_t count() const { return table_.dim(0); }

  private:
    Tensor table_;
};

}  // namespace psagan
