#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "psagan/data.hpp"
#include "psagan/layers.hpp"
#include "psagan/rng.hpp"
#include "psagan/tensor.hpp"

namespace psagan {

struct EncoderConfig {
    std::int64_t channels = 32;
    std::int64_t embed_dim = 32;
    std::int64_t kernel = 3;
    std::int64_t depth = 4;  // dilations 1, 2, 4, ... doubling per layer
    std::int64_t steps = 300;
    std::int64_t batch_size = 64;
    std::int64_t negatives = 4;
    float lr = 1e-3f;
    std::uint64_t seed = 0;

    void validate() const;
};

// Dilated causal convolution stack (residual after the stem) with a global
// max-pool and a linear head. Output at time t never looks past t, so the
// embedding captures shape rather than absolute alignment.
class CausalEncoder {
  public:
    CausalEncoder(const EncoderConfig& cfg, Rng& rng);

    // Pre-pooling causal feature map [b, channels, l].
    Tensor features(const Tensor& x);
    // [b,1,l] -> [b, embed_dim]; graph-recording variant used by training.
    Tensor embed_train(const Tensor& windows);
    // Frozen scorer path: no graph, batched internally.
    Tensor embed(const Tensor& windows);

    // Shortest window the embedding contract accepts: one full receptive field.
    std::int64_t receptive_min() const;
    const EncoderConfig& config() const { return cfg_; }

    std::vector<NamedTensor> params();
    std::vector<NamedTensor> buffers() { return {}; }
    void freeze();

  private:
    EncoderConfig cfg_;
    std::vector<Conv1dLayer> convs_;  // convs_[0] is the 1->channels stem
    LinearLayer head_;
};

struct EncoderTrainResult {
    CausalEncoder encoder;
    std::vector<double> losses;  // one triplet loss per step
};

// Contrastive training: anchors and positives are subwindows of one containing
// window, negatives come from other series (disjoint windows when the panel
// has a single series). Returns the encoder with parameters frozen.
EncoderTrainResult train_encoder(const SeriesPanel& panel, std::int64_t tau,
                                 const EncoderConfig& cfg);

struct GaussianStats {
    std::int64_t dim = 0;
    std::vector<double> mean;  // dim
    std::vector<double> cov;   // dim*dim row-major, exactly symmetric
};

// Sample mean and (n-1)-normalized covariance accumulated in 64-bit.
GaussianStats gaussian_stats(const Tensor& embeddings);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}); the matrix square root is
// taken through the eigendecomposition of Sa^{1/2} Sb Sa^{1/2}. Eigenvalues
// below -1e-6 raise NumericError; small negatives are clamped to zero.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// One draw: embed both batches and compare their Gaussian statistics.
double context_fid_score(CausalEncoder& encoder, const Tensor& real_windows,
                         const Tensor& synth_windows);

// Synthetic windows aligned to the real draw: must return [b,1,tau] for the
// given (series, start) pairs, drawing any noise it needs from `rng`.
using WindowSource = std::function<Tensor(const std::vector<std::int64_t>& series,
                                          const std::vector<std::int64_t>& starts,
                                          std::int64_t tau, Rng& rng)>;

struct ContextFidReport {
    double mean = 0.0;
    double stddev = 0.0;
    std::vector<double> scores;
    std::int64_t n_windows = 0;
    std::int64_t tau = 0;
    std::uint64_t seed = 0;
};

ContextFidReport context_fid(CausalEncoder& encoder, const WindowSource& synth,
                             const SeriesPanel& panel, std::int64_t n_windows, std::int64_t tau,
                             std::int64_t repeats, std::uint64_t seed);

// Binary sample exchange format: u64 count, u64 tau, count x (i64 series,
// i64 start), then count*tau little-endian f32 values.
struct SampleFile {
    std::int64_t tau = 0;
    std::vector<std::int64_t> series;
    std::vector<std::int64_t> starts;
    Tensor values;  // [count, 1, tau]
};

void save_samples(const std::string& path, const SampleFile& samples);
SampleFile load_samples(const std::string& path);

}  // namespace psagan
