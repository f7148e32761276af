#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psagan/layers.hpp"
#include "psagan/rng.hpp"
#include "psagan/tensor.hpp"

namespace psagan {

constexpr std::int64_t kNf = 32;        // feature channels throughout both nets
constexpr std::int64_t kEmbedDim = 10;  // learned per-series embedding width
constexpr std::int64_t kBaseLen = 8;    // coarsest resolution

// Static shape of a generator/discriminator pair. The target length tau fixes
// the number of doubling stages: tau = 2^(n_stages + 3), so the resolution
// ladder runs 8 -> 16 -> ... -> tau.
struct ModelShape {
    std::int64_t tau = 64;
    std::int64_t n_series = 1;
    std::int64_t d_time = 5;            // raw time-feature channels
    std::int64_t context_length = 0;    // 0 disables history conditioning
    bool self_attention = true;

    // Number of doubling stages; throws ConfigError unless tau is a power of
    // two >= 16.
    std::int64_t n_stages() const;
    // Channels of the conditioning matrix (time features + embedding).
    std::int64_t d_cond() const { return d_time + kEmbedDim; }
    // Output length at growth stage s: 8 * 2^s.
    std::int64_t stage_len(std::int64_t s) const;
    bool context_enabled() const { return context_length > 0; }
};

// One generated batch with its window alignment.
struct GanSample {
    Tensor values;                      // [batch, current length]
    std::vector<std::int64_t> series;
    std::vector<std::int64_t> starts;
};

// Progressive generator. Stage s produces length 8 * 2^s; only the newest
// stage is blended by alpha, earlier stages run at full weight. Doubling
// stages are instantiated lazily by grow().
class GeneratorStack {
  public:
    GeneratorStack() = default;
    GeneratorStack(const ModelShape& shape, Rng& rng);

    // noise: [b,1,tau]; time_feats: [b,d_time,tau]; series: b indices.
    // context values/mask ([b,1,L_C]) are required iff the shape enables
    // history conditioning. Returns [b, 1, stage_len(growth_stage)].
    Tensor forward(const Tensor& noise, const std::vector<std::int64_t>& series,
                   const Tensor& time_feats, const Tensor& context_values,
                   const Tensor& context_mask, bool train);
    Tensor forward(const Tensor& noise, const std::vector<std::int64_t>& series,
                   const Tensor& time_feats, bool train);
    GanSample generate(const Tensor& noise, const std::vector<std::int64_t>& series,
                       const std::vector<std::int64_t>& starts, const Tensor& time_feats,
                       const Tensor& context_values, const Tensor& context_mask, bool train);

    // Conditioning matrix + noise, projected to n_f channels and pooled to the
    // base resolution: the [b, n_f, 8] seed every stage builds on.
    Tensor preprocess(const Tensor& noise, const std::vector<std::int64_t>& series,
                      const Tensor& time_feats, bool train);

    // One doubling stage in isolation (stage index j in [1, growth_stage]):
    // blend(alpha, block(UP(h)), UP(h)) followed by feature re-projection.
    // Exposed so the fade endpoints can be asserted directly.
    Tensor stage_forward(std::int64_t j, const Tensor& h, const Tensor& feats_full, float alpha,
                         const Tensor& context_values, const Tensor& context_mask, bool train);

    // Adds the next doubling stage with fresh parameters and resets alpha to
    // zero. Throws ContractError when already at the final stage.
    void grow(Rng& rng);
    void grow_to(std::int64_t stage, Rng& rng);

    std::int64_t growth_stage() const { return growth_stage_; }
    float alpha() const { return alpha_; }
    void set_alpha(float a);
    std::int64_t current_len() const { return shape_.stage_len(growth_stage_); }
    const ModelShape& shape() const { return shape_; }

    std::vector<NamedTensor> params();
    std::vector<NamedTensor> buffers();
    IndexEmbedding& embedding() { return embedding_; }

  private:
    struct DoubleStage {
        MainBlock block;
        Conv1dLayer feat_proj;
        Conv1dLayer out_conv;           // 1-channel read-out at this resolution
        ContextBlock ctx;
    };

    DoubleStage make_stage(Rng& rng);
    Tensor cond_features(const std::vector<std::int64_t>& series, const Tensor& time_feats);
    Tensor pooled_cond(const Tensor& feats_full, std::int64_t len) const;
    void collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers);

    ModelShape shape_;
    IndexEmbedding embedding_;
    Conv1dLayer input_proj_;
    MainBlock base_block_;
    Conv1dLayer base_feat_proj_;
    ContextBlock base_ctx_;
    std::vector<DoubleStage> stages_;
    std::int64_t growth_stage_ = 1;
    float alpha_ = 1.0f;
};

// Progressive discriminator, mirror of the generator: halving blocks down to
// length 8, then a scalar scoring head. The newest halving block is blended
// symmetrically to the generator's fade.
class DiscriminatorStack {
  public:
    DiscriminatorStack() = default;
    DiscriminatorStack(const ModelShape& shape, Rng& rng);

    // values: [b,1,l] with l == stage_len(growth_stage); time_feats at full
    // resolution [b,d_time,tau] (pooled internally). Returns scores [b].
    Tensor forward(const Tensor& values, const std::vector<std::int64_t>& series,
                   const Tensor& time_feats, bool train);

    void grow(Rng& rng);
    void grow_to(std::int64_t stage, Rng& rng);

    std::int64_t growth_stage() const { return growth_stage_; }
    float alpha() const { return alpha_; }
    void set_alpha(float a);
    std::int64_t current_len() const { return shape_.stage_len(growth_stage_); }
    const ModelShape& shape() const { return shape_; }

    std::vector<NamedTensor> params();
    std::vector<NamedTensor> buffers();
    IndexEmbedding& embedding() { return embedding_; }

  private:
    void collect(std::vector<NamedTensor>& params, std::vector<NamedTensor>& buffers);

    ModelShape shape_;
    IndexEmbedding embedding_;
    Conv1dLayer input_conv_;
    std::vector<MainBlock> halving_;    // halving_[j-1] maps 8*2^j -> 8*2^(j-1)
    MainBlock head_block_;
    Conv1dLayer head_conv_;
    LinearLayer head_fc_;
    std::int64_t growth_stage_ = 1;
    float alpha_ = 1.0f;
};

}  // namespace psagan
