#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "psagan/data.hpp"
#include "psagan/model.hpp"
#include "psagan/rng.hpp"
#include "psagan/tensor.hpp"

namespace psagan {

struct TrainConfig {
    std::int64_t tau = 64;
    std::int64_t epochs = 6500;
    std::int64_t batches_per_epoch = 100;
    std::int64_t batch_size = 512;
    std::int64_t stage_epochs = 1000;
    std::int64_t fade_epochs = 500;
    float lr = 5e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float moment_loss_weight = 1.0f;
    std::int64_t context_length = 0;  // 0 disables the conditional variant
    bool self_attention = true;
    bool fade_in = true;
    bool moment_loss = true;
    std::uint64_t seed = 0;

    void validate() const;  // ConfigError on nonpositive fields or fade > stage
};

// Linear fade schedule. Stage 1 never fades; later stages ramp alpha from 0 to
// 1 over fade_epochs after each growth boundary. With fade_in disabled a new
// block enters at full weight immediately.
struct StageState {
    std::int64_t growth_stage = 1;
    float alpha = 1.0f;
};
StageState schedule_stage(std::int64_t epoch, const TrainConfig& cfg, std::int64_t n_stages);

// Least-squares adversarial objectives (targets: real 1, fake 0, generator 1).
Tensor lsgan_d_loss(const Tensor& real_scores, const Tensor& fake_scores);
Tensor lsgan_g_loss(const Tensor& fake_scores);

// |mean difference| + |population-std difference|, both statistics taken over
// every element of the batch.
Tensor moment_loss_term(const Tensor& fake_batch, const Tensor& real_batch);

struct AdamState {
    struct Slot {
        std::vector<float> m, v;
    };
    std::map<std::string, Slot> slots;
    std::int64_t step = 0;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// One update over every parameter that carries a gradient; moments are keyed
// by parameter name so they survive growth (new parameters start at zero).
// Gradients are zeroed after the update. NumericError on non-finite gradients.
void adam_step(std::vector<NamedTensor>& params, AdamState& state, float lr);

void zero_param_grads(std::vector<NamedTensor>& params);

// Real windows with the matching positions, calendar features, and the noise
// the generator will consume for the synthetic twin of this batch.
struct AlignedBatch {
    Tensor real;    // [b,1,tau]
    Tensor feats;   // [b,d_time,tau]
    Tensor noise;   // [b,1,tau]
    Tensor context_values;  // [b,1,L_C] when context_length > 0
    Tensor context_mask;
    std::vector<std::int64_t> series;
    std::vector<std::int64_t> starts;
};

AlignedBatch sample_aligned_batch(const SeriesPanel& panel,
                                  const std::vector<std::vector<float>>& feats, std::int64_t tau,
                                  std::int64_t batch_size, std::int64_t context_length, Rng& rng);

// Observed history [start-len, start) per window, zero-padded on the left with
// a companion {0,1} mask channel marking real values.
std::pair<Tensor, Tensor> context_windows(const SeriesPanel& panel,
                                          const std::vector<std::int64_t>& series,
                                          const std::vector<std::int64_t>& starts,
                                          std::int64_t len);

// Average-pool a full-resolution window down to the current stage length.
Tensor stage_pool(const Tensor& x, std::int64_t stage_len);

struct EpochStats {
    std::int64_t epoch = 0;
    std::int64_t stage = 1;
    float alpha = 1.0f;
    double d_loss = 0.0;
    double g_loss = 0.0;
    double ml = 0.0;
};

struct TrainHooks {
    // After an epoch's batches finish.
    std::function<void(const EpochStats&, GeneratorStack&, DiscriminatorStack&)> on_epoch;
    // Immediately after a growth step, before any batch touches the new stage.
    std::function<void(std::int64_t epoch, GeneratorStack&, DiscriminatorStack&)> on_grow;
};

struct TrainResult {
    std::string checkpoint_path;              // final weights
    std::vector<std::string> stage_checkpoints;  // one per completed growth boundary
    std::string metrics_path;
    std::int64_t final_stage = 1;
};

// Alternating one-discriminator/one-generator updates over aligned batches
// with the progressive schedule. Writes metrics.log plus checkpoints at every
// stage boundary and at the end; aborts on non-finite losses, leaving the most
// recent checkpoint on disk.
TrainResult train(const SeriesPanel& panel, const TrainConfig& cfg, const std::string& out_dir,
                  const TrainHooks& hooks = {});

}  // namespace psagan
