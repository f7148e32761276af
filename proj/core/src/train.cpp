#include "psagan/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "psagan/checkpoint.hpp"

namespace psagan {

void TrainConfig::validate() const {
    auto positive = [](std::int64_t v, const char* name) {
        if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(epochs, "epochs");
    positive(batches_per_epoch, "batches_per_epoch");
    positive(batch_size, "batch_size");
    positive(stage_epochs, "stage_epochs");
    positive(fade_epochs, "fade_epochs");
    if (fade_epochs > stage_epochs) throw ConfigError("fade_epochs must not exceed stage_epochs");
    if (!(lr > 0.0f)) throw ConfigError("lr must be positive");
    if (!(beta1 >= 0.0f && beta1 < 1.0f && beta2 >= 0.0f && beta2 < 1.0f))
        throw ConfigError("adam betas must lie in [0,1)");
    if (moment_loss_weight < 0.0f) throw ConfigError("moment_loss_weight must be non-negative");
    if (context_length < 0) throw ConfigError("context_length must be non-negative");
    ModelShape probe;
    probe.tau = tau;
    probe.n_stages();  // rejects lengths outside the supported ladder
}

StageState schedule_stage(std::int64_t epoch, const TrainConfig& cfg, std::int64_t n_stages) {
    if (epoch < 0 || epoch >= cfg.epochs)
        throw ContractError("schedule_stage: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(cfg.epochs) + ")");
    StageState st;
    st.growth_stage = std::min<std::int64_t>(1 + epoch / cfg.stage_epochs, n_stages);
    if (st.growth_stage == 1 || !cfg.fade_in) {
        st.alpha = 1.0f;
        return st;
    }
    std::int64_t offset = epoch - (st.growth_stage - 1) * cfg.stage_epochs;
    st.alpha = std::min(1.0f, static_cast<float>(offset) / static_cast<float>(cfg.fade_epochs));
    return st;
}

Tensor lsgan_d_loss(const Tensor& real_scores, const Tensor& fake_scores) {
    if (real_scores.shape() != fake_scores.shape())
        throw DimensionError("lsgan_d_loss: batch sizes differ");
    Tensor real_err = add_const(real_scores, -1.0f);
    Tensor real_term = mean_all(mul(real_err, real_err));
    Tensor fake_term = mean_all(mul(fake_scores, fake_scores));
    return scale(add(real_term, fake_term), 0.5f);
}

Tensor lsgan_g_loss(const Tensor& fake_scores) {
    Tensor err = add_const(fake_scores, -1.0f);
    return scale(mean_all(mul(err, err)), 0.5f);
}

namespace {

// Population standard deviation over every element.
Tensor batch_std(const Tensor& x) {
    Tensor centered = sub(x, mean_all(x));
    return elem_sqrt(mean_all(mul(centered, centered)));
}

}  // namespace

Tensor moment_loss_term(const Tensor& fake_batch, const Tensor& real_batch) {
    if (fake_batch.shape() != real_batch.shape())
        throw DimensionError("moment_loss: batches must share a shape");
    Tensor mean_gap = elem_abs(sub(mean_all(fake_batch), mean_all(real_batch)));
    Tensor std_gap = elem_abs(sub(batch_std(fake_batch), batch_std(real_batch)));
    return add(mean_gap, std_gap);
}

void adam_step(std::vector<NamedTensor>& params, AdamState& state, float lr) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), state.step);
    const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), state.step);
    for (auto& p : params) {
        if (!p.value.requires_grad()) continue;
        std::vector<float>& g = p.value.grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!std::isfinite(g[i]))
                throw NumericError("gradient for parameter '" + p.name + "' is not finite");
        AdamState::Slot& slot = state.slots[p.name];
        if (slot.m.empty()) {
            slot.m.assign(g.size(), 0.0f);
            slot.v.assign(g.size(), 0.0f);
        }
        if (slot.m.size() != g.size())
            throw ContractError("adam state for '" + p.name + "' has stale shape");
        std::vector<float>& w = p.value.data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            double m = state.beta1 * slot.m[i] + (1.0 - state.beta1) * g[i];
            double v = state.beta2 * slot.v[i] + (1.0 - state.beta2) * double(g[i]) * g[i];
            slot.m[i] = static_cast<float>(m);
            slot.v[i] = static_cast<float>(v);
            w[i] -= static_cast<float>(lr * (m / bc1) / (std::sqrt(v / bc2) + state.eps));
        }
        std::fill(g.begin(), g.end(), 0.0f);
    }
}

void zero_param_grads(std::vector<NamedTensor>& params) {
    for (auto& p : params)
        if (p.value.has_grad()) p.value.zero_grad();
}

std::pair<Tensor, Tensor> context_windows(const SeriesPanel& panel,
                                          const std::vector<std::int64_t>& series,
                                          const std::vector<std::int64_t>& starts,
                                          std::int64_t len) {
    if (series.size() != starts.size())
        throw DimensionError("context_windows: series/starts length mismatch");
    if (len <= 0) throw ContractError("context_windows: history length must be positive");
    std::int64_t b = static_cast<std::int64_t>(series.size());
    Tensor values = Tensor::zeros({b, 1, len});
    Tensor mask = Tensor::zeros({b, 1, len});
    for (std::int64_t i = 0; i < b; ++i) {
        if (series[i] < 0 || series[i] >= panel.n_series())
            throw IndexError("context_windows: series index out of range");
        for (std::int64_t k = 0; k < len; ++k) {
            std::int64_t t = starts[i] - len + k;
            if (t < 0) continue;  // before recorded history: zero value, zero mask
            if (t >= panel.t_len()) throw IndexError("context_windows: start beyond panel");
            values.data()[i * len + k] = panel.values[series[i]][t];
            mask.data()[i * len + k] = 1.0f;
        }
    }
    return {values, mask};
}

AlignedBatch sample_aligned_batch(const SeriesPanel& panel,
                                  const std::vector<std::vector<float>>& feats, std::int64_t tau,
                                  std::int64_t batch_size, std::int64_t context_length, Rng& rng) {
    if (panel.split_idx <= 0) throw ContractError("panel split must be set before sampling");
    std::int64_t max_start = panel.split_idx - tau;
    if (max_start < 0)
        throw ConfigError("training range (" + std::to_string(panel.split_idx) +
                          ") is shorter than the target length " + std::to_string(tau));
    AlignedBatch batch;
    batch.series.resize(batch_size);
    batch.starts.resize(batch_size);
    for (std::int64_t i = 0; i < batch_size; ++i) {
        batch.series[i] = rng.uniform_int(0, panel.n_series() - 1);
        batch.starts[i] = rng.uniform_int(0, max_start);
    }
    batch.real = value_windows(panel, batch.series, batch.starts, tau);
    batch.feats = feature_windows(feats, batch.starts, tau);
    batch.noise = random_normal({batch_size, 1, tau}, rng);
    if (context_length > 0)
        std::tie(batch.context_values, batch.context_mask) =
            context_windows(panel, batch.series, batch.starts, context_length);
    return batch;
}

Tensor stage_pool(const Tensor& x, std::int64_t stage_len) {
    std::int64_t full = x.dim(x.ndim() - 1);
    if (full == stage_len) return x;
    if (stage_len <= 0 || full % stage_len != 0)
        throw DimensionError("stage_pool: " + std::to_string(full) + " not divisible by " +
                             std::to_string(stage_len));
    std::int64_t factor = full / stage_len;
    return avg_pool1d(x, factor, factor);
}

namespace {

std::string config_echo(const TrainConfig& cfg) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "tau=%lld\nepochs=%lld\nbatches_per_epoch=%lld\nbatch_size=%lld\n"
                  "stage_epochs=%lld\nfade_epochs=%lld\nlr=%.8g\nbeta1=%.8g\nbeta2=%.8g\n"
                  "moment_loss_weight=%.8g\ncontext_length=%lld\nself_attention=%d\n"
                  "fade_in=%d\nmoment_loss=%d\nseed=%llu\n",
                  static_cast<long long>(cfg.tau), static_cast<long long>(cfg.epochs),
                  static_cast<long long>(cfg.batches_per_epoch),
                  static_cast<long long>(cfg.batch_size), static_cast<long long>(cfg.stage_epochs),
                  static_cast<long long>(cfg.fade_epochs), cfg.lr, cfg.beta1, cfg.beta2,
                  cfg.moment_loss_weight, static_cast<long long>(cfg.context_length),
                  cfg.self_attention ? 1 : 0, cfg.fade_in ? 1 : 0, cfg.moment_loss ? 1 : 0,
                  static_cast<unsigned long long>(cfg.seed));
    return buf;
}

Tensor generator_batch(GeneratorStack& g, const AlignedBatch& batch, bool train) {
    if (g.shape().context_enabled())
        return g.forward(batch.noise, batch.series, batch.feats, batch.context_values,
                         batch.context_mask, train);
    return g.forward(batch.noise, batch.series, batch.feats, train);
}

void require_finite(double v, const char* which, std::int64_t epoch) {
    if (!std::isfinite(v))
        throw NumericError(std::string("non-finite ") + which + " at epoch " +
                           std::to_string(epoch) + "; most recent checkpoint retained");
}

}  // namespace

TrainResult train(const SeriesPanel& panel, const TrainConfig& cfg, const std::string& out_dir,
                  const TrainHooks& hooks) {
    cfg.validate();
    if (!panel.scaled) throw ContractError("panel must be minmax-scaled before training");
    if (panel.split_idx <= 0) throw ContractError("panel split must be set before training");

    ModelShape shape;
    shape.tau = cfg.tau;
    shape.n_series = panel.n_series();
    shape.context_length = cfg.context_length;
    shape.self_attention = cfg.self_attention;
    const std::int64_t n_stages = shape.n_stages();

    std::filesystem::create_directories(out_dir);
    Rng root(cfg.seed);
    Rng g_init = root.split("init_g");
    Rng d_init = root.split("init_d");
    Rng data_rng = root.split("data");

    GeneratorStack gen(shape, g_init);
    DiscriminatorStack disc(shape, d_init);
    auto g_params = gen.params();
    auto d_params = disc.params();
    AdamState g_state, d_state;
    g_state.beta1 = d_state.beta1 = cfg.beta1;
    g_state.beta2 = d_state.beta2 = cfg.beta2;

    const auto feats = time_features(panel.start_hour, panel.t_len());
    const std::string echo = config_echo(cfg);

    TrainResult result;
    result.metrics_path = out_dir + "/metrics.log";
    std::ofstream metrics(result.metrics_path, std::ios::trunc);
    if (!metrics) throw IoError("cannot open metrics log " + result.metrics_path);

    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        StageState st = schedule_stage(epoch, cfg, n_stages);
        while (gen.growth_stage() < st.growth_stage) {
            std::int64_t completed = gen.growth_stage();
            std::string path =
                out_dir + "/checkpoint_stage" + std::to_string(completed) + ".bin";
            save_checkpoint(path, snapshot(gen, disc, echo));
            result.stage_checkpoints.push_back(path);
            Rng grow_g = root.split("grow_g", static_cast<std::uint64_t>(completed));
            Rng grow_d = root.split("grow_d", static_cast<std::uint64_t>(completed));
            gen.grow(grow_g);
            disc.grow(grow_d);
            g_params = gen.params();
            d_params = disc.params();
            if (hooks.on_grow) hooks.on_grow(epoch, gen, disc);
        }
        gen.set_alpha(st.alpha);
        disc.set_alpha(st.alpha);
        const std::int64_t slen = shape.stage_len(st.growth_stage);

        double sum_d = 0.0, sum_g = 0.0, sum_ml = 0.0;
        for (std::int64_t b = 0; b < cfg.batches_per_epoch; ++b) {
            AlignedBatch batch = sample_aligned_batch(panel, feats, cfg.tau, cfg.batch_size,
                                                      cfg.context_length, data_rng);
            Tensor real_s = stage_pool(batch.real, slen);

            Tensor fake_for_d;
            {
                NoGradGuard ng;  // discriminator update never reaches generator weights
                fake_for_d = generator_batch(gen, batch, true);
            }
            Tensor d_loss = lsgan_d_loss(disc.forward(real_s, batch.series, batch.feats, true),
                                         disc.forward(fake_for_d, batch.series, batch.feats, true));
            double d_value = d_loss.item();
            require_finite(d_value, "discriminator loss", epoch);
            backward(d_loss);
            adam_step(d_params, d_state, cfg.lr);

            Tensor fake = generator_batch(gen, batch, true);
            Tensor g_loss = lsgan_g_loss(disc.forward(fake, batch.series, batch.feats, true));
            double ml_value = 0.0;
            if (cfg.moment_loss) {
                Tensor ml = moment_loss_term(fake, real_s);
                ml_value = ml.item();
                require_finite(ml_value, "moment loss", epoch);
                g_loss = add(g_loss, scale(ml, cfg.moment_loss_weight));
            }
            double g_value = g_loss.item();
            require_finite(g_value, "generator loss", epoch);
            backward(g_loss);
            adam_step(g_params, g_state, cfg.lr);
            zero_param_grads(d_params);  // discriminator saw the generator's backward pass

            sum_d += d_value;
            sum_g += g_value;
            sum_ml += ml_value;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.stage = st.growth_stage;
        stats.alpha = st.alpha;
        stats.d_loss = sum_d / static_cast<double>(cfg.batches_per_epoch);
        stats.g_loss = sum_g / static_cast<double>(cfg.batches_per_epoch);
        stats.ml = sum_ml / static_cast<double>(cfg.batches_per_epoch);
        char line[192];
        std::snprintf(line, sizeof(line),
                      "epoch=%lld stage=%lld alpha=%.6f d_loss=%.8f g_loss=%.8f ml=%.8f\n",
                      static_cast<long long>(stats.epoch), static_cast<long long>(stats.stage),
                      static_cast<double>(stats.alpha), stats.d_loss, stats.g_loss, stats.ml);
        metrics << line;
        metrics.flush();
        if (hooks.on_epoch) hooks.on_epoch(stats, gen, disc);
    }

    result.checkpoint_path = out_dir + "/checkpoint.bin";
    save_checkpoint(result.checkpoint_path, snapshot(gen, disc, echo));
    result.final_stage = gen.growth_stage();
    return result;
}

}  // namespace psagan
