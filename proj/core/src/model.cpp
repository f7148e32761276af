#include "psagan/model.hpp"

#include <cmath>

#include "psagan/common.hpp"

namespace psagan {

namespace {

// Features are produced at full resolution; stages consume them pooled to
// their own length (pooling a broadcast channel leaves it constant, so the
// embedding rows survive unchanged).
Tensor pool_to(const Tensor& x, std::int64_t len) {
    std::int64_t l = x.dim(2);
    if (l == len) return x;
    if (l % len != 0)
        throw DimensionError("cannot pool length " + std::to_string(l) + " to " +
                             std::to_string(len));
    std::int64_t f = l / len;
    return avg_pool1d(x, f, f);
}

Tensor blend(float alpha, const Tensor& full, const Tensor& skip) {
    if (alpha >= 1.0f) return full;
    return add(scale(full, alpha), scale(skip, 1.0f - alpha));
}

}  // namespace

std::int64_t ModelShape::n_stages() const {
    if (tau < 16 || (tau & (tau - 1)) != 0)
        throw ConfigError("target length must be a power of two >= 16, got " +
                          std::to_string(tau));
    std::int64_t l = 0, t = tau;
    while (t > kBaseLen) {
        t >>= 1;
        ++l;
    }
    return l;  // tau = 8 * 2^l
}

std::int64_t ModelShape::stage_len(std::int64_t s) const {
    return kBaseLen << s;
}

GeneratorStack::GeneratorStack(const ModelShape& shape, Rng& rng) : shape_(shape) {
    std::int64_t L = shape_.n_stages();
    (void)L;
    embedding_ = IndexEmbedding(shape_.n_series, kEmbedDim, rng);
    input_proj_ = Conv1dLayer(1 + shape_.d_cond(), kNf, 1, 0, false, rng);
    base_block_ = MainBlock(kNf, kNf, shape_.self_attention, rng);
    base_feat_proj_ = Conv1dLayer(kNf + shape_.d_cond(), kNf, 1, 0, false, rng);
    if (shape_.context_enabled()) base_ctx_ = ContextBlock(kNf, shape_.context_length, rng);
    stages_.push_back(make_stage(rng));
}

GeneratorStack::DoubleStage GeneratorStack::make_stage(Rng& rng) {
    DoubleStage s;
    s.block = MainBlock(kNf, kNf, shape_.self_attention, rng);
    s.feat_proj = Conv1dLayer(kNf + shape_.d_cond(), kNf, 1, 0, false, rng);
    s.out_conv = Conv1dLayer(kNf, 1, 3, 1, true, rng);
    if (shape_.context_enabled()) s.ctx = ContextBlock(kNf, shape_.context_length, rng);
    return s;
}

Tensor GeneratorStack::pooled_cond(const Tensor& feats_full, std::int64_t len) const {
    return pool_to(feats_full, len);
}

Tensor GeneratorStack::stage_forward(std::int64_t j, const Tensor& h, const Tensor& feats_full,
                                     float alpha, const Tensor& context_values,
                                     const Tensor& context_mask, bool train) {
    if (j < 1 || j > static_cast<std::int64_t>(stages_.size()))
        throw ContractError("stage " + std::to_string(j) + " not instantiated");
    if (alpha < 0.0f || alpha > 1.0f)
        throw ContractError("alpha must lie in [0,1], got " + std::to_string(alpha));
    DoubleStage& st = stages_[j - 1];
    Tensor up = upsample_linear2x(h);
    // At alpha == 0 the fresh block has exactly zero influence; skip it.
    Tensor mixed = alpha > 0.0f ? blend(alpha, st.block.forward(up, train), up) : up;
    Tensor cond = pooled_cond(feats_full, mixed.dim(2));
    Tensor out = st.feat_proj.forward(concat_channels({mixed, cond}), train);
    if (shape_.context_enabled()) out = st.ctx.forward(out, context_values, context_mask, train);
    return out;
}

Tensor GeneratorStack::cond_features(const std::vector<std::int64_t>& series,
                                     const Tensor& time_feats) {
    std::int64_t b = static_cast<std::int64_t>(series.size());
    if (time_feats.ndim() != 3 || time_feats.dim(0) != b || time_feats.dim(1) != shape_.d_time ||
        time_feats.dim(2) != shape_.tau)
        throw DimensionError("time features must be [b," + std::to_string(shape_.d_time) + "," +
                             std::to_string(shape_.tau) + "], got " +
                             shape_str(time_feats.shape()));
    Tensor emb = broadcast_time(embedding_.rows(series), shape_.tau);
    return concat_channels({time_feats, emb});
}

Tensor GeneratorStack::preprocess(const Tensor& noise, const std::vector<std::int64_t>& series,
                                  const Tensor& time_feats, bool train) {
    if (noise.ndim() != 3 || noise.dim(1) != 1 || noise.dim(2) != shape_.tau)
        throw DimensionError("noise must be [b,1," + std::to_string(shape_.tau) + "], got " +
                             shape_str(noise.shape()));
    if (static_cast<std::int64_t>(series.size()) != noise.dim(0))
        throw DimensionError("series index count " + std::to_string(series.size()) +
                             " != batch " + std::to_string(noise.dim(0)));
    Tensor feats_full = cond_features(series, time_feats);
    Tensor x0 = concat_channels({noise, feats_full});
    Tensor h = input_proj_.forward(x0, train);
    return pool_to(h, kBaseLen);
}

Tensor GeneratorStack::forward(const Tensor& noise, const std::vector<std::int64_t>& series,
                               const Tensor& time_feats, const Tensor& context_values,
                               const Tensor& context_mask, bool train) {
    if (shape_.context_enabled()) {
        if (!context_values.defined() || !context_mask.defined())
            throw ContractError("history conditioning is enabled but no context was given");
    } else if (context_values.defined() || context_mask.defined()) {
        throw ContractError("context given but history conditioning is disabled");
    }

    Tensor h = preprocess(noise, series, time_feats, train);
    Tensor feats_full = cond_features(series, time_feats);
    h = base_block_.forward(h, train);
    h = base_feat_proj_.forward(concat_channels({h, pooled_cond(feats_full, kBaseLen)}), train);
    if (shape_.context_enabled())
        h = base_ctx_.forward(h, context_values, context_mask, train);
    for (std::int64_t j = 1; j <= growth_stage_; ++j) {
        float a = (j == growth_stage_) ? alpha_ : 1.0f;
        h = stage_forward(j, h, feats_full, a, context_values, context_mask, train);
    }
    return stages_[growth_stage_ - 1].out_conv.forward(h, train);
}

Tensor GeneratorStack::forward(const Tensor& noise, const std::vector<std::int64_t>& series,
                               const Tensor& time_feats, bool train) {
    return forward(noise, series, time_feats, Tensor(), Tensor(), train);
}

GanSample GeneratorStack::generate(const Tensor& noise, const std::vector<std::int64_t>& series,
                                   const std::vector<std::int64_t>& starts,
                                   const Tensor& time_feats, const Tensor& context_values,
                                   const Tensor& context_mask, bool train) {
    Tensor out = forward(noise, series, time_feats, context_values, context_mask, train);
    GanSample s;
    s.values = reshape(out, {out.dim(0), out.dim(2)});
    s.series = series;
    s.starts = starts;
    return s;
}

void GeneratorStack::grow(Rng& rng) {
    if (growth_stage_ >= shape_.n_stages())
        throw ContractError("generator already at final stage " +
                            std::to_string(growth_stage_));
    stages_.push_back(make_stage(rng));
    ++growth_stage_;
    alpha_ = 0.0f;
}

void GeneratorStack::grow_to(std::int64_t stage, Rng& rng) {
    if (stage < growth_stage_ || stage > shape_.n_stages())
        throw ContractError("cannot grow to stage " + std::to_string(stage) + " from " +
                            std::to_string(growth_stage_));
    while (growth_stage_ < stage) grow(rng);
}

void GeneratorStack::set_alpha(float a) {
    if (a < 0.0f || a > 1.0f)
        throw ContractError("alpha must lie in [0,1], got " + std::to_string(a));
    alpha_ = a;
}

std::vector<NamedTensor> GeneratorStack::params() {
    std::vector<NamedTensor> p, b;
    collect(p, b);
    return p;
}

std::vector<NamedTensor> GeneratorStack::buffers() {
    std::vector<NamedTensor> p, b;
    collect(p, b);
    return b;
}

void GeneratorStack::collect(std::vector<NamedTensor>& params,
                             std::vector<NamedTensor>& buffers) {
    embedding_.collect("g.embed", params, buffers);
    input_proj_.collect("g.in", params, buffers);
    base_block_.collect("g.base.block", params, buffers);
    base_feat_proj_.collect("g.base.feat", params, buffers);
    if (shape_.context_enabled()) base_ctx_.collect("g.base.ctx", params, buffers);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
        std::string pre = "g.s" + std::to_string(i + 1);
        stages_[i].block.collect(pre + ".block", params, buffers);
        stages_[i].feat_proj.collect(pre + ".feat", params, buffers);
        stages_[i].out_conv.collect(pre + ".out", params, buffers);
        if (shape_.context_enabled()) stages_[i].ctx.collect(pre + ".ctx", params, buffers);
    }
}

DiscriminatorStack::DiscriminatorStack(const ModelShape& shape, Rng& rng) : shape_(shape) {
    shape_.n_stages();  // validates tau
    embedding_ = IndexEmbedding(shape_.n_series, kEmbedDim, rng);
    input_conv_ = Conv1dLayer(1 + shape_.d_cond(), kNf, 1, 0, true, rng);
    halving_.emplace_back(kNf, kNf, shape_.self_attention, rng);
    head_block_ = MainBlock(kNf, kNf, shape_.self_attention, rng);
    head_conv_ = Conv1dLayer(kNf, 1, 3, 1, true, rng);
    head_fc_ = LinearLayer(kBaseLen, 1, true, rng);
}

Tensor DiscriminatorStack::forward(const Tensor& values, const std::vector<std::int64_t>& series,
                                   const Tensor& time_feats, bool train) {
    std::int64_t l = shape_.stage_len(growth_stage_);
    if (values.ndim() != 3 || values.dim(1) != 1 || values.dim(2) != l)
        throw DimensionError("discriminator at stage " + std::to_string(growth_stage_) +
                             " accepts [b,1," + std::to_string(l) + "], got " +
                             shape_str(values.shape()));
    std::int64_t b = values.dim(0);
    if (static_cast<std::int64_t>(series.size()) != b)
        throw DimensionError("series index count " + std::to_string(series.size()) +
                             " != batch " + std::to_string(b));
    if (time_feats.ndim() != 3 || time_feats.dim(1) != shape_.d_time)
        throw DimensionError("time features must be [b," + std::to_string(shape_.d_time) +
                             ",tau], got " + shape_str(time_feats.shape()));

    Tensor tf = pool_to(time_feats, l);
    Tensor emb = broadcast_time(embedding_.rows(series), l);
    Tensor x = concat_channels({values, tf, emb});
    Tensor y = leaky_relu(input_conv_.forward(x, train), kLeakySlope);
    for (std::int64_t j = growth_stage_; j >= 1; --j) {
        float a = (j == growth_stage_) ? alpha_ : 1.0f;
        if (a > 0.0f) {
            Tensor blk = avg_pool1d(halving_[j - 1].forward(y, train), 2, 2);
            y = (a >= 1.0f) ? blk : blend(a, blk, avg_pool1d(y, 2, 2));
        } else {
            y = avg_pool1d(y, 2, 2);
        }
    }
    Tensor hb = head_block_.forward(y, train);
    Tensor hc = leaky_relu(head_conv_.forward(hb, train), kLeakySlope);
    Tensor flat = reshape(hc, {b, kBaseLen});
    Tensor s = head_fc_.forward(flat, train);
    return reshape(s, {b});
}

void DiscriminatorStack::grow(Rng& rng) {
    if (growth_stage_ >= shape_.n_stages())
        throw ContractError("discriminator already at final stage " +
                            std::to_string(growth_stage_));
    halving_.emplace_back(kNf, kNf, shape_.self_attention, rng);
    ++growth_stage_;
    alpha_ = 0.0f;
}

void DiscriminatorStack::grow_to(std::int64_t stage, Rng& rng) {
    if (stage < growth_stage_ || stage > shape_.n_stages())
        throw ContractError("cannot grow to stage " + std::to_string(stage) + " from " +
                            std::to_string(growth_stage_));
    while (growth_stage_ < stage) grow(rng);
}

void DiscriminatorStack::set_alpha(float a) {
    if (a < 0.0f || a > 1.0f)
        throw ContractError("alpha must lie in [0,1], got " + std::to_string(a));
    alpha_ = a;
}

std::vector<NamedTensor> DiscriminatorStack::params() {
    std::vector<NamedTensor> p, b;
    collect(p, b);
    return p;
}

std::vector<NamedTensor> DiscriminatorStack::buffers() {
    std::vector<NamedTensor> p, b;
    collect(p, b);
    return b;
}

void DiscriminatorStack::collect(std::vector<NamedTensor>& params,
                                 std::vector<NamedTensor>& buffers) {
    embedding_.collect("d.embed", params, buffers);
    input_conv_.collect("d.in", params, buffers);
    for (std::size_t i = 0; i < halving_.size(); ++i)
        halving_[i].collect("d.h" + std::to_string(i + 1), params, buffers);
    head_block_.collect("d.head.block", params, buffers);
    head_conv_.collect("d.head.conv", params, buffers);
    head_fc_.collect("d.head.fc", params, buffers);
}

}  // namespace psagan
