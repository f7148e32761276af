#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "psagan/common.hpp"
#include "psagan/rng.hpp"

namespace psagan {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_size(const Shape& s);

// One node of the computation graph. Data is 32-bit float, row-major.
// Reductions and inner products accumulate in 64-bit before rounding back.
struct TensorNode {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // sized on first use
    bool requires_grad = false;
    bool is_leaf = true;
    std::uint64_t seq = 0;  // creation order; parents always have smaller seq
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    std::int64_t size() const { return shape_size(shape); }
    void ensure_grad();
};

// Value-semantics handle onto a graph node.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, float value, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::int64_t ndim() const { return static_cast<std::int64_t>(shape().size()); }
    std::int64_t dim(std::size_t i) const;
    std::int64_t size() const;
    bool requires_grad() const;
    void set_requires_grad(bool rg);

    std::vector<float>& data();
    const std::vector<float>& data() const;
    // Gradient buffer, zero-initialized on first access.
    std::vector<float>& grad();
    const std::vector<float>& grad() const;
    bool has_grad() const;
    void zero_grad();

    // Value of a single-element tensor.
    float item() const;

    // New leaf sharing no graph history (data copied).
    Tensor detach() const;

    std::shared_ptr<TensorNode> node() const { return node_; }
    TensorNode& raw() const;

  private:
    std::shared_ptr<TensorNode> node_;
};

// Reverse-mode gradient tape: the topologically ordered record of every node
// that participates in one backward pass. Creation order is topological by
// construction (an op's output is created after its inputs), and adjoints are
// replayed in exact reverse of that order.
class ComputationTape {
  public:
    static ComputationTape from(const Tensor& root);
    // Accumulates into .grad of every reachable node; seeds root with 1.
    void replay_adjoints();
    const std::vector<std::shared_ptr<TensorNode>>& nodes() const { return nodes_; }

  private:
    std::vector<std::shared_ptr<TensorNode>> nodes_;  // ascending seq
    std::shared_ptr<TensorNode> root_;
};

// Scalar-loss backward; repeated calls accumulate gradients.
void backward(const Tensor& loss);

// While alive, ops on the current thread record no graph (pure evaluation).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_enabled();

// ---- elementwise / broadcast ----
// Binary ops require equal shapes, except that either side may be a
// single-element tensor, which broadcasts.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float c);
Tensor add_const(const Tensor& x, float c);
Tensor elem_abs(const Tensor& x);    // subgradient 0 at 0
Tensor elem_sqrt(const Tensor& x);   // subgradient 0 at 0
Tensor leaky_relu(const Tensor& x, float slope);
Tensor log_sigmoid(const Tensor& x);
// 1 / max(x, eps); gradient is zero on the clamped region.
Tensor safe_reciprocal(const Tensor& x, float eps);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);           // [m,k]x[k,n]
Tensor bmm(const Tensor& a, const Tensor& b);              // [b,m,k]x[b,k,n]
Tensor transpose_last2(const Tensor& x);                   // 2-d or 3-d

// ---- shape ----
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat_channels(const std::vector<Tensor>& xs);     // [b,c_i,l] on axis 1
Tensor slice_lastdim(const Tensor& x, std::int64_t start, std::int64_t len);
Tensor pad_lastdim(const Tensor& x, std::int64_t left, std::int64_t right);
// [b,c] -> [b,c,l], value repeated along time; grad sums over time.
Tensor broadcast_time(const Tensor& x, std::int64_t l);
// Select rows of a [n,d] table; gradient flows only to the selected rows.
Tensor take_rows(const Tensor& table, const std::vector<std::int64_t>& idx);

// ---- sequence ops (last axis is time) ----
// Cross-correlation; x:[b,ci,l], w:[co,ci,k], bias:[co];
// l_out = l + 2*padding - dilation*(k-1).
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias,
              std::int64_t padding, std::int64_t dilation = 1);
Tensor avg_pool1d(const Tensor& x, std::int64_t kernel, std::int64_t stride);
// Doubles the last axis via linear interpolation on the center-aligned
// half-pixel grid: source position of output j is (j+0.5)/2 - 0.5, clamped.
Tensor upsample_linear2x(const Tensor& x);
Tensor softmax(const Tensor& x, std::int64_t axis);
Tensor max_lastdim(const Tensor& x);  // global max pool over the last axis

// ---- reductions ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// ---- random leaves ----
Tensor random_normal(const Shape& shape, Rng& rng, bool requires_grad = false);
Tensor random_uniform(const Shape& shape, float lo, float hi, Rng& rng,
                      bool requires_grad = false);

}  // namespace psagan
