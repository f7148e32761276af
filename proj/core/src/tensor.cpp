#include "psagan/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace psagan {

namespace {

std::atomic<std::uint64_t> g_seq{1};

thread_local bool t_grad_enabled = true;

std::shared_ptr<TensorNode> new_node(Shape shape) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data.assign(static_cast<std::size_t>(shape_size(n->shape)), 0.0f);
    n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
    return n;
}

bool any_requires_grad(const std::vector<std::shared_ptr<TensorNode>>& parents) {
    for (const auto& p : parents) {
        if (p && p->requires_grad) return true;
    }
    return false;
}

// Wires the graph edges when recording is on and some input needs gradients.
void attach(const std::shared_ptr<TensorNode>& out,
            std::vector<std::shared_ptr<TensorNode>> parents,
            std::function<void(TensorNode&)> backward_fn) {
    if (!t_grad_enabled || !any_requires_grad(parents)) return;
    out->requires_grad = true;
    out->is_leaf = false;
    out->parents = std::move(parents);
    out->backward_fn = std::move(backward_fn);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

std::int64_t shape_size(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

void TensorNode::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    auto n = new_node(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::full(const Shape& shape, float value, bool requires_grad) {
    auto n = new_node(shape);
    std::fill(n->data.begin(), n->data.end(), value);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from(const Shape& shape, std::vector<float> data, bool requires_grad) {
    if (static_cast<std::int64_t>(data.size()) != shape_size(shape)) {
        throw DimensionError("Tensor::from: data size " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto n = new_node(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

TensorNode& Tensor::raw() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return *node_;
}

const Shape& Tensor::shape() const { return raw().shape; }

std::int64_t Tensor::dim(std::size_t i) const {
    const auto& s = shape();
    if (i >= s.size()) throw DimensionError("dim index out of range for shape " + shape_str(s));
    return s[i];
}

std::int64_t Tensor::size() const { return raw().size(); }
bool Tensor::requires_grad() const { return raw().requires_grad; }

void Tensor::set_requires_grad(bool rg) {
    auto& n = raw();
    if (!n.is_leaf && rg) throw ContractError("set_requires_grad: only leaves can be toggled");
    n.requires_grad = rg;
}

std::vector<float>& Tensor::data() { return raw().data; }
const std::vector<float>& Tensor::data() const { return raw().data; }

std::vector<float>& Tensor::grad() {
    raw().ensure_grad();
    return raw().grad;
}

const std::vector<float>& Tensor::grad() const {
    raw().ensure_grad();
    return raw().grad;
}

bool Tensor::has_grad() const { return !raw().grad.empty(); }

void Tensor::zero_grad() {
    auto& n = raw();
    if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0f);
}

float Tensor::item() const {
    if (size() != 1) throw ContractError("item: tensor has " + std::to_string(size()) + " elements");
    return data()[0];
}

Tensor Tensor::detach() const {
    auto n = new_node(shape());
    n->data = data();
    return Tensor(n);
}

// ---- tape ----

ComputationTape ComputationTape::from(const Tensor& root) {
    ComputationTape tape;
    tape.root_ = root.node();
    std::unordered_set<TensorNode*> seen;
    std::vector<std::shared_ptr<TensorNode>> stack{root.node()};
    while (!stack.empty()) {
        auto n = stack.back();
        stack.pop_back();
        if (!n || seen.count(n.get())) continue;
        seen.insert(n.get());
        tape.nodes_.push_back(n);
        for (const auto& p : n->parents) stack.push_back(p);
    }
    std::sort(tape.nodes_.begin(), tape.nodes_.end(),
              [](const auto& a, const auto& b) { return a->seq < b->seq; });
    return tape;
}

void ComputationTape::replay_adjoints() {
    if (!root_) return;
    // Interior adjoints are scratch state of one replay; only leaf gradients
    // accumulate across calls.
    for (auto& n : nodes_) {
        if (!n->is_leaf && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0f);
    }
    root_->ensure_grad();
    root_->grad[0] += 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        auto& n = **it;
        if (n.backward_fn) {
            n.ensure_grad();
            n.backward_fn(n);
        }
    }
}

void backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward: loss must be a single-element tensor, got shape " +
                            shape_str(loss.shape()));
    }
    ComputationTape::from(loss).replay_adjoints();
}

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }
bool grad_enabled() { return t_grad_enabled; }

// ---- elementwise ----

namespace {

enum class BinKind { kAdd, kSub, kMul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
    const bool a_scalar = a.size() == 1;
    const bool b_scalar = b.size() == 1;
    if (!(a.shape() == b.shape() || a_scalar || b_scalar)) {
        check_same_shape(a, b, name);
    }
    const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
    auto out = new_node(out_shape);
    const auto& ad = a.data();
    const auto& bd = b.data();
    const std::size_t n = out->data.size();
    for (std::size_t i = 0; i < n; ++i) {
        float av = ad[a_scalar ? 0 : i];
        float bv = bd[b_scalar ? 0 : i];
        switch (kind) {
            case BinKind::kAdd: out->data[i] = av + bv; break;
            case BinKind::kSub: out->data[i] = av - bv; break;
            case BinKind::kMul: out->data[i] = av * bv; break;
        }
    }
    auto an = a.node();
    auto bn = b.node();
    attach(out, {an, bn}, [an, bn, a_scalar, b_scalar, kind](TensorNode& self) {
        const std::size_t n = self.data.size();
        if (an->requires_grad) {
            an->ensure_grad();
            if (a_scalar && n > 1) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    float g = self.grad[i];
                    acc += kind == BinKind::kMul ? double(g) * bn->data[b_scalar ? 0 : i] : double(g);
                }
                an->grad[0] += static_cast<float>(acc);
            } else {
                for (std::size_t i = 0; i < n; ++i) {
                    float g = self.grad[i];
                    an->grad[i] += kind == BinKind::kMul ? g * bn->data[b_scalar ? 0 : i] : g;
                }
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            const float sign = kind == BinKind::kSub ? -1.0f : 1.0f;
            if (b_scalar && n > 1) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    float g = self.grad[i];
                    acc += kind == BinKind::kMul ? double(g) * an->data[a_scalar ? 0 : i]
                                                 : double(g) * sign;
                }
                bn->grad[0] += static_cast<float>(acc);
            } else {
                for (std::size_t i = 0; i < n; ++i) {
                    float g = self.grad[i];
                    bn->grad[i] += kind == BinKind::kMul ? g * an->data[a_scalar ? 0 : i] : g * sign;
                }
            }
        }
    });
    return Tensor(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::kMul, "mul"); }

Tensor scale(const Tensor& x, float c) {
    auto out = new_node(x.shape());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) out->data[i] = xd[i] * c;
    auto xn = x.node();
    attach(out, {xn}, [xn, c](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += c * self.grad[i];
    });
    return Tensor(out);
}

Tensor add_const(const Tensor& x, float c) {
    auto out = new_node(x.shape());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) out->data[i] = xd[i] + c;
    auto xn = x.node();
    attach(out, {xn}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
    return Tensor(out);
}

Tensor elem_abs(const Tensor& x) {
    auto out = new_node(x.shape());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) out->data[i] = std::fabs(xd[i]);
    auto xn = x.node();
    attach(out, {xn}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            float v = xn->data[i];
            float s = v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f);
            xn->grad[i] += s * self.grad[i];
        }
    });
    return Tensor(out);
}

Tensor elem_sqrt(const Tensor& x) {
    auto out = new_node(x.shape());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
        if (xd[i] < 0.0f) {
            throw NumericError("elem_sqrt: negative input " + std::to_string(xd[i]));
        }
        out->data[i] = std::sqrt(xd[i]);
    }
    auto xn = x.node();
    attach(out, {xn}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            float y = self.data[i];
            xn->grad[i] += y > 0.0f ? 0.5f / y * self.grad[i] : 0.0f;
        }
    });
    return Tensor(out);
}

Tensor leaky_relu(const Tensor& x, float slope) {
    auto out = new_node(x.shape());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
        out->data[i] = xd[i] >= 0.0f ? xd[i] : slope * xd[i];
    }
    auto xn = x.node();
    attach(out, {xn}, [xn, slope](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            xn->grad[i] += (xn->data[i] >= 0.0f ? 1.0f : slope) * self.grad[i];
        }
    });
    return Tensor(out);
}

Tensor log_sigmoid(const Tensor& x) {
    auto out = new_node(x.shape());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
        double v = xd[i];
        // log(sigmoid(v)) = -softplus(-v), computed without overflow.
        out->data[i] = static_cast<float>(v >= 0.0 ? -std::log1p(std::exp(-v))
                                                   : v - std::log1p(std::exp(v)));
    }
    auto xn = x.node();
    attach(out, {xn}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            double v = xn->data[i];
            double s = v >= 0.0 ? std::exp(-v) / (1.0 + std::exp(-v)) : 1.0 / (1.0 + std::exp(v));
            xn->grad[i] += static_cast<float>(s) * self.grad[i];
        }
    });
    return Tensor(out);
}

Tensor safe_reciprocal(const Tensor& x, float eps) {
    if (eps <= 0.0f) throw ContractError("safe_reciprocal: eps must be positive");
    auto out = new_node(x.shape());
    const auto& xd = x.data();
    for (std::size_t i = 0; i < xd.size(); ++i) {
        out->data[i] = 1.0f / std::max(xd[i], eps);
    }
    auto xn = x.node();
    attach(out, {xn}, [xn, eps](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (xn->data[i] > eps) {
                float r = self.data[i];
                xn->grad[i] += -r * r * self.grad[i];
            }
        }
    });
    return Tensor(out);
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = new_node({m, n});
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::int64_t t = 0; t < k; ++t) {
                acc += double(ad[i * k + t]) * bd[t * n + j];
            }
            out->data[i * n + j] = static_cast<float>(acc);
        }
    }
    auto an = a.node();
    auto bn = b.node();
    attach(out, {an, bn}, [an, bn, m, k, n](TensorNode& self) {
        if (an->requires_grad) {
            an->ensure_grad();
            for (std::int64_t i = 0; i < m; ++i) {
                for (std::int64_t t = 0; t < k; ++t) {
                    double acc = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) {
                        acc += double(self.grad[i * n + j]) * bn->data[t * n + j];
                    }
                    an->grad[i * k + t] += static_cast<float>(acc);
                }
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (std::int64_t t = 0; t < k; ++t) {
                for (std::int64_t j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (std::int64_t i = 0; i < m; ++i) {
                        acc += double(an->data[i * k + t]) * self.grad[i * n + j];
                    }
                    bn->grad[t * n + j] += static_cast<float>(acc);
                }
            }
        }
    });
    return Tensor(out);
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
        throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    auto out = new_node({bs, m, n});
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (std::int64_t bi = 0; bi < bs; ++bi) {
        const float* A = ad.data() + bi * m * k;
        const float* B = bd.data() + bi * k * n;
        float* C = out->data.data() + bi * m * n;
        for (std::int64_t i = 0; i < m; ++i) {
            for (std::int64_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::int64_t t = 0; t < k; ++t) acc += double(A[i * k + t]) * B[t * n + j];
                C[i * n + j] = static_cast<float>(acc);
            }
        }
    }
    auto an = a.node();
    auto bn = b.node();
    attach(out, {an, bn}, [an, bn, bs, m, k, n](TensorNode& self) {
        for (std::int64_t bi = 0; bi < bs; ++bi) {
            const float* G = self.grad.data() + bi * m * n;
            if (an->requires_grad) {
                an->ensure_grad();
                const float* B = bn->data.data() + bi * k * n;
                float* dA = an->grad.data() + bi * m * k;
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (std::int64_t j = 0; j < n; ++j) acc += double(G[i * n + j]) * B[t * n + j];
                        dA[i * k + t] += static_cast<float>(acc);
                    }
                }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                const float* A = an->data.data() + bi * m * k;
                float* dB = bn->grad.data() + bi * k * n;
                for (std::int64_t t = 0; t < k; ++t) {
                    for (std::int64_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (std::int64_t i = 0; i < m; ++i) acc += double(A[i * k + t]) * G[i * n + j];
                        dB[t * n + j] += static_cast<float>(acc);
                    }
                }
            }
        }
    });
    return Tensor(out);
}

Tensor transpose_last2(const Tensor& x) {
    if (x.ndim() != 2 && x.ndim() != 3) {
        throw DimensionError("transpose_last2: need 2-d or 3-d tensor, got " + shape_str(x.shape()));
    }
    const std::int64_t bs = x.ndim() == 3 ? x.dim(0) : 1;
    const std::int64_t r = x.dim(x.ndim() - 2), c = x.dim(x.ndim() - 1);
    Shape out_shape = x.shape();
    std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
    auto out = new_node(out_shape);
    const auto& xd = x.data();
    for (std::int64_t bi = 0; bi < bs; ++bi) {
        const float* X = xd.data() + bi * r * c;
        float* Y = out->data.data() + bi * r * c;
        for (std::int64_t i = 0; i < r; ++i) {
            for (std::int64_t j = 0; j < c; ++j) Y[j * r + i] = X[i * c + j];
        }
    }
    auto xn = x.node();
    attach(out, {xn}, [xn, bs, r, c](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t bi = 0; bi < bs; ++bi) {
            const float* G = self.grad.data() + bi * r * c;
            float* dX = xn->grad.data() + bi * r * c;
            for (std::int64_t i = 0; i < r; ++i) {
                for (std::int64_t j = 0; j < c; ++j) dX[i * c + j] += G[j * r + i];
            }
        }
    });
    return Tensor(out);
}

// ---- shape ----

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (shape_size(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                             shape_str(shape));
    }
    auto out = new_node(shape);
    out->data = x.data();
    auto xn = x.node();
    attach(out, {xn}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
    return Tensor(out);
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("concat_channels: no inputs");
    const std::int64_t b = xs[0].dim(0);
    const std::int64_t l = xs[0].dim(2);
    std::int64_t c_total = 0;
    for (const auto& x : xs) {
        if (x.ndim() != 3 || x.dim(0) != b || x.dim(2) != l) {
            throw DimensionError("concat_channels: incompatible input " + shape_str(x.shape()));
        }
        c_total += x.dim(1);
    }
    auto out = new_node({b, c_total, l});
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::vector<std::int64_t> offsets;
    std::int64_t off = 0;
    for (const auto& x : xs) {
        const std::int64_t c = x.dim(1);
        const auto& xd = x.data();
        for (std::int64_t bi = 0; bi < b; ++bi) {
            std::memcpy(out->data.data() + (bi * c_total + off) * l, xd.data() + bi * c * l,
                        static_cast<std::size_t>(c * l) * sizeof(float));
        }
        parents.push_back(x.node());
        offsets.push_back(off);
        off += c;
    }
    auto parents_copy = parents;
    attach(out, std::move(parents),
           [parents_copy, offsets, b, c_total, l](TensorNode& self) {
               for (std::size_t pi = 0; pi < parents_copy.size(); ++pi) {
                   auto& p = parents_copy[pi];
                   if (!p->requires_grad) continue;
                   p->ensure_grad();
                   const std::int64_t c = p->shape[1];
                   const std::int64_t off = offsets[pi];
                   for (std::int64_t bi = 0; bi < b; ++bi) {
                       const float* g = self.grad.data() + (bi * c_total + off) * l;
                       float* pg = p->grad.data() + bi * c * l;
                       for (std::int64_t i = 0; i < c * l; ++i) pg[i] += g[i];
                   }
               }
           });
    return Tensor(out);
}

Tensor slice_lastdim(const Tensor& x, std::int64_t start, std::int64_t len) {
    const std::int64_t l = x.dim(x.ndim() - 1);
    if (start < 0 || len <= 0 || start + len > l) {
        throw DimensionError("slice_lastdim: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of bounds for length " +
                             std::to_string(l));
    }
    Shape out_shape = x.shape();
    out_shape.back() = len;
    auto out = new_node(out_shape);
    const std::int64_t outer = x.size() / l;
    const auto& xd = x.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        std::memcpy(out->data.data() + o * len, xd.data() + o * l + start,
                    static_cast<std::size_t>(len) * sizeof(float));
    }
    auto xn = x.node();
    attach(out, {xn}, [xn, start, len, l, outer](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
            const float* g = self.grad.data() + o * len;
            float* dx = xn->grad.data() + o * l + start;
            for (std::int64_t i = 0; i < len; ++i) dx[i] += g[i];
        }
    });
    return Tensor(out);
}

Tensor pad_lastdim(const Tensor& x, std::int64_t left, std::int64_t right) {
    if (left < 0 || right < 0) throw ContractError("pad_lastdim: negative padding");
    const std::int64_t l = x.dim(x.ndim() - 1);
    Shape out_shape = x.shape();
    out_shape.back() = l + left + right;
    auto out = new_node(out_shape);
    const std::int64_t outer = x.size() / l;
    const std::int64_t lo = out_shape.back();
    const auto& xd = x.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        std::memcpy(out->data.data() + o * lo + left, xd.data() + o * l,
                    static_cast<std::size_t>(l) * sizeof(float));
    }
    auto xn = x.node();
    attach(out, {xn}, [xn, left, l, lo, outer](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
            const float* g = self.grad.data() + o * lo + left;
            float* dx = xn->grad.data() + o * l;
            for (std::int64_t i = 0; i < l; ++i) dx[i] += g[i];
        }
    });
    return Tensor(out);
}

Tensor broadcast_time(const Tensor& x, std::int64_t l) {
    if (x.ndim() != 2) throw DimensionError("broadcast_time: need [b,c], got " + shape_str(x.shape()));
    if (l <= 0) throw ContractError("broadcast_time: length must be positive");
    const std::int64_t b = x.dim(0), c = x.dim(1);
    auto out = new_node({b, c, l});
    const auto& xd = x.data();
    for (std::int64_t i = 0; i < b * c; ++i) {
        float v = xd[i];
        float* row = out->data.data() + i * l;
        std::fill(row, row + l, v);
    }
    auto xn = x.node();
    attach(out, {xn}, [xn, b, c, l](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t i = 0; i < b * c; ++i) {
            const float* g = self.grad.data() + i * l;
            double acc = 0.0;
            for (std::int64_t j = 0; j < l; ++j) acc += g[j];
            xn->grad[i] += static_cast<float>(acc);
        }
    });
    return Tensor(out);
}

Tensor take_rows(const Tensor& table, const std::vector<std::int64_t>& idx) {
    if (table.ndim() != 2) {
        throw DimensionError("take_rows: need [n,d] table, got " + shape_str(table.shape()));
    }
    const std::int64_t n = table.dim(0), d = table.dim(1);
    for (auto i : idx) {
        if (i < 0 || i >= n) {
            throw IndexError("take_rows: index " + std::to_string(i) + " out of range [0," +
                             std::to_string(n) + ")");
        }
    }
    auto out = new_node({static_cast<std::int64_t>(idx.size()), d});
    const auto& td = table.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::memcpy(out->data.data() + r * d, td.data() + idx[r] * d,
                    static_cast<std::size_t>(d) * sizeof(float));
    }
    auto tn = table.node();
    attach(out, {tn}, [tn, idx, d](TensorNode& self) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const float* g = self.grad.data() + r * d;
            float* dt = tn->grad.data() + idx[r] * d;
            for (std::int64_t j = 0; j < d; ++j) dt[j] += g[j];
        }
    });
    return Tensor(out);
}

// ---- sequence ops ----

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, std::int64_t padding,
              std::int64_t dilation) {
    if (x.ndim() != 3 || w.ndim() != 3) {
        throw DimensionError("conv1d: need x [b,ci,l] and w [co,ci,k], got " +
                             shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    if (x.dim(1) != w.dim(1)) {
        throw DimensionError("conv1d: channel mismatch, x has " + std::to_string(x.dim(1)) +
                             " input channels, w expects " + std::to_string(w.dim(1)));
    }
    if (padding < 0 || dilation < 1) throw ContractError("conv1d: bad padding/dilation");
    const std::int64_t b = x.dim(0), ci = x.dim(1), l = x.dim(2);
    const std::int64_t co = w.dim(0), k = w.dim(2);
    const std::int64_t l_out = l + 2 * padding - dilation * (k - 1);
    if (l_out <= 0) {
        throw DimensionError("conv1d: kernel span exceeds padded input (l=" + std::to_string(l) +
                             ", k=" + std::to_string(k) + ", dilation=" + std::to_string(dilation) +
                             ", padding=" + std::to_string(padding) + ")");
    }
    if (bias.defined() && bias.size() != co) {
        throw DimensionError("conv1d: bias size " + std::to_string(bias.size()) +
                             " != out channels " + std::to_string(co));
    }
    auto out = new_node({b, co, l_out});
    const auto& xd = x.data();
    const auto& wd = w.data();
    std::vector<double> row(static_cast<std::size_t>(l_out));
    for (std::int64_t bi = 0; bi < b; ++bi) {
        for (std::int64_t oc = 0; oc < co; ++oc) {
            std::fill(row.begin(), row.end(), bias.defined() ? double(bias.data()[oc]) : 0.0);
            for (std::int64_t ic = 0; ic < ci; ++ic) {
                const float* xrow = xd.data() + (bi * ci + ic) * l;
                const float* wrow = wd.data() + (oc * ci + ic) * k;
                for (std::int64_t t = 0; t < k; ++t) {
                    const double wv = wrow[t];
                    const std::int64_t shift = t * dilation - padding;
                    const std::int64_t j_lo = std::max<std::int64_t>(0, -shift);
                    const std::int64_t j_hi = std::min<std::int64_t>(l_out, l - shift);
                    for (std::int64_t j = j_lo; j < j_hi; ++j) row[j] += wv * xrow[j + shift];
                }
            }
            float* orow = out->data.data() + (bi * co + oc) * l_out;
            for (std::int64_t j = 0; j < l_out; ++j) orow[j] = static_cast<float>(row[j]);
        }
    }
    auto xn = x.node();
    auto wn = w.node();
    auto bn = bias.defined() ? bias.node() : nullptr;
    std::vector<std::shared_ptr<TensorNode>> parents{xn, wn};
    if (bn) parents.push_back(bn);
    attach(out, std::move(parents),
           [xn, wn, bn, b, ci, l, co, k, l_out, padding, dilation](TensorNode& self) {
               if (bn && bn->requires_grad) {
                   bn->ensure_grad();
                   for (std::int64_t oc = 0; oc < co; ++oc) {
                       double acc = 0.0;
                       for (std::int64_t bi = 0; bi < b; ++bi) {
                           const float* g = self.grad.data() + (bi * co + oc) * l_out;
                           for (std::int64_t j = 0; j < l_out; ++j) acc += g[j];
                       }
                       bn->grad[oc] += static_cast<float>(acc);
                   }
               }
               if (wn->requires_grad) {
                   wn->ensure_grad();
                   for (std::int64_t oc = 0; oc < co; ++oc) {
                       for (std::int64_t ic = 0; ic < ci; ++ic) {
                           float* dw = wn->grad.data() + (oc * ci + ic) * k;
                           for (std::int64_t t = 0; t < k; ++t) {
                               const std::int64_t shift = t * dilation - padding;
                               const std::int64_t j_lo = std::max<std::int64_t>(0, -shift);
                               const std::int64_t j_hi = std::min<std::int64_t>(l_out, l - shift);
                               double acc = 0.0;
                               for (std::int64_t bi = 0; bi < b; ++bi) {
                                   const float* g = self.grad.data() + (bi * co + oc) * l_out;
                                   const float* xrow = xn->data.data() + (bi * ci + ic) * l;
                                   for (std::int64_t j = j_lo; j < j_hi; ++j) {
                                       acc += double(g[j]) * xrow[j + shift];
                                   }
                               }
                               dw[t] += static_cast<float>(acc);
                           }
                       }
                   }
               }
               if (xn->requires_grad) {
                   xn->ensure_grad();
                   std::vector<double> drow(static_cast<std::size_t>(l));
                   for (std::int64_t bi = 0; bi < b; ++bi) {
                       for (std::int64_t ic = 0; ic < ci; ++ic) {
                           std::fill(drow.begin(), drow.end(), 0.0);
                           for (std::int64_t oc = 0; oc < co; ++oc) {
                               const float* g = self.grad.data() + (bi * co + oc) * l_out;
                               const float* wrow = wn->data.data() + (oc * ci + ic) * k;
                               for (std::int64_t t = 0; t < k; ++t) {
                                   const double wv = wrow[t];
                                   const std::int64_t shift = t * dilation - padding;
                                   const std::int64_t j_lo = std::max<std::int64_t>(0, -shift);
                                   const std::int64_t j_hi = std::min<std::int64_t>(l_out, l - shift);
                                   for (std::int64_t j = j_lo; j < j_hi; ++j) {
                                       drow[j + shift] += wv * g[j];
                                   }
                               }
                           }
                           float* dx = xn->grad.data() + (bi * ci + ic) * l;
                           for (std::int64_t j = 0; j < l; ++j) dx[j] += static_cast<float>(drow[j]);
                       }
                   }
               }
           });
    return Tensor(out);
}

Tensor avg_pool1d(const Tensor& x, std::int64_t kernel, std::int64_t stride) {
    if (kernel <= 0 || stride <= 0) throw ContractError("avg_pool1d: bad kernel/stride");
    const std::int64_t l = x.dim(x.ndim() - 1);
    if (kernel > l) {
        throw DimensionError("avg_pool1d: kernel " + std::to_string(kernel) +
                             " exceeds length " + std::to_string(l));
    }
    const std::int64_t n = (l - kernel) / stride + 1;
    Shape out_shape = x.shape();
    out_shape.back() = n;
    auto out = new_node(out_shape);
    const std::int64_t outer = x.size() / l;
    const auto& xd = x.data();
    const double inv_k = 1.0 / double(kernel);
    for (std::int64_t o = 0; o < outer; ++o) {
        const float* xrow = xd.data() + o * l;
        float* orow = out->data.data() + o * n;
        for (std::int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::int64_t t = 0; t < kernel; ++t) acc += xrow[j * stride + t];
            orow[j] = static_cast<float>(acc * inv_k);
        }
    }
    auto xn = x.node();
    attach(out, {xn}, [xn, kernel, stride, l, n, outer](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const float inv_k = 1.0f / float(kernel);
        for (std::int64_t o = 0; o < outer; ++o) {
            const float* g = self.grad.data() + o * n;
            float* dx = xn->grad.data() + o * l;
            for (std::int64_t j = 0; j < n; ++j) {
                const float gv = g[j] * inv_k;
                for (std::int64_t t = 0; t < kernel; ++t) dx[j * stride + t] += gv;
            }
        }
    });
    return Tensor(out);
}

Tensor upsample_linear2x(const Tensor& x) {
    const std::int64_t l = x.dim(x.ndim() - 1);
    const std::int64_t lo = 2 * l;
    Shape out_shape = x.shape();
    out_shape.back() = lo;
    auto out = new_node(out_shape);
    const std::int64_t outer = x.size() / l;
    // Precompute the source taps once; they only depend on l.
    std::vector<std::int64_t> i0(static_cast<std::size_t>(lo)), i1(static_cast<std::size_t>(lo));
    std::vector<float> frac(static_cast<std::size_t>(lo));
    for (std::int64_t j = 0; j < lo; ++j) {
        double s = (double(j) + 0.5) / 2.0 - 0.5;
        s = std::min(std::max(s, 0.0), double(l - 1));
        std::int64_t a = static_cast<std::int64_t>(std::floor(s));
        i0[j] = a;
        i1[j] = std::min(a + 1, l - 1);
        frac[j] = static_cast<float>(s - double(a));
    }
    const auto& xd = x.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        const float* xrow = xd.data() + o * l;
        float* orow = out->data.data() + o * lo;
        for (std::int64_t j = 0; j < lo; ++j) {
            orow[j] = (1.0f - frac[j]) * xrow[i0[j]] + frac[j] * xrow[i1[j]];
        }
    }
    auto xn = x.node();
    attach(out, {xn}, [xn, i0, i1, frac, l, lo, outer](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
            const float* g = self.grad.data() + o * lo;
            float* dx = xn->grad.data() + o * l;
            for (std::int64_t j = 0; j < lo; ++j) {
                dx[i0[j]] += (1.0f - frac[j]) * g[j];
                dx[i1[j]] += frac[j] * g[j];
            }
        }
    });
    return Tensor(out);
}

Tensor softmax(const Tensor& x, std::int64_t axis) {
    if (axis < 0 || axis >= x.ndim()) {
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                             shape_str(x.shape()));
    }
    const auto& s = x.shape();
    std::int64_t outer = 1, inner = 1;
    for (std::int64_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::int64_t d = s[axis];
    auto out = new_node(s);
    const auto& xd = x.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * d * inner + in;
            float mx = xd[base];
            for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, xd[base + j * inner]);
            double denom = 0.0;
            for (std::int64_t j = 0; j < d; ++j) {
                denom += std::exp(double(xd[base + j * inner]) - mx);
            }
            for (std::int64_t j = 0; j < d; ++j) {
                out->data[base + j * inner] = static_cast<float>(
                    std::exp(double(xd[base + j * inner]) - mx) / denom);
            }
        }
    }
    auto xn = x.node();
    attach(out, {xn}, [xn, outer, inner, d](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
            for (std::int64_t in = 0; in < inner; ++in) {
                const std::int64_t base = o * d * inner + in;
                double dot = 0.0;
                for (std::int64_t j = 0; j < d; ++j) {
                    dot += double(self.grad[base + j * inner]) * self.data[base + j * inner];
                }
                for (std::int64_t j = 0; j < d; ++j) {
                    const std::int64_t p = base + j * inner;
                    xn->grad[p] += self.data[p] * (self.grad[p] - static_cast<float>(dot));
                }
            }
        }
    });
    return Tensor(out);
}

Tensor max_lastdim(const Tensor& x) {
    const std::int64_t l = x.dim(x.ndim() - 1);
    Shape out_shape = x.shape();
    out_shape.pop_back();
    if (out_shape.empty()) out_shape.push_back(1);
    auto out = new_node(out_shape);
    const std::int64_t outer = x.size() / l;
    const auto& xd = x.data();
    auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(outer));
    for (std::int64_t o = 0; o < outer; ++o) {
        const float* xrow = xd.data() + o * l;
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < l; ++j) {
            if (xrow[j] > xrow[best]) best = j;
        }
        (*argmax)[o] = best;
        out->data[o] = xrow[best];
    }
    auto xn = x.node();
    attach(out, {xn}, [xn, argmax, l, outer](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
            xn->grad[o * l + (*argmax)[o]] += self.grad[o];
        }
    });
    return Tensor(out);
}

// ---- reductions ----

Tensor sum_all(const Tensor& x) {
    auto out = new_node({1});
    const auto& xd = x.data();
    double acc = 0.0;
    for (float v : xd) acc += v;
    out->data[0] = static_cast<float>(acc);
    auto xn = x.node();
    attach(out, {xn}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const float g = self.grad[0];
        for (auto& v : xn->grad) v += g;
    });
    return Tensor(out);
}

Tensor mean_all(const Tensor& x) {
    if (x.size() == 0) throw ContractError("mean_all: empty tensor");
    auto out = new_node({1});
    const auto& xd = x.data();
    double acc = 0.0;
    for (float v : xd) acc += v;
    out->data[0] = static_cast<float>(acc / double(xd.size()));
    auto xn = x.node();
    attach(out, {xn}, [xn](TensorNode& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const float g = self.grad[0] / float(xn->data.size());
        for (auto& v : xn->grad) v += g;
    });
    return Tensor(out);
}

// ---- random leaves ----

Tensor random_normal(const Shape& shape, Rng& rng, bool requires_grad) {
    return Tensor::from(shape, normal_vector(rng, static_cast<std::size_t>(shape_size(shape))),
                        requires_grad);
}

Tensor random_uniform(const Shape& shape, float lo, float hi, Rng& rng, bool requires_grad) {
    return Tensor::from(shape,
                        uniform_vector(rng, static_cast<std::size_t>(shape_size(shape)), lo, hi),
                        requires_grad);
}

}  // namespace psagan
