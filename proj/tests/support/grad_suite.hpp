#pragma once

// Gradient regression suite shared by the unit tests and the acceptance
// runner: every differentiable op is exercised with randomized shapes and
// checked against central finite differences.

#include <cstdint>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "psagan/tensor.hpp"

namespace gradsuite {

struct OpReport {
    std::string op;
    double max_err = 0.0;
    std::size_t checked = 0;
    bool ok = true;
    std::string detail;
};

namespace detail {

using psagan::Rng;
using psagan::Shape;
using psagan::Tensor;

// Readout weights with O(1) magnitude and random sign, so per-element finite
// differences stay well conditioned in f32.
inline Tensor rand_weights(const Shape& s, Rng& rng) {
    auto w = psagan::random_uniform(s, 0.5f, 1.5f, rng);
    for (auto& v : w.data()) {
        if (rng.next_double() < 0.5) v = -v;
    }
    return w;
}

// Values bounded away from zero, for ops with a kink at the origin.
inline Tensor rand_away_from_zero(const Shape& s, Rng& rng, float min_mag = 0.08f) {
    auto t = psagan::random_uniform(s, min_mag, 1.2f, rng, true);
    for (auto& v : t.data()) {
        if (rng.next_double() < 0.5) v = -v;
    }
    return t;
}

inline void merge(OpReport& r, const oracles::GradCheck& c) {
    r.max_err = std::max(r.max_err, c.max_err);
    r.checked += c.checked;
    if (!c.ok && r.ok) {
        r.ok = false;
        r.detail = c.detail;
    }
}

inline void run_case(OpReport& r, Tensor input, const std::function<Tensor()>& make_out,
                     const Tensor& w) {
    merge(r, oracles::check_grad(make_out, w, input));
}

}  // namespace detail

inline std::vector<OpReport> run_op_gradient_suite(int trials, std::uint64_t seed) {
    using namespace detail;
    using namespace psagan;
    std::vector<OpReport> reports;
    Rng root(seed);

    auto run_op = [&](const std::string& name, auto&& one_trial) {
        OpReport r;
        r.op = name;
        for (int t = 0; t < trials; ++t) {
            Rng rng = root.split(name, static_cast<std::uint64_t>(t));
            one_trial(r, rng);
        }
        reports.push_back(std::move(r));
    };

    auto rand_shape3 = [](Rng& rng) {
        return Shape{rng.uniform_int(1, 3), rng.uniform_int(1, 4), rng.uniform_int(3, 9)};
    };

    run_op("add", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        auto b = random_normal(s, rng, true);
        auto w = rand_weights(s, rng);
        run_case(r, a, [&] { return add(a, b); }, w);
        run_case(r, b, [&] { return add(a, b); }, w);
    });

    run_op("sub", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        auto b = random_normal(s, rng, true);
        auto w = rand_weights(s, rng);
        run_case(r, a, [&] { return sub(a, b); }, w);
        run_case(r, b, [&] { return sub(a, b); }, w);
    });

    run_op("mul", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        auto b = random_normal(s, rng, true);
        auto w = rand_weights(s, rng);
        run_case(r, a, [&] { return mul(a, b); }, w);
        run_case(r, b, [&] { return mul(a, b); }, w);
    });

    run_op("mul_scalar_broadcast", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        auto g = Tensor::scalar(rng.uniform(-1.0f, 1.0f), true);
        auto w = rand_weights(s, rng);
        run_case(r, a, [&] { return mul(a, g); }, w);
        run_case(r, g, [&] { return mul(a, g); }, w);
    });

    run_op("add_scalar_broadcast", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        auto g = Tensor::scalar(rng.uniform(-1.0f, 1.0f), true);
        auto w = rand_weights(s, rng);
        run_case(r, g, [&] { return add(a, g); }, w);
        run_case(r, g, [&] { return sub(a, g); }, w);
    });

    run_op("scale", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        float c = rng.uniform(-2.0f, 2.0f);
        auto w = rand_weights(s, rng);
        run_case(r, a, [&] { return scale(a, c); }, w);
    });

    run_op("add_const", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        float c = rng.uniform(-2.0f, 2.0f);
        auto w = rand_weights(s, rng);
        run_case(r, a, [&] { return add_const(a, c); }, w);
    });

    run_op("elem_abs", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = rand_away_from_zero(s, rng);
        auto w = rand_weights(s, rng);
        run_case(r, a, [&] { return elem_abs(a); }, w);
    });

    run_op("elem_sqrt", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_uniform(s, 0.1f, 2.0f, rng, true);
        auto w = rand_weights(s, rng);
        run_case(r, a, [&] { return elem_sqrt(a); }, w);
    });

    run_op("leaky_relu", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = rand_away_from_zero(s, rng);
        auto w = rand_weights(s, rng);
        run_case(r, a, [&] { return leaky_relu(a, 0.2f); }, w);
    });

    run_op("log_sigmoid", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        auto w = rand_weights(s, rng);
        run_case(r, a, [&] { return log_sigmoid(a); }, w);
    });

    run_op("safe_reciprocal", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_uniform(s, 0.25f, 2.0f, rng, true);
        auto w = rand_weights(s, rng);
        run_case(r, a, [&] { return safe_reciprocal(a, 1e-12f); }, w);
    });

    run_op("matmul", [&](OpReport& r, Rng& rng) {
        std::int64_t m = rng.uniform_int(1, 4), k = rng.uniform_int(1, 4), n = rng.uniform_int(1, 4);
        auto a = random_normal({m, k}, rng, true);
        auto b = random_normal({k, n}, rng, true);
        auto w = rand_weights({m, n}, rng);
        run_case(r, a, [&] { return matmul(a, b); }, w);
        run_case(r, b, [&] { return matmul(a, b); }, w);
    });

    run_op("bmm", [&](OpReport& r, Rng& rng) {
        std::int64_t bs = rng.uniform_int(1, 3), m = rng.uniform_int(1, 3),
                     k = rng.uniform_int(1, 3), n = rng.uniform_int(1, 3);
        auto a = random_normal({bs, m, k}, rng, true);
        auto b = random_normal({bs, k, n}, rng, true);
        auto w = rand_weights({bs, m, n}, rng);
        run_case(r, a, [&] { return bmm(a, b); }, w);
        run_case(r, b, [&] { return bmm(a, b); }, w);
    });

    run_op("transpose_last2", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        auto w = rand_weights({s[0], s[2], s[1]}, rng);
        run_case(r, a, [&] { return transpose_last2(a); }, w);
    });

    run_op("reshape", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        Shape flat{s[0] * s[1] * s[2]};
        auto w = rand_weights(flat, rng);
        run_case(r, a, [&] { return reshape(a, flat); }, w);
    });

    run_op("concat_channels", [&](OpReport& r, Rng& rng) {
        std::int64_t b = rng.uniform_int(1, 2), l = rng.uniform_int(3, 6);
        auto a = random_normal({b, rng.uniform_int(1, 3), l}, rng, true);
        auto c = random_normal({b, rng.uniform_int(1, 3), l}, rng, true);
        auto w = rand_weights({b, a.dim(1) + c.dim(1), l}, rng);
        run_case(r, a, [&] { return concat_channels({a, c}); }, w);
        run_case(r, c, [&] { return concat_channels({a, c}); }, w);
    });

    run_op("slice_lastdim", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        std::int64_t start = rng.uniform_int(0, s[2] - 1);
        std::int64_t len = rng.uniform_int(1, s[2] - start);
        auto w = rand_weights({s[0], s[1], len}, rng);
        run_case(r, a, [&] { return slice_lastdim(a, start, len); }, w);
    });

    run_op("pad_lastdim", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        std::int64_t left = rng.uniform_int(0, 3), right = rng.uniform_int(0, 3);
        auto w = rand_weights({s[0], s[1], s[2] + left + right}, rng);
        run_case(r, a, [&] { return pad_lastdim(a, left, right); }, w);
    });

    run_op("broadcast_time", [&](OpReport& r, Rng& rng) {
        std::int64_t b = rng.uniform_int(1, 3), c = rng.uniform_int(1, 4),
                     l = rng.uniform_int(2, 6);
        auto a = random_normal({b, c}, rng, true);
        auto w = rand_weights({b, c, l}, rng);
        run_case(r, a, [&] { return broadcast_time(a, l); }, w);
    });

    run_op("take_rows", [&](OpReport& r, Rng& rng) {
        std::int64_t n = rng.uniform_int(3, 6), d = rng.uniform_int(1, 4);
        auto table = random_normal({n, d}, rng, true);
        std::vector<std::int64_t> idx;
        std::int64_t count = rng.uniform_int(2, 5);
        for (std::int64_t i = 0; i < count; ++i) idx.push_back(rng.uniform_int(0, n - 1));
        auto w = rand_weights({count, d}, rng);
        run_case(r, table, [&] { return take_rows(table, idx); }, w);
    });

    run_op("conv1d", [&](OpReport& r, Rng& rng) {
        std::int64_t b = rng.uniform_int(1, 2), ci = rng.uniform_int(1, 3),
                     co = rng.uniform_int(1, 3), l = rng.uniform_int(5, 9);
        std::int64_t k = rng.uniform_int(1, 3);
        std::int64_t dilation = rng.uniform_int(1, 2);
        std::int64_t padding = rng.uniform_int(0, 2);
        std::int64_t l_out = l + 2 * padding - dilation * (k - 1);
        if (l_out <= 0) {
            k = 1;
            dilation = 1;
            l_out = l + 2 * padding;
        }
        auto x = random_normal({b, ci, l}, rng, true);
        auto wgt = random_normal({co, ci, k}, rng, true);
        auto bias = random_normal({co}, rng, true);
        auto w = rand_weights({b, co, l_out}, rng);
        run_case(r, x, [&] { return conv1d(x, wgt, bias, padding, dilation); }, w);
        run_case(r, wgt, [&] { return conv1d(x, wgt, bias, padding, dilation); }, w);
        run_case(r, bias, [&] { return conv1d(x, wgt, bias, padding, dilation); }, w);
    });

    run_op("avg_pool1d", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        std::int64_t kernel = rng.uniform_int(1, std::min<std::int64_t>(3, s[2]));
        std::int64_t stride = rng.uniform_int(1, 2);
        std::int64_t n = (s[2] - kernel) / stride + 1;
        auto w = rand_weights({s[0], s[1], n}, rng);
        run_case(r, a, [&] { return avg_pool1d(a, kernel, stride); }, w);
    });

    run_op("upsample_linear2x", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        auto w = rand_weights({s[0], s[1], 2 * s[2]}, rng);
        run_case(r, a, [&] { return upsample_linear2x(a); }, w);
    });

    run_op("softmax", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        std::int64_t axis = rng.uniform_int(0, 2);
        auto w = rand_weights(s, rng);
        run_case(r, a, [&] { return softmax(a, axis); }, w);
    });

    run_op("max_lastdim", [&](OpReport& r, Rng& rng) {
        std::int64_t b = rng.uniform_int(1, 3), c = rng.uniform_int(1, 3),
                     l = rng.uniform_int(2, 6);
        // Values on a coarse grid keep the argmax stable under FD perturbation.
        auto a = Tensor::zeros({b, c, l}, true);
        for (std::int64_t o = 0; o < b * c; ++o) {
            std::vector<std::int64_t> perm(static_cast<std::size_t>(l));
            for (std::int64_t j = 0; j < l; ++j) perm[j] = j;
            for (std::int64_t j = l - 1; j > 0; --j) {
                std::swap(perm[j], perm[rng.uniform_int(0, j)]);
            }
            for (std::int64_t j = 0; j < l; ++j) {
                a.data()[o * l + j] =
                    static_cast<float>(perm[j]) * 0.05f + rng.uniform(-0.01f, 0.01f);
            }
        }
        auto w = rand_weights({b, c}, rng);
        run_case(r, a, [&] { return max_lastdim(a); }, w);
    });

    run_op("sum_all", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        auto w = rand_weights({1}, rng);
        run_case(r, a, [&] { return sum_all(a); }, w);
    });

    run_op("mean_all", [&](OpReport& r, Rng& rng) {
        Shape s = rand_shape3(rng);
        auto a = random_normal(s, rng, true);
        auto w = rand_weights({1}, rng);
        run_case(r, a, [&] { return mean_all(a); }, w);
    });

    return reports;
}

}  // namespace gradsuite
