#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "cts/autodiff/tensor.hpp"

namespace cts::ad {

// Elementwise arithmetic. Binary ops broadcast by trailing-dimension alignment.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
// Throws DomainError on any non-positive input.
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);
// max(x, floor); gradient passes only where x > floor.
Tensor clamp_min(const Tensor& x, double floor);

enum class ElementwiseOp { Add, Sub, Mul, Div, Exp, Log, Tanh, Relu, Gelu };
Tensor elementwise(ElementwiseOp op, const Tensor& a, const std::optional<Tensor>& b = std::nullopt);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, std::ptrdiff_t axis, bool keepdim = false);

/// Matrix product over the last two axes.
///  - b 2-D: a is [..., k] and every leading row is multiplied by b ([k, n], or [n, k] when transpose_b).
///  - b with a.dim() >= 3 axes: batched product; leading batch axes must agree.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Max-subtracted softmax / log-softmax along one axis.
Tensor softmax(const Tensor& x, std::ptrdiff_t axis = -1);
Tensor log_softmax(const Tensor& x, std::ptrdiff_t axis = -1);

// allowed[b, r, c] != 0 marks an attendable key. Broadcast over the head axis of
// [batch, heads, rows, cols] scores.
struct AttentionMask {
    std::size_t batch = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> allowed;

    bool at(std::size_t b, std::size_t r, std::size_t c) const { return allowed[(b * rows + r) * cols + c] != 0; }
};

// Softmax over the last axis with disallowed positions forced to probability 0.
// A row with no allowed position is an error.
Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask);

// Shape manipulation.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis);
Tensor narrow(const Tensor& x, std::ptrdiff_t axis, std::size_t start, std::size_t length);

/// Gathers slices along axis 0: result[i] = x[rows[i]]. Gradients scatter-add,
/// so a row selected twice accumulates both contributions.
Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Inverted dropout: kept values scale by 1/(1-p). Identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool training);

/// Sum over rows of -log softmax(logits[row])[target[row]], skipping rows whose
/// target equals ignore_index. logits is [rows, vocab].
Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets, int ignore_index);

}  // namespace cts::ad
