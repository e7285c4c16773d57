#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "marginmt/tensor.hpp"

// Differentiable primitives. Broadcasting is limited to leading-batch
// expansion: a right operand may match the trailing dimensions of the left
// operand, and is then applied to every leading slice.

namespace marginmt::ops {

/// a[..., m, k] @ b[k, n], or batched a[..., m, k] @ b[..., k, n] with equal
/// leading extents.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double s);
/// x * s + c elementwise.
Tensor affine(const Tensor& x, double s, double c);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);

/// Elementwise map with a caller-supplied derivative.
Tensor map(const Tensor& x, const std::function<double(double)>& f,
           const std::function<double(double)>& df, const char* name = "map");

/// Softmax over the last axis, max-subtracted.
Tensor softmax(const Tensor& x);

/// Normalizes the last axis and applies gain/bias of extent `x.dim(-1)`.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Rows of `table` [V, D] selected by `ids`; output shape is `lead` + [D].
Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& lead);

/// Positions where mask != 0 are replaced by `value`; no gradient flows there.
Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> mask, double value);

Tensor reshape(const Tensor& x, Shape shape);
/// Swaps two axes.
Tensor transpose(const Tensor& x, int axis_a, int axis_b);

/// Sum of all elements, shape [1].
Tensor reduce_sum(const Tensor& x);
/// Sum over the last axis.
Tensor reduce_sum_last(const Tensor& x);
Tensor reduce_mean(const Tensor& x);

/// out[...] = x[..., index[...]]; `index` has numel(x) / x.dim(-1) entries.
Tensor gather(const Tensor& x, std::span<const int> index);

/// Inverted dropout; identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

}  // namespace marginmt::ops
