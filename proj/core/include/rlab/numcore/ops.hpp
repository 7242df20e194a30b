#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rlab/numcore/tensor.hpp"

// Differentiable primitives. Matrices are rank-2 row-major; "rows" ops treat
// a tensor of any rank as [prod(leading dims) x last dim].
namespace rlab::num {

/// c = a b for a [m x k], b [k x n]. Throws DimensionError naming both shapes.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// Multiplies every element of `a` by the scalar tensor `s`; d/ds is kept.
Tensor scale_by(const Tensor& a, const Tensor& s);
/// x [.. x n] + bias [n], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor exp(const Tensor& a);
/// GELU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Row-wise softmax with per-row max subtraction.
Tensor softmax_rows(const Tensor& x);
/// Mean over rows of -log softmax(logits)[i, labels[i]].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Per-vector normalisation over the last dimension, then gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// x W + b, with x [m x in], W [in x out], b [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
/// out[i] = x[index[i]]; indices may repeat, backward scatter-adds.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);

}  // namespace rlab::num
