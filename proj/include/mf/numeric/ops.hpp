#pragma once

#include <span>
#include <vector>

#include "mf/numeric/tensor.hpp"

MF_NUMERIC_BEGIN
namespace ops {

// Elementwise; operands must have identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Scalar s);

// Multiplies every element of batch row b (leading axis) by factors[b].
// The factors are constants.
Tensor scale_per_batch(const Tensor& x, std::span<const Scalar> factors);

// x: [..., d], v: [d]. The vector is broadcast over all leading axes.
Tensor add_rows(const Tensor& x, const Tensor& v);
Tensor mul_rows(const Tensor& x, const Tensor& v);

// x: [B, T, d], v: [B, d]. The vector for batch b is broadcast over T.
Tensor add_per_batch(const Tensor& x, const Tensor& v);
Tensor mul_per_batch(const Tensor& x, const Tensor& v);

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [g,m,k] x [g,k,n] -> [g,m,n]
Tensor bmm(const Tensor& a, const Tensor& b);
// [g,m,k] x [g,n,k]^T -> [g,m,n]
Tensor bmm_nt(const Tensor& a, const Tensor& b);

// x: [..., in], w: [in, out], b: [out] (may be undefined) -> [..., out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& x, std::size_t i, std::size_t j);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Contiguous range [start, start+len) of the last axis.
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t len);

// Softmax over the last axis.
Tensor softmax(const Tensor& x);
// x: [g, q, k]. Only the first key_counts[g] keys of group g participate;
// a group with zero keys yields all-zero rows.
Tensor masked_softmax(const Tensor& x, std::span<const std::size_t> key_counts);

inline constexpr Scalar kLayerNormEps = Scalar(1e-5);
// Normalizes the last axis to zero mean and unit variance (no affine).
Tensor layer_norm(const Tensor& x, Scalar eps = kLayerNormEps);

Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);

// table: [V, d] -> [indices.size(), d]
Tensor embedding(const Tensor& table, std::span<const int> indices);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// mean((a-b)^2)
Tensor mse(const Tensor& a, const Tensor& b);
// logits: [n, C]; mean negative log-likelihood of targets.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

}  // namespace ops
MF_NUMERIC_END
