#pragma once

// Differentiable operations over Tensor.
//
// Broadcasting: for the binary elementwise ops the second operand is aligned
// to the trailing dimensions of the first; each aligned dim must be equal or
// 1. The result always has the first operand's shape.

#include <cstdint>
#include <span>
#include <vector>

#include "acn/tensor.hpp"

namespace acn {

using TokenId = std::int32_t;

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m,k] x [n,k]^T -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// tanh approximation
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);

// Numerically stabilised by subtracting the slice maximum.
Tensor softmax(const Tensor& x, std::size_t axis);
// Row-wise softmax of a square [T,T] score matrix where row i only sees
// columns 0..i; masked entries are exactly zero.
Tensor causal_softmax(const Tensor& scores);

// Normalises over the last axis, then applies gamma * x + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// Rows of `table` selected by ids: [V,H] -> [len(ids),H]
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);

// out[t, ids[k]] += weights[t, k]; weights is [T,K], ids has length K.
Tensor scatter_to_vocab(const Tensor& weights, std::span<const TokenId> ids, std::size_t vocab_size);

// Mean over positions with mask != 0 of -log softmax(logits)[t, targets[t]].
Tensor masked_cross_entropy(const Tensor& logits, std::span<const TokenId> targets,
                            std::span<const std::uint8_t> mask);
// Same reduction for rows that are already probabilities.
Tensor masked_nll(const Tensor& probs, std::span<const TokenId> targets, std::span<const std::uint8_t> mask);

}  // namespace acn
