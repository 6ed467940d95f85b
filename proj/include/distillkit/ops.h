// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations. Matrices are row-major [rows, cols]; sequence
// activations are stored flat as [batch * seq_len, width].

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "distillkit/autograd.h"

namespace distillkit {

// Elementwise and scalar arithmetic.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }

Var sum(const Var& a);
Var mean(const Var& a);
/// Sum of each row of a [R, C] view; result [R].
Var sum_rows(const Var& a);

Var matmul(const Var& a, const Var& b);     // [R,K] x [K,C]
Var matmul_nt(const Var& a, const Var& b);  // [R,K] x [C,K]^T
Var add_rowvec(const Var& x, const Var& bias);
Var linear(const Var& x, const Var& weight, const Var& bias);  // weight [in, out]

Var gelu(const Var& x);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
Var embedding(const Var& table, std::span<const int32_t> ids);
/// Inverted dropout with a mask drawn from `rng`; identity when p == 0.
Var dropout(const Var& x, double p, std::mt19937_64& rng);

/// Gathers rows of a [R, C] view (a 1-D tensor is treated as [R, 1]).
Var select_rows(const Var& x, std::span<const int64_t> rows);

/// Concatenates [x_{t-k/2}, ..., x_{t+k/2}] per position within each sequence
/// (zero padded at the edges): [B*N, C] -> [B*N, kernel*C]. Followed by a
/// linear map this is a same-padded 1-D convolution.
Var shift_concat(const Var& x, int64_t batch, int64_t seq_len, int kernel);

/// Scaled dot-product attention weights per head: [B, H, N, N]. Keys with
/// key_valid == 0 get exactly zero weight; rows of invalid queries are zero.
Var attention_probs(const Var& q, const Var& k, int64_t batch, int64_t seq_len, int64_t heads,
                    std::span<const uint8_t> key_valid);
/// Weighted sum of values: probs [B, H, N, N], v [B*N, H*dh] -> [B*N, H*dh].
Var attention_context(const Var& probs, const Var& v, int64_t batch, int64_t seq_len, int64_t heads);

Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);

/// Picks x[r, cols[i]] for the listed (row, col) pairs; result [n].
Var pick(const Var& x, std::span<const int64_t> rows, std::span<const int64_t> cols);

/// Row-wise KL(p || q) over the last axis with both sides clamped to
/// [kProbFloor, 1]; result [rows].
Var kl_rows(const Var& p, const Var& q);
/// Row-wise cosine similarity with the norm product floored at kCosineFloor.
Var cosine_rows(const Var& a, const Var& b);
Var mse(const Var& a, const Var& b);

}  // namespace distillkit
