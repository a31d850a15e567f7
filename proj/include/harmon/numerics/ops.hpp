#pragma once

#include <vector>

#include "harmon/numerics/tensor.hpp"

namespace harmon::num {

// Throws NumericsError if any element is not finite. Respects finite_checks_enabled().
template <typename T>
void check_finite(const Tensor<T>& t, const char* op);

// ---- arithmetic ----

// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// x [..., in] x w [in, out] (+ bias [out]) -> [..., out]. Pass a default-constructed
// tensor to skip the bias.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Equal shapes, or b's shape a trailing suffix of a's (broadcast over leading dims).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise product, equal shapes.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c);

// ---- nonlinearities / normalization ----

// tanh-approximation GELU
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

// Softmax over the last dim.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x);

// Normalizes over the last dim; gamma/beta shaped [D].
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-5));

// ---- lookup / attention ----

// table [V, D], ids in [0, V) -> [ids.size(), D]
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids);

// q [B,H,Sq,Dh], k/v [B,H,Sk,Dh], additive mask [Sq,Sk] or [B,Sq,Sk] with entries
// 0 or -inf (broadcast over heads). Pass a default-constructed tensor for no mask.
template <typename T>
Tensor<T> sdpa(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
               const Tensor<T>& mask);

// ---- losses ----

// logits [R,V]; loss = sum_r w_r * nll_r / sum_r w_r. Empty weights = all ones.
// Throws ShapeError when every weight is zero.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        const std::vector<T>& weights);

// Mean squared error over all elements.
template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b);

// ---- shape & indexing ----

// Same element count and ordering; aliases storage (no copy).
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape);

// x's shape must be a trailing suffix of target; tiles over the leading dims.
template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& target);

// [B,S,D] pairs along the sequence dim.
template <typename T>
Tensor<T> concat_seq(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> slice_seq(const Tensor<T>& x, int start, int len);

// Concatenate along the last dim; leading dims must match.
template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b);

// x [B,S,D], idx [B][G] with entries in [0,S) -> [B,G,D]. Duplicate entries allowed;
// backward scatter-adds.
template <typename T>
Tensor<T> gather_seq(const Tensor<T>& x, const std::vector<std::vector<int>>& idx);

// Copy of base with rows[b,g] written at position idx[b][g]. Indices must be
// distinct within each sample (overwrite semantics).
template <typename T>
Tensor<T> scatter_seq(const Tensor<T>& base, const std::vector<std::vector<int>>& idx,
                      const Tensor<T>& rows);

// [B,S,D] -> [B,H,S,D/H] and back.
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int heads);

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x);

// ---- non-differentiable helpers ----

// Row-wise argmax over the last dim.
template <typename T>
std::vector<int> argmax_last(const Tensor<T>& x);

}  // namespace harmon::num
