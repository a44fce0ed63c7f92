#pragma once

// Context-query attention. Representations are stored positions x features,
// so with C [n x d] and Q [m x d]:
//   S[i,j] = <w_c, C_i> + <w_q, Q_j> + <w_qc, C_i * Q_j>
//   A = row_softmax(S) Q,   B = row_softmax(S) col_softmax(S)^T C

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "qanet/tensor.hpp"

namespace qanet {

/// The trilinear weight split into its three d-length blocks, each stored [d x 1].
struct TrilinearWeights {
  Tensor w_q, w_c, w_qc;
};

/// Unmasked similarity matrix [n x m], computed without materializing [n x m x 3d].
inline Tensor trilinear_similarity(const Tensor& c, const Tensor& q, const TrilinearWeights& w) {
  if (c.rank() != 2 || q.rank() != 2 || c.dim(1) != q.dim(1)) {
    throw Error(ErrorCode::kDimensionMismatch,
                "trilinear inputs " + shape_string(c.shape()) + " and " + shape_string(q.shape()));
  }
  const std::size_t d = c.dim(1);
  for (const Tensor* t : {&w.w_q, &w.w_c, &w.w_qc}) {
    if (t->size() != d) throw Error(ErrorCode::kDimensionMismatch, "trilinear weight block " + shape_string(t->shape()));
  }
  const Tensor wc = reshape(w.w_c, {d, 1}), wq = reshape(w.w_q, {d, 1}), wqc = reshape(w.w_qc, {1, d});
  const Tensor context_term = matmul(c, wc);               // [n x 1]
  const Tensor query_term = transpose(matmul(q, wq));      // [1 x m]
  const Tensor cross = matmul(mul(c, wqc), transpose(q));  // [n x m]
  return add(add(cross, context_term), query_term);
}

struct AttentionMatrices {
  Tensor s;      // masked similarity, -inf outside real (context, query) pairs
  Tensor s_row;  // softmax over queries
  Tensor s_col;  // softmax over contexts
  Tensor a;      // context-to-query, [n x d]
  Tensor b;      // query-to-context, [n x d]
};

inline Tensor c2q_attention(const Tensor& s_row, const Tensor& q) {
  if (s_row.rank() != 2 || q.rank() != 2 || s_row.dim(1) != q.dim(0)) {
    throw Error(ErrorCode::kDimensionMismatch,
                "c2q shapes " + shape_string(s_row.shape()) + ", " + shape_string(q.shape()));
  }
  return matmul(s_row, q);
}

inline Tensor q2c_attention(const Tensor& s_row, const Tensor& s_col, const Tensor& c) {
  if (s_row.rank() != 2 || s_col.shape() != s_row.shape() || c.rank() != 2 || c.dim(0) != s_row.dim(0)) {
    throw Error(ErrorCode::kDimensionMismatch, "q2c shapes " + shape_string(s_row.shape()) + ", " +
                                                   shape_string(s_col.shape()) + ", " + shape_string(c.shape()));
  }
  return matmul(matmul(s_row, transpose(s_col)), c);
}

inline AttentionMatrices context_query_attention(const Tensor& c, const Tensor& q, const TrilinearWeights& w,
                                                 std::span<const std::uint8_t> context_mask,
                                                 std::span<const std::uint8_t> query_mask) {
  const std::size_t n = c.dim(0), m = q.dim(0);
  if (context_mask.size() != n || query_mask.size() != m) {
    throw Error(ErrorCode::kDimensionMismatch, "attention masks do not match inputs");
  }
  std::vector<std::uint8_t> keep(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) keep[i * m + j] = context_mask[i] && query_mask[j];
  }
  AttentionMatrices out;
  out.s = masked_fill(trilinear_similarity(c, q, w), keep, -std::numeric_limits<double>::infinity());
  out.s_row = softmax(out.s, 1);
  out.s_col = softmax(out.s, 0);
  out.a = c2q_attention(out.s_row, q);
  out.b = q2c_attention(out.s_row, out.s_col, c);
  return out;
}

/// Per-position [c; a; c*a; c*b], giving [n x 4d].
inline Tensor fuse(const Tensor& c, const Tensor& a, const Tensor& b) {
  if (c.rank() != 2 || a.shape() != c.shape() || b.shape() != c.shape()) {
    throw Error(ErrorCode::kDimensionMismatch, "fuse shapes " + shape_string(c.shape()) + ", " +
                                                   shape_string(a.shape()) + ", " + shape_string(b.shape()));
  }
  return concat({c, a, mul(c, a), mul(c, b)}, 1);
}

}  // namespace qanet
