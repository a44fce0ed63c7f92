#pragma once

// Start/end distributions over context positions, the span loss and
// max-length-constrained span decoding.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <span>
#include <vector>

#include "qanet/tensor.hpp"

namespace qanet {

inline constexpr double kProbabilityFloor = 1e-30;

struct SpanDistributions {
  Tensor p1;  // [n]
  Tensor p2;  // [n]
};

struct SpanPrediction {
  std::size_t start = 0;
  std::size_t end = 0;
  double score = 0.0;

  bool operator==(const SpanPrediction&) const = default;
};

/// p1 = softmax([M0; M1] W1), p2 = softmax([M0; M2] W2) over unmasked positions.
/// W1 and W2 are [2d x 1].
inline SpanDistributions span_distributions(const Tensor& m0, const Tensor& m1, const Tensor& m2, const Tensor& w1,
                                            const Tensor& w2, std::span<const std::uint8_t> mask) {
  if (m0.rank() != 2 || m1.shape() != m0.shape() || m2.shape() != m0.shape()) {
    throw Error(ErrorCode::kDimensionMismatch, "model encoder outputs " + shape_string(m0.shape()) + ", " +
                                                   shape_string(m1.shape()) + ", " + shape_string(m2.shape()));
  }
  const std::size_t n = m0.dim(0), d = m0.dim(1);
  if (w1.size() != 2 * d || w2.size() != 2 * d || mask.size() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "output weights " + shape_string(w1.shape()) + "/" +
                                                   shape_string(w2.shape()) + " for width " + std::to_string(d));
  }
  const double neg_inf = -std::numeric_limits<double>::infinity();
  auto head = [&](const Tensor& upper, const Tensor& w) {
    Tensor logits = reshape(matmul(concat({m0, upper}, 1), reshape(w, {2 * d, 1})), {n});
    return softmax(masked_fill(logits, mask, neg_inf), 0);
  };
  return {head(m1, w1), head(m2, w2)};
}

/// -(log p1[y1] + log p2[y2]) with probabilities floored before the log.
inline Tensor span_loss(const SpanDistributions& dist, std::size_t gold_start, std::size_t gold_end,
                        std::span<const std::uint8_t> mask) {
  const std::size_t n = dist.p1.size();
  if (gold_start >= n || gold_end >= n || mask.size() != n || !mask[gold_start] || !mask[gold_end]) {
    throw Error(ErrorCode::kGoldIndexMasked,
                "gold span (" + std::to_string(gold_start) + "," + std::to_string(gold_end) + ") over " +
                    std::to_string(n) + " positions");
  }
  const Tensor log_start = log(pick(dist.p1, gold_start), kProbabilityFloor);
  const Tensor log_end = log(pick(dist.p2, gold_end), kProbabilityFloor);
  return scale(add(log_start, log_end), -1.0);
}

/// argmax over s <= e < s + max_len of p1[s] * p2[e], in one pass keeping the
/// best start inside the sliding window. Ties go to the smallest start, then
/// the smallest end.
inline SpanPrediction dp_span_inference(std::span<const double> p1, std::span<const double> p2, std::size_t max_len) {
  if (p1.empty() || p2.empty()) throw Error(ErrorCode::kEmptyDistribution, "span inference over no positions");
  if (p1.size() != p2.size()) throw Error(ErrorCode::kDimensionMismatch, "start/end distributions differ in length");
  if (max_len == 0) throw Error(ErrorCode::kInvalidArgument, "max_len must be positive");
  std::deque<std::size_t> window;  // starts with strictly decreasing p1, increasing index
  SpanPrediction best;
  bool found = false;
  for (std::size_t e = 0; e < p1.size(); ++e) {
    while (!window.empty() && p1[window.back()] < p1[e]) window.pop_back();
    window.push_back(e);
    if (window.front() + max_len <= e) window.pop_front();
    const std::size_t s = window.front();
    const double score = p1[s] * p2[e];
    if (!found || score > best.score) {
      best = {s, e, score};
      found = true;
    } else if (score == best.score && s < best.start) {
      best = {s, e, score};
    }
  }
  return best;
}

inline SpanPrediction dp_span_inference(const SpanDistributions& dist, std::size_t max_len) {
  return dp_span_inference(dist.p1.data(), dist.p2.data(), max_len);
}

}  // namespace qanet
