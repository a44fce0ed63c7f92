#pragma once

// Ratio-controlled sampling across the original and two back-translated pools.

#include <array>
#include <cstddef>
#include <cstdint>

#include <json.hpp>

#include "qanet/error.hpp"
#include "qanet/random.hpp"

namespace qanet {

/// Sampling weights over (original, first pivot, second pivot).
struct MixRatio {
  double original = 3.0;
  double pivot1 = 1.0;
  double pivot2 = 1.0;

  std::array<double, 3> weights() const { return {original, pivot1, pivot2}; }
  bool operator==(const MixRatio&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MixRatio, original, pivot1, pivot2)

struct PoolDraw {
  std::size_t pool = 0;
  std::size_t index = 0;

  bool operator==(const PoolDraw&) const = default;
};

/// Endless stream of (pool, example index) draws: pool p with probability
/// w_p / sum(w), then a uniform example from it.
class MixedSampler {
 public:
  MixedSampler(std::array<std::size_t, 3> pool_sizes, const MixRatio& ratio, std::uint64_t seed)
      : sizes_(pool_sizes), weights_(ratio.weights()), rng_(make_rng({seed, 0x6d6978ULL})) {
    for (std::size_t p = 0; p < 3; ++p) {
      if (!(weights_[p] >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "mix weights must be non-negative");
      if (weights_[p] > 0.0 && sizes_[p] == 0) {
        throw Error(ErrorCode::kEmptyWeightedPool, "pool " + std::to_string(p) + " has weight but no examples");
      }
      total_ += weights_[p];
    }
    if (total_ <= 0.0) throw Error(ErrorCode::kInvalidArgument, "mix weights are all zero");
  }

  PoolDraw next() {
    const double u = uniform01(rng_) * total_;
    std::size_t pool = 0;
    double acc = 0.0;
    for (std::size_t p = 0; p < 3; ++p) {
      if (weights_[p] <= 0.0) continue;
      pool = p;
      acc += weights_[p];
      if (u < acc) break;
    }
    return {pool, static_cast<std::size_t>(uniform_index(rng_, sizes_[pool]))};
  }

 private:
  std::array<std::size_t, 3> sizes_;
  std::array<double, 3> weights_;
  double total_ = 0.0;
  Rng rng_;
};

}  // namespace qanet
