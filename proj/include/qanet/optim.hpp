#pragma once

// Adam with a logarithmic warmup, coupled L2 decay, and an exponential moving
// average of the trainable parameters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <json.hpp>

#include "qanet/error.hpp"
#include "qanet/parameters.hpp"

namespace qanet {

struct OptimizerConfig {
  double beta1 = 0.8;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  double learning_rate = 0.001;
  std::size_t warmup_steps = 1000;
  double weight_decay = 3e-7;
  double ema_decay = 0.9999;

  bool operator==(const OptimizerConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OptimizerConfig, beta1, beta2, epsilon, learning_rate, warmup_steps,
                                                weight_decay, ema_decay)

/// lr * min(1, ln(1 + step) / ln(1 + warmup)); step counts from 1.
inline double lr_schedule(std::size_t step, const OptimizerConfig& config = {}) {
  if (config.warmup_steps == 0 || step >= config.warmup_steps) return config.learning_rate;
  const double ramp = std::log1p(static_cast<double>(step)) / std::log1p(static_cast<double>(config.warmup_steps));
  return config.learning_rate * std::min(1.0, ramp);
}

struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m;  // per parameter, empty for frozen ones
  std::vector<std::vector<double>> v;

  static AdamState for_parameters(const ParameterSet& params) {
    AdamState s;
    for (const auto& p : params.items()) {
      const std::size_t n = p.trainable ? p.tensor.size() : 0;
      s.m.emplace_back(n, 0.0);
      s.v.emplace_back(n, 0.0);
    }
    return s;
  }
};

/// One bias-corrected Adam update at lr_schedule(step + 1). Frozen parameters
/// are untouched; weight decay is added to the gradient.
inline void adam_step(ParameterSet& params, AdamState& state, const OptimizerConfig& config) {
  auto& items = params.items();
  if (state.m.size() != items.size()) throw Error(ErrorCode::kDimensionMismatch, "optimizer state size");
  for (const auto& p : items) {
    if (p.trainable && !p.tensor.has_grad()) throw Error(ErrorCode::kMissingGradient, p.name);
  }
  ++state.step;
  const double lr = lr_schedule(state.step, config);
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].trainable) continue;
    auto theta = items[i].tensor.mutable_data();
    const auto grad = items[i].tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double g = grad[j] + config.weight_decay * theta[j];
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      theta[j] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

/// Shadow copy of every parameter, decayed toward the live values.
struct EmaState {
  std::vector<std::vector<double>> shadow;

  static EmaState for_parameters(const ParameterSet& params) { return {params.snapshot()}; }
};

inline void ema_update(EmaState& state, const ParameterSet& params, double decay) {
  const auto& items = params.items();
  if (state.shadow.size() != items.size()) throw Error(ErrorCode::kDimensionMismatch, "EMA state size");
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i].trainable) continue;
    const auto live = items[i].tensor.data();
    auto& s = state.shadow[i];
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = decay * s[j] + (1.0 - decay) * live[j];
  }
}

/// Swaps shadow values into the parameters for the lifetime of the guard.
class ShadowScope {
 public:
  ShadowScope(ParameterSet& params, const EmaState& ema) : params_(params), saved_(params.snapshot()) {
    params_.load(ema.shadow);
  }
  ~ShadowScope() { params_.load(saved_); }
  ShadowScope(const ShadowScope&) = delete;
  ShadowScope& operator=(const ShadowScope&) = delete;

 private:
  ParameterSet& params_;
  std::vector<std::vector<double>> saved_;
};

}  // namespace qanet
