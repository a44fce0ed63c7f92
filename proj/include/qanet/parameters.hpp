#pragma once

// Named parameter storage and the forward-pass mode shared by all layers.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "qanet/error.hpp"
#include "qanet/random.hpp"
#include "qanet/tensor.hpp"

namespace qanet {

struct NamedParameter {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

/// Insertion-ordered parameter registry; the order fixes checkpoint layout.
class ParameterSet {
 public:
  Tensor add(std::string name, Tensor tensor, bool trainable = true) {
    for (const auto& p : items_) {
      if (p.name == name) throw Error(ErrorCode::kInvalidArgument, "duplicate parameter " + name);
    }
    tensor.set_requires_grad(trainable);
    items_.push_back({std::move(name), tensor, trainable});
    return tensor;
  }

  const std::vector<NamedParameter>& items() const { return items_; }
  std::vector<NamedParameter>& items() { return items_; }

  Tensor get(const std::string& name) const {
    for (const auto& p : items_) {
      if (p.name == name) return p.tensor;
    }
    throw Error(ErrorCode::kInvalidArgument, "no parameter " + name);
  }

  /// Resets trainable gradients to explicit zeros.
  void zero_grad() {
    for (auto& p : items_) {
      if (!p.trainable) continue;
      p.tensor.zero_grad();
      p.tensor.mutable_grad();
    }
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) {
      if (p.trainable) n += p.tensor.size();
    }
    return n;
  }

  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> values;
    values.reserve(items_.size());
    for (const auto& p : items_) values.push_back(p.tensor.values());
    return values;
  }

  void load(const std::vector<std::vector<double>>& values) {
    if (values.size() != items_.size()) throw Error(ErrorCode::kDimensionMismatch, "parameter snapshot size");
    for (std::size_t i = 0; i < items_.size(); ++i) {
      auto dst = items_[i].tensor.mutable_data();
      if (values[i].size() != dst.size()) {
        throw Error(ErrorCode::kDimensionMismatch, "snapshot for " + items_[i].name);
      }
      std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
  }

 private:
  std::vector<NamedParameter> items_;
};

/// Training mode enables dropout and stochastic depth, drawing from rng.
struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;

  static ForwardMode eval() { return {}; }
  static ForwardMode train(Rng& rng) { return {true, &rng}; }
};

inline Tensor dropout(const Tensor& x, double rate, const ForwardMode& mode) {
  if (!mode.training || rate <= 0.0) return x;
  const double keep = 1.0 - rate;
  std::vector<double> mask(x.size());
  for (double& m : mask) m = bernoulli(*mode.rng, keep) ? 1.0 / keep : 0.0;
  return dropout_apply(x, std::move(mask));
}

namespace init {

inline Tensor glorot(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = uniform(rng, -limit, limit);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor matrix(Rng& rng, std::size_t rows, std::size_t cols) { return glorot(rng, {rows, cols}, rows, cols); }

inline Tensor normal(Rng& rng, Shape shape, double stddev) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = stddev * qanet::normal(rng);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace init

/// [len x 1] column of 0/1 mask values, for zeroing padded rows by broadcast.
inline Tensor mask_column(std::span<const std::uint8_t> mask) {
  std::vector<double> v(mask.begin(), mask.end());
  return Tensor({mask.size(), 1}, std::move(v));
}

inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) { return add(matmul(x, weight), bias); }

}  // namespace qanet
