#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record their inputs and a backward rule; backward() walks
// the recorded ancestors in reverse creation order, which is a valid reverse
// topological order because a node can only be built from existing nodes.
// Graphs are confined to the thread that created them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "qanet/error.hpp"

namespace qanet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    out << (i ? "x" : "") << shape[i];
  }
  out << ']';
  return out.str();
}

namespace detail {

inline std::uint64_t next_node_id() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t id = next_node_id();
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, allocated (zeroed) on first use.
  std::span<double> grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false) {
    for (std::size_t d : shape) {
      if (d == 0) throw Error(ErrorCode::kDimensionMismatch, "zero-sized dimension in " + shape_string(shape));
    }
    if (shape_size(shape) != data.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "shape " + shape_string(shape) + " does not hold " +
                                                     std::to_string(data.size()) + " values");
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) { return Tensor({}, {value}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  /// Direct write access, intended for leaf parameters (optimizer updates).
  std::span<double> mutable_data() { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  std::uint64_t node_id() const { return node_->id; }
  std::string_view op() const { return node_->op; }
  bool is_leaf() const { return !node_->backward; }

  double item() const {
    if (size() != 1) throw Error(ErrorCode::kNotScalar, "item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t row, std::size_t col) const { return node_->data[row * node_->shape.back() + col]; }

  /// Copy of the values with no graph attached.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_result(Shape shape, std::vector<double> data, std::string_view op,
                          std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(data));
  auto& node = *out.node();
  node.op = op;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    node.requires_grad = true;
    node.parents.reserve(inputs.size());
    for (auto& t : inputs) node.parents.push_back(t.node());
    node.backward = std::move(backward);
  }
  return out;
}

/// Gradient sink for a parent, or an empty span if it does not need one.
inline std::span<double> sink(Node& parent) {
  if (!parent.requires_grad) return {};
  return parent.grad_buffer();
}

inline void require_rank(const Tensor& t, std::size_t rank, std::string_view what) {
  if (t.rank() != rank) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_string(t.shape()));
  }
}

// Flat index maps from each output element to the contributing input elements.
struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
};

inline Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  plan.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw Error(ErrorCode::kDimensionMismatch, "cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    plan.out[i] = std::max(pa[i], pb[i]);
  }
  auto strides = [&](const Shape& padded) {
    std::vector<std::size_t> s(rank, 0);
    std::size_t acc = 1;
    for (std::size_t i = rank; i-- > 0;) {
      s[i] = padded[i] == 1 ? 0 : acc;
      acc *= padded[i];
    }
    return s;
  };
  const auto sa = strides(pa), sb = strides(pb);
  const std::size_t n = shape_size(plan.out);
  plan.a_index.resize(n);
  plan.b_index.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      ia += idx[d] * sa[d];
      ib += idx[d] * sb[d];
    }
    plan.a_index[flat] = ia;
    plan.b_index[flat] = ib;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < plan.out[d]) break;
      idx[d] = 0;
    }
  }
  return plan;
}

inline std::size_t check_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw Error(ErrorCode::kAxisOutOfRange,
                "axis " + std::to_string(axis) + " for tensor of shape " + shape_string(x.shape()));
  }
  return axis;
}

// Splits a shape around an axis into (outer, axis length, inner).
struct AxisView {
  std::size_t outer = 1, length = 1, inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  auto plan = std::make_shared<detail::Broadcast>(detail::plan_broadcast(a.shape(), b.shape()));
  const std::size_t n = shape_size(plan->out);
  std::vector<double> out(n);
  const auto x = a.data(), y = b.data();
  if (plan->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = x[plan->a_index[i]] + y[plan->b_index[i]];
  }
  return detail::make_result(plan->out, std::move(out), "add", {a, b}, [plan](detail::Node& self) {
    auto ga = detail::sink(*self.parents[0]);
    auto gb = detail::sink(*self.parents[1]);
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!ga.empty()) ga[plan->same ? i : plan->a_index[i]] += g[i];
      if (!gb.empty()) gb[plan->same ? i : plan->b_index[i]] += g[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  auto plan = std::make_shared<detail::Broadcast>(detail::plan_broadcast(a.shape(), b.shape()));
  const std::size_t n = shape_size(plan->out);
  std::vector<double> out(n);
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = plan->same ? x[i] - y[i] : x[plan->a_index[i]] - y[plan->b_index[i]];
  }
  return detail::make_result(plan->out, std::move(out), "sub", {a, b}, [plan](detail::Node& self) {
    auto ga = detail::sink(*self.parents[0]);
    auto gb = detail::sink(*self.parents[1]);
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!ga.empty()) ga[plan->same ? i : plan->a_index[i]] += g[i];
      if (!gb.empty()) gb[plan->same ? i : plan->b_index[i]] -= g[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  auto plan = std::make_shared<detail::Broadcast>(detail::plan_broadcast(a.shape(), b.shape()));
  const std::size_t n = shape_size(plan->out);
  std::vector<double> out(n);
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = plan->same ? x[i] * y[i] : x[plan->a_index[i]] * y[plan->b_index[i]];
  }
  return detail::make_result(plan->out, std::move(out), "mul", {a, b}, [plan](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    auto ga = detail::sink(pa);
    auto gb = detail::sink(pb);
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t ia = plan->same ? i : plan->a_index[i];
      const std::size_t ib = plan->same ? i : plan->b_index[i];
      if (!ga.empty()) ga[ia] += g[i] * pb.data[ib];
      if (!gb.empty()) gb[ib] += g[i] * pa.data[ia];
    }
  });
}

inline Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v *= factor;
  return detail::make_result(x.shape(), std::move(out), "scale", {x}, [factor](detail::Node& self) {
    auto gx = detail::sink(*self.parents[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * self.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& x, double value) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v += value;
  return detail::make_result(x.shape(), std::move(out), "add_scalar", {x}, [](detail::Node& self) {
    auto gx = detail::sink(*self.parents[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

inline Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return detail::make_result(x.shape(), std::move(out), "relu", {x}, [](detail::Node& self) {
    auto& px = *self.parents[0];
    auto gx = detail::sink(px);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (px.data[i] > 0.0) gx[i] += self.grad[i];
    }
  });
}

inline Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-in[i]));
  return detail::make_result(x.shape(), std::move(out), "sigmoid", {x}, [](detail::Node& self) {
    auto gx = detail::sink(*self.parents[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double s = self.data[i];
      gx[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

/// Natural log of max(x, floor). Inputs clamped by the floor get zero gradient.
inline Tensor log(const Tensor& x, double floor = 0.0) {
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(in[i], floor));
  return detail::make_result(x.shape(), std::move(out), "log", {x}, [floor](detail::Node& self) {
    auto& px = *self.parents[0];
    auto gx = detail::sink(px);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (px.data[i] > floor) gx[i] += self.grad[i] / px.data[i];
    }
  });
}

/// Multiplies by a caller-drawn dropout mask (entries 0 or 1/keep_prob).
inline Tensor dropout_apply(const Tensor& x, std::vector<double> mask) {
  if (mask.size() != x.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "dropout mask length " + std::to_string(mask.size()) +
                                                   " for tensor " + shape_string(x.shape()));
  }
  auto keep = std::make_shared<std::vector<double>>(std::move(mask));
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * (*keep)[i];
  return detail::make_result(x.shape(), std::move(out), "dropout", {x}, [keep](detail::Node& self) {
    auto gx = detail::sink(*self.parents[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * (*keep)[i];
  });
}

/// Replaces entries whose keep flag is 0 with `value`; those entries pass no gradient.
inline Tensor masked_fill(const Tensor& x, std::span<const std::uint8_t> keep, double value) {
  if (keep.size() != x.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "mask length " + std::to_string(keep.size()) + " for tensor " +
                                                   shape_string(x.shape()));
  }
  auto flags = std::make_shared<std::vector<std::uint8_t>>(keep.begin(), keep.end());
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*flags)[i] ? in[i] : value;
  return detail::make_result(x.shape(), std::move(out), "masked_fill", {x}, [flags](detail::Node& self) {
    auto gx = detail::sink(*self.parents[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if ((*flags)[i]) gx[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and indexing

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return detail::make_result({}, {total}, "sum", {x}, [](detail::Node& self) {
    auto gx = detail::sink(*self.parents[0]);
    for (double& g : gx) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

/// Scalar view of one element (flat index).
inline Tensor pick(const Tensor& x, std::size_t index) {
  if (index >= x.size()) {
    throw Error(ErrorCode::kIdOutOfRange, "index " + std::to_string(index) + " into " + shape_string(x.shape()));
  }
  return detail::make_result({}, {x[index]}, "pick", {x}, [index](detail::Node& self) {
    auto gx = detail::sink(*self.parents[0]);
    if (!gx.empty()) gx[index] += self.grad[0];
  });
}

/// Maximum along an axis; the subgradient goes to the first maximal index.
inline Tensor max_over_axis(const Tensor& x, std::size_t axis) {
  detail::check_axis(x, axis);
  const auto v = detail::axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto argmax = std::make_shared<std::vector<std::size_t>>(v.outer * v.inner);
  std::vector<double> out(v.outer * v.inner);
  const auto in = x.data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      std::size_t best = o * v.length * v.inner + i;
      for (std::size_t k = 1; k < v.length; ++k) {
        const std::size_t at = (o * v.length + k) * v.inner + i;
        if (in[at] > in[best]) best = at;
      }
      out[o * v.inner + i] = in[best];
      (*argmax)[o * v.inner + i] = best;
    }
  }
  return detail::make_result(std::move(out_shape), std::move(out), "max_over_axis", {x},
                             [argmax](detail::Node& self) {
                               auto gx = detail::sink(*self.parents[0]);
                               for (std::size_t i = 0; i < self.grad.size(); ++i) gx[(*argmax)[i]] += self.grad[i];
                             });
}

/// Rows of `table` [V x D] selected by ids, giving [N x D].
inline Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  detail::require_rank(table, 2, "embedding_lookup");
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  if (ids.empty()) throw Error(ErrorCode::kDimensionMismatch, "embedding_lookup with no ids");
  auto rows = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  std::vector<double> out(rows->size() * width);
  const auto src = table.data();
  for (std::size_t r = 0; r < rows->size(); ++r) {
    const int id = (*rows)[r];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw Error(ErrorCode::kIdOutOfRange, "id " + std::to_string(id) + " for table of " + std::to_string(vocab));
    }
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(id * width), width,
                out.begin() + static_cast<std::ptrdiff_t>(r * width));
  }
  return detail::make_result({rows->size(), width}, std::move(out), "embedding_lookup", {table},
                             [rows, width](detail::Node& self) {
                               auto gt = detail::sink(*self.parents[0]);
                               for (std::size_t r = 0; r < rows->size(); ++r) {
                                 const std::size_t base = static_cast<std::size_t>((*rows)[r]) * width;
                                 for (std::size_t c = 0; c < width; ++c) gt[base + c] += self.grad[r * width + c];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "reshape " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(out), "reshape", {x}, [](detail::Node& self) {
    auto gx = detail::sink(*self.parents[0]);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
  });
}

inline Tensor transpose(const Tensor& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
  }
  return detail::make_result({cols, rows}, std::move(out), "transpose", {x}, [rows, cols](detail::Node& self) {
    auto gx = detail::sink(*self.parents[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += self.grad[c * rows + r];
    }
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorCode::kDimensionMismatch, "concat of nothing");
  detail::check_axis(parts[0], axis);
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) throw Error(ErrorCode::kDimensionMismatch, "concat rank mismatch");
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.dim(d) != parts[0].dim(d)) {
        throw Error(ErrorCode::kDimensionMismatch,
                    "concat " + shape_string(p.shape()) + " with " + shape_string(parts[0].shape()));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  const auto view = detail::axis_view(out_shape, axis);
  auto widths = std::make_shared<std::vector<std::size_t>>();
  for (const auto& p : parts) widths->push_back(p.dim(axis) * view.inner);
  const std::size_t row = view.length * view.inner;
  std::vector<double> out(shape_size(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto in = parts[k].data();
    const std::size_t w = (*widths)[k];
    for (std::size_t o = 0; o < view.outer; ++o) {
      std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    }
    offset += w;
  }
  return detail::make_result(std::move(out_shape), std::move(out), "concat", parts,
                             [widths, row, outer = view.outer](detail::Node& self) {
                               std::size_t offset = 0;
                               for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                 const std::size_t w = (*widths)[k];
                                 auto gp = detail::sink(*self.parents[k]);
                                 if (!gp.empty()) {
                                   for (std::size_t o = 0; o < outer; ++o) {
                                     for (std::size_t i = 0; i < w; ++i) gp[o * w + i] += self.grad[o * row + offset + i];
                                   }
                                 }
                                 offset += w;
                               }
                             });
}

/// Contiguous range [start, start + length) along an axis.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  detail::check_axis(x, axis);
  if (length == 0 || start + length > x.dim(axis)) {
    throw Error(ErrorCode::kDimensionMismatch, "slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                                                   ") of axis " + std::to_string(axis) + " in " +
                                                   shape_string(x.shape()));
  }
  const auto view = detail::axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t src_row = view.length * view.inner, dst_row = length * view.inner, off = start * view.inner;
  std::vector<double> out(view.outer * dst_row);
  const auto in = x.data();
  for (std::size_t o = 0; o < view.outer; ++o) {
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(o * src_row + off), dst_row,
                out.begin() + static_cast<std::ptrdiff_t>(o * dst_row));
  }
  return detail::make_result(std::move(out_shape), std::move(out), "slice", {x},
                             [src_row, dst_row, off, outer = view.outer](detail::Node& self) {
                               auto gx = detail::sink(*self.parents[0]);
                               for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t i = 0; i < dst_row; ++i) {
                                   gx[o * src_row + off + i] += self.grad[o * dst_row + i];
                                 }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Linear algebra and normalization

namespace detail {

// c[m x n] += a[m x k] * b[k x n], all row-major.
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw Error(ErrorCode::kDimensionMismatch,
                "matmul inner dimensions " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  detail::gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const double* g = self.grad.data();
    if (pa.requires_grad) {
      // dA = G * B^T
      auto ga = pa.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = pb.data.data() + p * n;
          const double* grow = g + i * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (pb.requires_grad) {
      // dB = A^T * G
      auto gb = pb.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa.data[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
      }
    }
  });
}

/// Softmax along `axis`, stabilized by max subtraction. Entries equal to -inf
/// get probability exactly 0; a slice that is entirely -inf maps to zeros.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  detail::check_axis(x, axis);
  const auto v = detail::axis_view(x.shape(), axis);
  std::vector<double> out(x.size(), 0.0);
  const auto in = x.data();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.length * v.inner + i;
      double peak = kNegInf;
      for (std::size_t k = 0; k < v.length; ++k) peak = std::max(peak, in[base + k * v.inner]);
      if (peak == kNegInf) continue;
      double total = 0.0;
      for (std::size_t k = 0; k < v.length; ++k) {
        const double e = std::exp(in[base + k * v.inner] - peak);
        out[base + k * v.inner] = e;
        total += e;
      }
      for (std::size_t k = 0; k < v.length; ++k) out[base + k * v.inner] /= total;
    }
  }
  return detail::make_result(x.shape(), std::move(out), "softmax", {x}, [v](detail::Node& self) {
    auto gx = detail::sink(*self.parents[0]);
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.length * v.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < v.length; ++k) {
          dot += self.grad[base + k * v.inner] * self.data[base + k * v.inner];
        }
        for (std::size_t k = 0; k < v.length; ++k) {
          const std::size_t at = base + k * v.inner;
          gx[at] += self.data[at] * (self.grad[at] - dot);
        }
      }
    }
  });
}

inline constexpr double kLayerNormEpsilon = 1e-6;

/// Normalizes over the last axis, then applies per-feature gain and bias.
inline Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  if (x.rank() == 0) throw Error(ErrorCode::kDimensionMismatch, "layernorm of a scalar");
  const std::size_t width = x.shape().back();
  if (gain.size() != width || bias.size() != width) {
    throw Error(ErrorCode::kDimensionMismatch, "layernorm gain/bias " + shape_string(gain.shape()) + "/" +
                                                   shape_string(bias.shape()) + " for width " + std::to_string(width));
  }
  const std::size_t rows = x.size() / width;
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  const auto in = x.data(), g = gain.data(), b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in.data() + r * width;
    double mu = 0.0;
    for (std::size_t c = 0; c < width; ++c) mu += row[c];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t c = 0; c < width; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(width);
    const double s = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    (*rstd)[r] = s;
    for (std::size_t c = 0; c < width; ++c) {
      const double h = (row[c] - mu) * s;
      (*xhat)[r * width + c] = h;
      out[r * width + c] = h * g[c] + b[c];
    }
  }
  return detail::make_result(x.shape(), std::move(out), "layernorm", {x, gain, bias},
                             [xhat, rstd, rows, width](detail::Node& self) {
                               auto& pg = *self.parents[1];
                               auto gx = detail::sink(*self.parents[0]);
                               auto gg = detail::sink(pg);
                               auto gb = detail::sink(*self.parents[2]);
                               const double inv_w = 1.0 / static_cast<double>(width);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double* gy = self.grad.data() + r * width;
                                 const double* h = xhat->data() + r * width;
                                 double mean_dh = 0.0, mean_dh_h = 0.0;
                                 for (std::size_t c = 0; c < width; ++c) {
                                   const double dh = gy[c] * pg.data[c];
                                   mean_dh += dh;
                                   mean_dh_h += dh * h[c];
                                   if (!gg.empty()) gg[c] += gy[c] * h[c];
                                   if (!gb.empty()) gb[c] += gy[c];
                                 }
                                 if (gx.empty()) continue;
                                 mean_dh *= inv_w;
                                 mean_dh_h *= inv_w;
                                 for (std::size_t c = 0; c < width; ++c) {
                                   const double dh = gy[c] * pg.data[c];
                                   gx[r * width + c] += (*rstd)[r] * (dh - mean_dh - h[c] * mean_dh_h);
                                 }
                               }
                             });
}

/// Depthwise convolution over positions with zero "same" padding, followed by
/// a pointwise channel mix and bias.
///
/// x is [len x channels] or [batch x len x channels]; depth_kernel is
/// [k x channels] with k odd; point_kernel is [channels x out]; bias is [out].
inline Tensor depthwise_separable_conv1d(const Tensor& x, const Tensor& depth_kernel, const Tensor& point_kernel,
                                         const Tensor& bias) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw Error(ErrorCode::kDimensionMismatch, "conv input must be rank 2 or 3, got " + shape_string(x.shape()));
  }
  detail::require_rank(depth_kernel, 2, "conv depth kernel");
  detail::require_rank(point_kernel, 2, "conv point kernel");
  const std::size_t batch = x.rank() == 3 ? x.dim(0) : 1;
  const std::size_t len = x.dim(x.rank() - 2), ch = x.dim(x.rank() - 1);
  const std::size_t k = depth_kernel.dim(0), out_ch = point_kernel.dim(1);
  if (k % 2 == 0) throw Error(ErrorCode::kEvenKernel, "kernel width " + std::to_string(k));
  if (depth_kernel.dim(1) != ch || point_kernel.dim(0) != ch || bias.size() != out_ch) {
    throw Error(ErrorCode::kDimensionMismatch, "conv kernels " + shape_string(depth_kernel.shape()) + ", " +
                                                   shape_string(point_kernel.shape()) + ", bias " +
                                                   shape_string(bias.shape()) + " for input " +
                                                   shape_string(x.shape()));
  }
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto in = x.data(), dk = depth_kernel.data();
  auto hidden = std::make_shared<std::vector<double>>(batch * len * ch, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xs = in.data() + b * len * ch;
    double* hs = hidden->data() + b * len * ch;
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
        const double* xrow = xs + static_cast<std::size_t>(src) * ch;
        const double* krow = dk.data() + j * ch;
        double* hrow = hs + t * ch;
        for (std::size_t c = 0; c < ch; ++c) hrow[c] += krow[c] * xrow[c];
      }
    }
  }
  std::vector<double> out(batch * len * out_ch);
  const auto bv = bias.data();
  for (std::size_t r = 0; r < batch * len; ++r) std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(r * out_ch));
  detail::gemm_acc(hidden->data(), point_kernel.data().data(), out.data(), batch * len, ch, out_ch);
  Shape out_shape = x.shape();
  out_shape.back() = out_ch;
  return detail::make_result(
      std::move(out_shape), std::move(out), "depthwise_separable_conv1d", {x, depth_kernel, point_kernel, bias},
      [hidden, batch, len, ch, k, out_ch, pad](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pd = *self.parents[1];
        auto& pp = *self.parents[2];
        const double* g = self.grad.data();
        const std::size_t rows = batch * len;
        if (pp.requires_grad) {
          auto gp = pp.grad_buffer();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < ch; ++c) {
              const double h = (*hidden)[r * ch + c];
              if (h == 0.0) continue;
              for (std::size_t o = 0; o < out_ch; ++o) gp[c * out_ch + o] += h * g[r * out_ch + o];
            }
          }
        }
        auto gbias = detail::sink(*self.parents[3]);
        if (!gbias.empty()) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < out_ch; ++o) gbias[o] += g[r * out_ch + o];
          }
        }
        if (!px.requires_grad && !pd.requires_grad) return;
        // Gradient w.r.t. the depthwise output: G * P^T.
        std::vector<double> gh(rows * ch, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < ch; ++c) {
            double acc = 0.0;
            for (std::size_t o = 0; o < out_ch; ++o) acc += g[r * out_ch + o] * pp.data[c * out_ch + o];
            gh[r * ch + c] = acc;
          }
        }
        auto gx = detail::sink(px);
        auto gd = detail::sink(pd);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t t = 0; t < len; ++t) {
            const double* ghrow = gh.data() + (b * len + t) * ch;
            for (std::size_t j = 0; j < k; ++j) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - pad;
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
              const std::size_t xoff = (b * len + static_cast<std::size_t>(src)) * ch;
              for (std::size_t c = 0; c < ch; ++c) {
                if (!gd.empty()) gd[j * ch + c] += ghrow[c] * px.data[xoff + c];
                if (!gx.empty()) gx[xoff + c] += ghrow[c] * pd.data[j * ch + c];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Differentiation

/// One recorded operation: its output node, the op name and its input nodes.
struct TapeEntry {
  std::uint64_t output = 0;
  std::string_view op;
  std::vector<std::uint64_t> inputs;
};

/// The recorded operations leading to a tensor, in execution (topological) order.
class Tape {
 public:
  static Tape record(const Tensor& root) {
    Tape tape;
    for (const auto& node : collect(root)) {
      if (!node->backward) continue;
      TapeEntry entry{node->id, node->op, {}};
      for (const auto& p : node->parents) entry.inputs.push_back(p->id);
      tape.entries_.push_back(std::move(entry));
    }
    std::reverse(tape.entries_.begin(), tape.entries_.end());
    return tape;
  }

  const std::vector<TapeEntry>& entries() const { return entries_; }

  /// True when every operation's inputs are produced earlier on the tape (or are leaves).
  bool is_topological() const {
    std::unordered_set<std::uint64_t> produced, later;
    for (const auto& e : entries_) later.insert(e.output);
    for (const auto& e : entries_) {
      for (auto in : e.inputs) {
        if (later.contains(in) && !produced.contains(in)) return false;
      }
      produced.insert(e.output);
    }
    return true;
  }

  /// Gradient-carrying ancestors of root (inclusive), newest first.
  static std::vector<std::shared_ptr<detail::Node>> collect(const Tensor& root) {
    std::vector<std::shared_ptr<detail::Node>> nodes;
    std::unordered_set<const detail::Node*> seen;
    std::vector<std::shared_ptr<detail::Node>> stack{root.node()};
    while (!stack.empty()) {
      auto node = std::move(stack.back());
      stack.pop_back();
      if (!node->requires_grad || !seen.insert(node.get()).second) continue;
      for (const auto& p : node->parents) stack.push_back(p);
      nodes.push_back(std::move(node));
    }
    std::sort(nodes.begin(), nodes.end(), [](const auto& a, const auto& b) { return a->id > b->id; });
    return nodes;
  }

 private:
  std::vector<TapeEntry> entries_;
};

/// Accumulates d(loss)/d(leaf) into every gradient-requiring leaf ancestor.
/// Leaf gradients accumulate across calls until zero_grad().
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw Error(ErrorCode::kNotScalar,
                "backward from tensor of shape " + (loss.defined() ? shape_string(loss.shape()) : std::string("<none>")));
  }
  if (!loss.requires_grad()) {
    throw Error(ErrorCode::kDetachedTensor, "loss is not connected to any gradient-requiring tensor");
  }
  auto nodes = Tape::collect(loss);
  for (auto& node : nodes) {
    if (node->backward) node->grad.assign(node->data.size(), 0.0);
  }
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto& node : nodes) {
    if (node->backward) node->backward(*node);
  }
}

}  // namespace qanet
