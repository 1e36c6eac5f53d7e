#pragma once

// Reverse-mode automatic differentiation over dense row-major float64 tensors.
//
// A Tensor is a cheap handle to a graph node. Leaves are created by the
// factory functions; every op returns a new node that records its parents and
// a backward closure whenever gradient mode is on and at least one input
// requires gradients. The tape is implicit in the parent links and is dropped
// together with the last handle to the result, so each forward pass builds a
// fresh graph.
//
// Gradients accumulate into leaves across backward() calls until zero_grad().
// Leaves that are not reachable from the loss keep has_grad() == false.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ockd/error.hpp"

namespace ockd::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class ShapeError : public Error {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b)
      : Error(ErrorKind::kShape,
              op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b)),
        op_(op), lhs_(a), rhs_(b) {}
  ShapeError(const std::string& op, const Shape& a, const std::string& why)
      : Error(ErrorKind::kShape, op + ": " + why + " (shape " + shape_str(a) + ")"),
        op_(op), lhs_(a) {}

  const std::string& op() const noexcept { return op_; }
  const Shape& lhs() const noexcept { return lhs_; }
  const Shape& rhs() const noexcept { return rhs_; }

 private:
  std::string op_;
  Shape lhs_;
  Shape rhs_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty means "no gradient yet"
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : saved_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = saved_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor", shape,
                       "data length " + std::to_string(data.size()) + " does not match");
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, v), requires_grad);
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return from({}, {v}, requires_grad);
  }
  static Tensor vector(std::vector<double> v, bool requires_grad = false) {
    const std::size_t n = v.size();
    return from({n}, std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  const char* op() const { return node_->op; }

  std::span<const double> data() const { return node_->value; }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double item() const {
    if (size() != 1) throw ShapeError("item", shape(), "tensor is not a scalar");
    return node_->value[0];
  }

  /// In-place access for optimizers and initializers. Only valid on leaves.
  std::span<double> mutable_data() {
    if (!node_->is_leaf()) {
      throw Error(ErrorKind::kShape, "mutable_data: tensor is not a leaf");
    }
    return node_->value;
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    if (!node_->is_leaf()) {
      throw Error(ErrorKind::kShape, "set_requires_grad: tensor is not a leaf");
    }
    node_->requires_grad = on;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  /// Detached copy of the values (new leaf, no history).
  Tensor detach() const { return from(shape(), node_->value, false); }

  void backward() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                          std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (grad_mode()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& t : inputs) node->parents.push_back(t.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// Leading extent and trailing extent around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

// rhs broadcasts over lhs when its shape is a suffix of lhs's shape.
inline void check_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (b.size() > a.size() || !std::equal(b.rbegin(), b.rend(), a.rbegin())) {
    throw ShapeError(op, a, b);
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.size());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xs[i]);
  return make_result(op, x.shape(), std::move(out), {x}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
    }
  });
}

}  // namespace detail

inline void Tensor::backward() const {
  if (size() != 1) {
    throw ShapeError("backward", shape(), "loss must be a scalar");
  }
  if (!requires_grad()) return;
  if (node_->is_leaf()) {
    node_->ensure_grad()[0] += 1.0;
    return;
  }

  // Post-order DFS gives parents before children; walk it in reverse.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (detail::Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  }
  node_->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf() && (*it)->backward) (*it)->backward(**it);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

/// [m,k] x [k,n] -> [m,n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul", a.shape(), b.shape());
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n);
  detail::MutMap(out.data(), m, n).noalias() =
      detail::ConstMap(a.data().data(), m, k) * detail::ConstMap(b.data().data(), k, n);
  return detail::make_result("matmul", {m, n}, std::move(out), {a, b},
                             [m, k, n](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    detail::ConstMap g(self.grad.data(), m, n);
    if (pa.requires_grad) {
      detail::MutMap(pa.ensure_grad().data(), m, k).noalias() +=
          g * detail::ConstMap(pb.value.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      detail::MutMap(pb.ensure_grad().data(), k, n).noalias() +=
          detail::ConstMap(pa.value.data(), m, k).transpose() * g;
    }
  });
}

/// Swaps the last two axes.
inline Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose", x.shape(), "rank must be >= 2");
  Shape shape = x.shape();
  const std::size_t r = shape[shape.size() - 2], c = shape[shape.size() - 1];
  const std::size_t batch = x.size() / (r * c);
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  std::vector<double> out(x.size());
  const auto xs = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = xs[b * r * c + i * c + j];
    }
  }
  return detail::make_result("transpose", std::move(shape), std::move(out), {x},
                             [batch, r, c](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          g[b * r * c + i * c + j] += self.grad[b * r * c + j * r + i];
        }
      }
    }
  });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) throw ShapeError("reshape", x.shape(), shape);
  std::vector<double> out(x.data().begin(), x.data().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {x},
                             [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Elements [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
    throw ShapeError("slice", x.shape(),
                     "bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") on axis " + std::to_string(axis));
  }
  const auto s = detail::split_at(x.shape(), axis);
  const std::size_t len = end - begin;
  Shape shape = x.shape();
  shape[axis] = len;
  std::vector<double> out(s.outer * len * s.inner);
  const auto xs = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xs.begin() + (o * s.extent + begin) * s.inner, len * s.inner,
                out.begin() + o * len * s.inner);
  }
  return detail::make_result("slice", std::move(shape), std::move(out), {x},
                             [s, begin, len](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < len * s.inner; ++i) {
        g[(o * s.extent + begin) * s.inner + i] += self.grad[o * len * s.inner + i];
      }
    }
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw Error(ErrorKind::kShape, "concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat", first, "axis out of range");
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) throw ShapeError("concat", first, s);
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape shape = first;
  shape[axis] = total;
  const auto split = detail::split_at(shape, axis);
  std::vector<double> out(numel(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto xs = parts[k].data();
    const std::size_t chunk = extents[k] * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(xs.begin() + o * chunk, chunk,
                  out.begin() + (o * total + offset) * split.inner);
    }
    offset += extents[k];
  }
  return detail::make_result("concat", std::move(shape), std::move(out), parts,
                             [split, extents, total](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto& p = *self.parents[k];
      const std::size_t chunk = extents[k] * split.inner;
      if (p.requires_grad) {
        auto& g = p.ensure_grad();
        for (std::size_t o = 0; o < split.outer; ++o) {
          for (std::size_t i = 0; i < chunk; ++i) {
            g[o * chunk + i] += self.grad[(o * total + off) * split.inner + i];
          }
        }
      }
      off += extents[k];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

template <typename Fwd, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  check_broadcast(op, a.shape(), b.shape());
  const std::size_t n = a.size(), m = b.size();
  std::vector<double> out(n);
  const auto as = a.data();
  const auto bs = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(as[i], bs[i % m]);
  return make_result(op, a.shape(), std::move(out), {a, b}, [n, m, da, db](Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        g[i] += self.grad[i] * da(pa.value[i], pb.value[i % m]);
      }
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        g[i % m] += self.grad[i] * db(pa.value[i], pb.value[i % m]);
      }
    }
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(
      "scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(
      "add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// GELU, tanh approximation.
inline Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return detail::unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kC * (v + kA * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Tensor sqrt(const Tensor& x) {
  return detail::unary(
      "sqrt", x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return 0.5 / y; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return detail::make_result("sum", {}, {total}, {x}, [](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

/// Sums out `axis`; the result drops that axis.
inline Tensor sum(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("sum", x.shape(), "axis out of range");
  const auto s = detail::split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto xs = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        out[o * s.inner + i] += xs[(o * s.extent + e) * s.inner + i];
      }
    }
  }
  return detail::make_result("sum_axis", std::move(shape), std::move(out), {x},
                             [s](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t e = 0; e < s.extent; ++e) {
        for (std::size_t i = 0; i < s.inner; ++i) {
          g[(o * s.extent + e) * s.inner + i] += self.grad[o * s.inner + i];
        }
      }
    }
  });
}

inline Tensor mean(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("mean", x.shape(), "axis out of range");
  return scale(sum(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

// ---------------------------------------------------------------------------
// Normalization

/// Softmax over the last axis.
inline Tensor softmax(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("softmax", x.shape(), "rank must be >= 1");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * d;
    double* y = out.data() + r * d;
    const double mx = *std::max_element(in, in + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (y[j] = std::exp(in[j] - mx));
    for (std::size_t j = 0; j < d; ++j) y[j] /= z;
  }
  return detail::make_result("softmax", x.shape(), std::move(out), {x},
                             [rows, d](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* gy = self.grad.data() + r * d;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (gy[j] - dot);
    }
  });
}

/// Log-softmax over the last axis.
inline Tensor log_softmax(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("log_softmax", x.shape(), "rank must be >= 1");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  const auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * d;
    const double mx = *std::max_element(in, in + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += std::exp(in[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = in[j] - lse;
  }
  return detail::make_result("log_softmax", x.shape(), std::move(out), {x},
                             [rows, d](detail::Node& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * d;
      const double* gy = self.grad.data() + r * d;
      double total = 0.0;
      for (std::size_t j = 0; j < d; ++j) total += gy[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += gy[j] - std::exp(y[j]) * total;
    }
  });
}

/// Layer normalization over the last axis with learnable scale and shift.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  if (x.rank() < 1 || gamma.shape() != Shape{x.shape().back()}) {
    throw ShapeError("layer_norm", x.shape(), gamma.shape());
  }
  if (beta.shape() != gamma.shape()) throw ShapeError("layer_norm", gamma.shape(), beta.shape());
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  // Cached per row: normalized input and 1/sigma.
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto xs = x.data();
  const auto gs = gamma.data();
  const auto bs = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xs.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gs[j] + bs[j];
    }
  }
  return detail::make_result("layer_norm", x.shape(), std::move(out), {x, gamma, beta},
                             [rows, d, xhat, inv_std](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    const auto& h = *xhat;
    if (pg.requires_grad) {
      auto& gg = pg.ensure_grad();
      for (std::size_t i = 0; i < rows * d; ++i) gg[i % d] += self.grad[i] * h[i];
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (std::size_t i = 0; i < rows * d; ++i) gb[i % d] += self.grad[i];
    }
    if (!px.requires_grad) return;
    auto& gx = px.ensure_grad();
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_g = 0.0, mean_gh = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double dh = self.grad[r * d + j] * pg.value[j];
        mean_g += dh;
        mean_gh += dh * h[r * d + j];
      }
      mean_g *= inv_d;
      mean_gh *= inv_d;
      for (std::size_t j = 0; j < d; ++j) {
        const double dh = self.grad[r * d + j] * pg.value[j];
        gx[r * d + j] += (*inv_std)[r] * (dh - mean_g - h[r * d + j] * mean_gh);
      }
    }
  });
}

}  // namespace ockd::ad
