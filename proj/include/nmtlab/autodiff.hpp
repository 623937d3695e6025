#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// tensors of doubles. A Tape records every primitive application in
// creation order, which is a topological order by construction; backward()
// replays it in reverse.

#include <algorithm>
#include <cmath>
#include <deque>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nmtlab/error.hpp"

namespace nmtlab {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense n-dimensional array with an optional gradient slot.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty unless enable_grad() was called

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {
    check_shape();
  }
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    check_shape();
    if (data.size() != shape_size(shape))
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
  }

  static Tensor vec(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }
  static Tensor mat(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() >= 2 ? shape[1] : 1; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool has_grad() const { return !grad.empty(); }
  void enable_grad() { grad.assign(data.size(), 0.0); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

 private:
  void check_shape() const {
    for (auto e : shape)
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
};

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = std::numeric_limits<std::size_t>::max();

  bool valid() const { return tape != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  double operator[](std::size_t i) const { return value().data[i]; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  /// A value that never receives gradient.
  Var constant(Tensor t) { return add_node(std::move(t), {}, nullptr, false); }

  /// A free variable owned by the tape; read its gradient with grad().
  Var variable(Tensor t) { return add_node(std::move(t), {}, nullptr, record_); }

  /// Binds an external parameter. Repeated calls with the same tensor return
  /// the same node so gradients from every time step accumulate in one place.
  Var param(Tensor& p) { return bind_external(p, &p); }

  /// Binds a read-only parameter; it never receives gradient.
  Var param(const Tensor& p) { return bind_external(p, nullptr); }

  /// Records the result of a primitive. `fn` is dropped when no input needs
  /// a gradient or the tape is not recording.
  Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (v.tape != this) throw ContractError("operand belongs to a different tape");
      ids.push_back(v.id);
      needs = needs || nodes_[v.id].requires_grad;
    }
    return push_ids(std::move(value), std::move(ids), std::move(fn), needs);
  }

  Var push(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (v.tape != this) throw ContractError("operand belongs to a different tape");
      ids.push_back(v.id);
      needs = needs || nodes_[v.id].requires_grad;
    }
    return push_ids(std::move(value), std::move(ids), std::move(fn), needs);
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Adjoint of a node; empty before backward().
  std::span<double> adjoint(std::size_t id) { return nodes_[id].adj; }
  std::span<const double> adjoint(std::size_t id) const { return nodes_[id].adj; }

  /// Adjoint as a tensor shaped like the node's value.
  Tensor grad(Var v) const {
    Tensor t(value(v.id).shape);
    const auto& a = nodes_[v.id].adj;
    if (!a.empty()) std::copy(a.begin(), a.end(), t.data.begin());
    return t;
  }

  /// Reverse sweep from a scalar loss. With flush, bound parameters receive
  /// += their adjoints; callers reset parameter grads between steps.
  void backward(Var loss, bool flush = true) {
    if (loss.tape != this) throw ContractError("loss belongs to a different tape");
    if (value(loss.id).size() != 1)
      throw ContractError("backward needs a scalar loss, got shape " + shape_str(value(loss.id).shape));
    if (!record_) throw ContractError("backward on a tape that does not record");
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.requires_grad && i <= loss.id) n.adj.assign(value(i).size(), 0.0);
      else n.adj.clear();
    }
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].adj[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward) n.backward(*this, i);
    }
    if (flush) flush_param_grads();
  }

  /// Adds parameter-node adjoints into the bound parameters' grad slots.
  void flush_param_grads() {
    for (auto& n : nodes_) {
      if (!n.param || n.adj.empty()) continue;
      if (!n.param->has_grad()) n.param->enable_grad();
      auto& g = n.param->grad;
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.adj[k];
    }
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor* param = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<double> adj;
    bool requires_grad = false;
  };

  Var bind_external(const Tensor& p, Tensor* grad_target) {
    if (auto it = param_ids_.find(&p); it != param_ids_.end()) return Var{this, it->second};
    Node n;
    n.external = &p;
    n.param = grad_target;
    n.requires_grad = record_ && grad_target != nullptr;
    nodes_.push_back(std::move(n));
    const std::size_t id = nodes_.size() - 1;
    param_ids_.emplace(&p, id);
    return Var{this, id};
  }

  Var add_node(Tensor t, std::vector<std::size_t> inputs, BackwardFn fn, bool wants_grad) {
    Node n;
    n.value = std::move(t);
    n.inputs = std::move(inputs);
    n.requires_grad = wants_grad;
    if (wants_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  Var push_ids(Tensor value, std::vector<std::size_t> ids, BackwardFn fn, bool needs) {
    const bool wants_grad = record_ && needs;
    return add_node(std::move(value), wants_grad ? std::move(ids) : std::vector<std::size_t>{},
                    wants_grad ? std::move(fn) : nullptr, wants_grad);
  }

  bool record_;
  std::deque<Node> nodes_;  // stable addresses: value() references outlive later pushes
  std::unordered_map<const Tensor*, std::size_t> param_ids_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void require_same_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw ContractError("operands belong to different tapes");
}

// Adds `src` into the adjoint of node `id` if that node wants a gradient.
template <class F>
inline void accumulate(Tape& t, std::size_t id, F&& f) {
  if (!t.requires_grad(id)) return;
  f(t.adjoint(id));
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a[m x k] * b[k x n]. A rank-1 `b` of length k is treated as a column and
/// the result is a rank-1 vector of length m.
inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() > 2 || A.cols() != B.rows())
    throw DimensionError("matmul: incompatible shapes " + shape_str(A.shape) + " and " + shape_str(B.shape));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out(B.rank() == 1 ? Shape{m} : Shape{m, n});
  const double* pa = A.data.data();
  const double* pb = B.data.data();
  double* po = out.data.data();
  if (n == 1) {
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = pa + i * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += row[p] * pb[p];
      po[i] = s;
    }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double av = pa[i * k + p];
        const double* brow = pb + p * n;
        double* orow = po + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    const double* pa = t.value(ia).data.data();
    const double* pb = t.value(ib).data.data();
    // a.grad += g * b^T
    detail::accumulate(t, ia, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < m; ++i) {
        double* garow = ga.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) garow[p] += gij * pb[p * n + j];
        }
      }
    });
    // b.grad += a^T * g
    detail::accumulate(t, ib, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = pa + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const double gij = g[i * n + j];
          if (gij == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) gb[p * n + j] += arow[p] * gij;
        }
      }
    });
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  out.grad.clear();
  const auto& bd = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bd[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    detail::accumulate(t, ia, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    detail::accumulate(t, ib, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    });
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  out.grad.clear();
  const auto& bd = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bd[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    detail::accumulate(t, ia, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
    detail::accumulate(t, ib, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    });
  });
}

inline Var hadamard(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "hadamard");
  Tensor out = a.value();
  out.grad.clear();
  const auto& bd = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bd[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    const auto& av = t.value(ia).data;
    const auto& bv = t.value(ib).data;
    detail::accumulate(t, ia, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    });
    detail::accumulate(t, ib, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    });
  });
}

/// alpha * a + beta, pointwise.
inline Var affine(Var a, double alpha, double beta) {
  Tensor out = a.value();
  out.grad.clear();
  for (auto& x : out.data) x = alpha * x + beta;
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), {a}, [ia, alpha](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    detail::accumulate(t, ia, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
    });
  });
}

inline Var scale(Var a, double s) { return affine(a, s, 0.0); }
inline Var neg(Var a) { return affine(a, -1.0, 0.0); }
inline Var one_minus(Var a) { return affine(a, -1.0, 1.0); }

/// Elementwise maximum; on ties the gradient goes to `a`.
inline Var maximum(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape(a, b, "maximum");
  Tensor out = a.value();
  out.grad.clear();
  const auto& bd = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = std::max(out.data[i], bd[i]);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    const auto& av = t.value(ia).data;
    const auto& bv = t.value(ib).data;
    detail::accumulate(t, ia, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (av[i] >= bv[i]) ga[i] += g[i];
    });
    detail::accumulate(t, ib, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < g.size(); ++i)
        if (!(av[i] >= bv[i])) gb[i] += g[i];
    });
  });
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { sigmoid, tanh, logistic, exp };

inline Var activation(Activation kind, Var x) {
  Tensor out = x.value();
  out.grad.clear();
  switch (kind) {
    case Activation::sigmoid:
    case Activation::logistic:
      for (auto& v : out.data) v = detail::stable_sigmoid(v);
      break;
    case Activation::tanh:
      for (auto& v : out.data) v = std::tanh(v);
      break;
    case Activation::exp:
      for (auto& v : out.data) v = std::exp(v);
      break;
  }
  const std::size_t ix = x.id;
  return x.tape->push(std::move(out), {x}, [ix, kind](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    const auto& y = t.value(self).data;
    detail::accumulate(t, ix, [&](std::span<double> gx) {
      switch (kind) {
        case Activation::sigmoid:
        case Activation::logistic:
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
          break;
        case Activation::tanh:
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
          break;
        case Activation::exp:
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
          break;
      }
    });
  });
}

inline Var sigmoid(Var x) { return activation(Activation::sigmoid, x); }
inline Var logistic(Var x) { return activation(Activation::logistic, x); }
inline Var tanh(Var x) { return activation(Activation::tanh, x); }
inline Var exp(Var x) { return activation(Activation::exp, x); }

/// Normalized exponentials with max subtraction.
inline Var softmax_vec(Var e) {
  const Tensor& in = e.value();
  if (in.size() == 0) throw DimensionError("softmax_vec: empty input");
  Tensor out(Shape{in.size()});
  const double mx = *std::max_element(in.data.begin(), in.data.end());
  double z = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) z += (out.data[i] = std::exp(in.data[i] - mx));
  for (auto& v : out.data) v /= z;
  const std::size_t ie = e.id;
  return e.tape->push(std::move(out), {e}, [ie](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    const auto& y = t.value(self).data;
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
    detail::accumulate(t, ie, [&](std::span<double> ge) {
      for (std::size_t i = 0; i < g.size(); ++i) ge[i] += y[i] * (g[i] - dot);
    });
  });
}

/// x / sum(x) for a vector with positive sum.
inline Var normalize(Var x) {
  const Tensor& in = x.value();
  const double s = std::accumulate(in.data.begin(), in.data.end(), 0.0);
  if (!(s > 0.0)) throw ContractError("normalize: non-positive total");
  Tensor out(Shape{in.size()});
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in.data[i] / s;
  const std::size_t ix = x.id;
  return x.tape->push(std::move(out), {x}, [ix, s](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    const auto& y = t.value(self).data;
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
    detail::accumulate(t, ix, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += (g[i] - dot) / s;
    });
  });
}

// ---------------------------------------------------------------------------
// Structural

/// Joins along the first axis. Trailing extents must agree.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  Tape* tape = parts.front().tape;
  const Shape& first = parts.front().shape();
  Shape trailing(first.begin() + 1, first.end());
  std::size_t lead = 0;
  for (const Var& p : parts) {
    if (p.tape != tape) throw ContractError("concat: operands on different tapes");
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), trailing.begin()))
      throw DimensionError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    lead += s[0];
  }
  if (parts.size() == 1) return parts.front();
  Shape out_shape = first;
  out_shape[0] = lead;
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto& d = p.value().data;
    std::copy(d.begin(), d.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
    offsets.push_back(off);
    off += d.size();
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  return tape->push(std::move(out), parts, [ids, offsets](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      detail::accumulate(t, ids[k], [&](std::span<double> gp) {
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offsets[k] + i];
      });
    }
  });
}

inline Var concat(std::initializer_list<Var> parts) { return concat(std::vector<Var>(parts)); }

/// Stacks equal-length vectors as the columns of a [d x n] matrix.
inline Var stack_columns(const std::vector<Var>& cols) {
  if (cols.empty()) throw DimensionError("stack_columns: no columns");
  Tape* tape = cols.front().tape;
  const std::size_t d = cols.front().size();
  const std::size_t n = cols.size();
  for (const Var& c : cols) {
    if (c.tape != tape) throw ContractError("stack_columns: operands on different tapes");
    if (c.value().rank() != 1 || c.size() != d)
      throw DimensionError("stack_columns: column shape " + shape_str(c.shape()) + " expected [" +
                           std::to_string(d) + "]");
  }
  Tensor out(Shape{d, n});
  for (std::size_t j = 0; j < n; ++j) {
    const auto& v = cols[j].value().data;
    for (std::size_t i = 0; i < d; ++i) out.data[i * n + j] = v[i];
  }
  std::vector<std::size_t> ids;
  for (const Var& c : cols) ids.push_back(c.id);
  return tape->push(std::move(out), cols, [ids, d, n](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    for (std::size_t j = 0; j < n; ++j)
      detail::accumulate(t, ids[j], [&](std::span<double> gc) {
        for (std::size_t i = 0; i < d; ++i) gc[i] += g[i * n + j];
      });
  });
}

inline Var slice(Var x, std::size_t offset, std::size_t length) {
  const Tensor& in = x.value();
  if (in.rank() != 1 || length == 0 || offset + length > in.size())
    throw DimensionError("slice: [" + std::to_string(offset) + ", +" + std::to_string(length) +
                         ") out of range for " + shape_str(in.shape));
  Tensor out(Shape{length});
  std::copy_n(in.data.begin() + static_cast<std::ptrdiff_t>(offset), length, out.data.begin());
  const std::size_t ix = x.id;
  return x.tape->push(std::move(out), {x}, [ix, offset](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    detail::accumulate(t, ix, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[offset + i] += g[i];
    });
  });
}

/// Row `r` of a matrix as a vector (embedding lookup).
inline Var row(Var m, std::size_t r) {
  const Tensor& M = m.value();
  if (M.rank() != 2 || r >= M.rows())
    throw DimensionError("row: index " + std::to_string(r) + " out of range for " + shape_str(M.shape));
  const std::size_t c = M.cols();
  Tensor out(Shape{c});
  std::copy_n(M.data.begin() + static_cast<std::ptrdiff_t>(r * c), c, out.data.begin());
  const std::size_t im = m.id;
  return m.tape->push(std::move(out), {m}, [im, r, c](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    detail::accumulate(t, im, [&](std::span<double> gm) {
      for (std::size_t i = 0; i < c; ++i) gm[r * c + i] += g[i];
    });
  });
}

inline Var reshape(Var x, Shape s) {
  if (shape_size(s) != x.size())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(s));
  Tensor out(std::move(s), x.value().data);
  const std::size_t ix = x.id;
  return x.tape->push(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    detail::accumulate(t, ix, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  });
}

/// Adds vector v[m] to every column of M[m x n].
inline Var add_column(Var m, Var v) {
  detail::require_same_tape(m, v);
  const Tensor& M = m.value();
  const Tensor& V = v.value();
  if (M.rank() != 2 || V.rank() != 1 || V.size() != M.rows())
    throw DimensionError("add_column: shapes " + shape_str(M.shape) + " and " + shape_str(V.shape));
  const std::size_t rows = M.rows(), cols = M.cols();
  Tensor out = M;
  out.grad.clear();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out.data[i * cols + j] += V.data[i];
  const std::size_t im = m.id, iv = v.id;
  return m.tape->push(std::move(out), {m, v}, [im, iv, rows, cols](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    detail::accumulate(t, im, [&](std::span<double> gm) {
      for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
    });
    detail::accumulate(t, iv, [&](std::span<double> gv) {
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) gv[i] += g[i * cols + j];
    });
  });
}

/// Repeats a one-element tensor into a vector of length n.
inline Var broadcast(Var s, std::size_t n) {
  if (s.size() != 1) throw DimensionError("broadcast: expects a scalar, got " + shape_str(s.shape()));
  Tensor out(Shape{n}, s.value().data[0]);
  const std::size_t is = s.id;
  return s.tape->push(std::move(out), {s}, [is](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    detail::accumulate(t, is, [&](std::span<double> gs) {
      for (double gi : g) gs[0] += gi;
    });
  });
}

/// Zero-padded sliding windows of a vector: out[t][j] = x[j + t - (k-1)/2].
/// Q * out is then the same-length convolution of x with the rows of Q.
inline Var unfold(Var x, std::size_t width) {
  const Tensor& in = x.value();
  if (in.rank() != 1) throw DimensionError("unfold: expects a vector, got " + shape_str(in.shape));
  if (width == 0 || width % 2 == 0) throw ConfigError("unfold: kernel width must be odd, got " + std::to_string(width));
  const std::size_t n = in.size();
  const auto half = static_cast<std::ptrdiff_t>(width / 2);
  Tensor out(Shape{width, n});
  for (std::size_t t = 0; t < width; ++t)
    for (std::size_t j = 0; j < n; ++j) {
      const auto src = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(t) - half;
      if (src >= 0 && src < static_cast<std::ptrdiff_t>(n)) out.data[t * n + j] = in.data[static_cast<std::size_t>(src)];
    }
  const std::size_t ix = x.id;
  return x.tape->push(std::move(out), {x}, [ix, width, n, half](Tape& t, std::size_t self) {
    auto g = t.adjoint(self);
    detail::accumulate(t, ix, [&](std::span<double> gx) {
      for (std::size_t tt = 0; tt < width; ++tt)
        for (std::size_t j = 0; j < n; ++j) {
          const auto src = static_cast<std::ptrdiff_t>(j) + static_cast<std::ptrdiff_t>(tt) - half;
          if (src >= 0 && src < static_cast<std::ptrdiff_t>(n)) gx[static_cast<std::size_t>(src)] += g[tt * n + j];
        }
    });
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var x) {
  const auto& d = x.value().data;
  Tensor out = Tensor::scalar(std::accumulate(d.begin(), d.end(), 0.0));
  const std::size_t ix = x.id;
  return x.tape->push(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    const double g = t.adjoint(self)[0];
    detail::accumulate(t, ix, [&](std::span<double> gx) {
      for (auto& v : gx) v += g;
    });
  });
}

/// Sum of scalars.
inline Var add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw DimensionError("add_n: no operands");
  double s = 0.0;
  for (const Var& x : xs) {
    if (x.size() != 1) throw DimensionError("add_n: operand " + shape_str(x.shape()) + " is not a scalar");
    s += x.value().data[0];
  }
  std::vector<std::size_t> ids;
  for (const Var& x : xs) ids.push_back(x.id);
  return xs.front().tape->push(Tensor::scalar(s), xs, [ids](Tape& t, std::size_t self) {
    const double g = t.adjoint(self)[0];
    for (std::size_t id : ids) detail::accumulate(t, id, [&](std::span<double> gx) { gx[0] += g; });
  });
}

/// Euclidean norm; the subgradient at 0 is taken as 0.
inline Var norm2(Var x) {
  const auto& d = x.value().data;
  double s = 0.0;
  for (double v : d) s += v * v;
  const double n = std::sqrt(s);
  const std::size_t ix = x.id;
  return x.tape->push(Tensor::scalar(n), {x}, [ix, n](Tape& t, std::size_t self) {
    if (n == 0.0) return;
    const double g = t.adjoint(self)[0];
    const auto& xv = t.value(ix).data;
    detail::accumulate(t, ix, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * xv[i] / n;
    });
  });
}

/// -log(max(p[index], floor)). No gradient flows through a clamped entry.
inline Var neg_log_pick(Var p, std::size_t index, double floor, bool* clamped = nullptr) {
  const Tensor& P = p.value();
  if (index >= P.size())
    throw DimensionError("neg_log_pick: index " + std::to_string(index) + " outside " + shape_str(P.shape));
  const double v = P.data[index];
  const bool clamp = !(v >= floor);
  if (clamped) *clamped = clamp;
  const std::size_t ip = p.id;
  return p.tape->push(Tensor::scalar(-std::log(clamp ? floor : v)), {p},
                      [ip, index, clamp, v](Tape& t, std::size_t self) {
                        if (clamp) return;
                        const double g = t.adjoint(self)[0];
                        detail::accumulate(t, ip, [&](std::span<double> gp) { gp[index] -= g / v; });
                      });
}

}  // namespace nmtlab
