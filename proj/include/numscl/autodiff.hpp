#pragma once

// Reverse-mode differentiation over an explicit operation record (tape).
//
// A Tape owns every intermediate value produced while evaluating a loss.
// Parameters enter the tape as leaves bound to a Param; after backward() the
// leaf gradients are added into Param::grad. Constants never receive gradient.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <unordered_map>
#include <vector>

#include "numscl/tensor.hpp"

namespace numscl {

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Ordered, pointer-stable collection of named parameters.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Param& add(std::string name, Tensor init) {
    for (const auto& p : params_)
      if (p->name == name) throw Error("duplicate parameter name: " + name);
    auto p = std::make_unique<Param>();
    p->name = std::move(name);
    p->grad = Tensor::zeros_like(init);
    p->value = std::move(init);
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Param* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const Param* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return *params_[i]; }
  const Param& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad() {
    for (auto& p : params_) p->grad.fill(0.0);
  }

  /// Copies values from a store with the same layout (names and shapes in order).
  void copy_values_from(const ParamStore& other) {
    if (other.size() != size()) throw Error("parameter store layout mismatch");
    for (std::size_t i = 0; i < size(); ++i) {
      if (params_[i]->name != other[i].name) throw Error("parameter name mismatch: " + params_[i]->name);
      Tensor::require_same_shape(params_[i]->value, other[i].value, params_[i]->name.c_str());
      params_[i]->value = other[i].value;
    }
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  const Tensor& value() const;
  double item() const { return value().item(); }
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  /// With record_grad=false no reverse rules are stored (evaluation only).
  explicit Tape(bool record_grad = true) : record_grad_(record_grad) { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t) { return push(std::move(t), nullptr, false, nullptr); }

  /// Leaf for a parameter; repeated calls on one tape share a single node.
  Var param(Param& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return Var(this, it->second);
    Var v = push(p.value, &p, record_grad_, nullptr);
    param_ids_.emplace(&p, v.id());
    return v;
  }

  /// Records an operation result. `fn` is stored only if some parent requires grad.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn, const char* op) {
    if (!value.all_finite()) throw Error(std::string("non-finite value produced by ") + op);
    bool needs = false;
    if (record_grad_)
      for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
    return push(std::move(value), nullptr, needs, needs ? std::move(fn) : nullptr);
  }
  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn, const char* op) {
    if (!value.all_finite()) throw Error(std::string("non-finite value produced by ") + op);
    bool needs = false;
    if (record_grad_)
      for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
    return push(std::move(value), nullptr, needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool records_grad() const { return record_grad_; }

  /// Gradient buffer of a node, zero-initialised on first access.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
    return n.grad;
  }
  Tensor& grad(const Var& v) { return grad(v.id()); }

  /// Propagates d(loss)/d(node) through the record and adds leaf gradients into their Params.
  void backward(const Var& loss) {
    if (loss.tape() != this) throw Error("backward: loss belongs to a different tape");
    if (loss.value().size() != 1 || loss.value().rank() != 0)
      throw Error("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    if (!nodes_[loss.id()].requires_grad) return;
    grad(loss.id())[0] += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.param != nullptr) {
        n.param->grad += n.grad;
      } else if (n.backward) {
        n.backward(*this, n.grad);
      }
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Param* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Tensor value, Param* p, bool needs, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor{}, std::move(fn), p, needs});
    return Var(this, nodes_.size() - 1);
  }

  bool record_grad_;
  std::vector<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> param_ids_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

inline Tape& tape_of(const Var& a) {
  if (!a.valid()) throw Error("operation on an unbound Var");
  return *a.tape();
}

inline Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw Error("operands recorded on different tapes");
  return tape_of(a);
}

inline void require_rank(const Var& v, std::size_t r, const char* op) {
  if (v.value().rank() != r)
    throw Error(std::string(op) + ": expected rank " + std::to_string(r) + ", got shape " + shape_str(v.shape()));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Dot product with four partial sums so the compiler can keep several lanes busy.
inline double dot_n(const double* a, const double* b, std::size_t n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += a[j] * b[j];
    s1 += a[j + 1] * b[j + 1];
    s2 += a[j + 2] * b[j + 2];
    s3 += a[j + 3] * b[j + 3];
  }
  for (; j < n; ++j) s0 += a[j] * b[j];
  return (s0 + s1) + (s2 + s3);
}

inline double logsumexp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  Tensor::require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out += b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(ia)) tp.grad(ia) += g;
    if (tp.requires_grad(ib)) tp.grad(ib) += g;
  }, "add");
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  Tensor::require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(ia)) tp.grad(ia) += g;
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  }, "sub");
}

inline Var mul(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  Tensor::require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(ia);
    const Tensor& bv = tp.value(ib);
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  }, "mul");
}

inline Var scale(const Var& a, double c) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, c](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  }, "scale");
}

inline Var add_scalar(const Var& a, double c) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia](Tape& tp, const Tensor& g) { tp.grad(ia) += g; }, "add_scalar");
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }

/// A[i][j] + b[j] for every row i.
inline Var add_row(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_rank(a, 2, "add_row");
  detail::require_rank(b, 1, "add_row");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  if (b.value().size() != n)
    throw Error("add_row: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += b.value()[j];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib, m, n](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(ia)) tp.grad(ia) += g;
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g.at(i, j);
    }
  }, "add_row");
}

/// A[i][j] + v[i] for every column j.
inline Var add_col(const Var& a, const Var& v) {
  Tape& t = detail::tape_of(a, v);
  detail::require_rank(a, 2, "add_col");
  detail::require_rank(v, 1, "add_col");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  if (v.value().size() != m)
    throw Error("add_col: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(v.shape()));
  Tensor out = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += v.value()[i];
  const std::size_t ia = a.id(), iv = v.id();
  return t.record(std::move(out), {a, v}, [ia, iv, m, n](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(ia)) tp.grad(ia) += g;
    if (tp.requires_grad(iv)) {
      Tensor& gv = tp.grad(iv);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[i] += g.at(i, j);
    }
  }, "add_col");
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product. Supports (m x k)(k x n), (m x k)(k) and (k)(k x n).
inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t ia = a.id(), ib = b.id();
  if (A.rank() == 2 && B.rank() == 2) {
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    if (B.rows() != k) throw Error("matmul: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
    Tensor out(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A.at(i, p);
        const double* brow = &B.data()[p * n];
        double* orow = &out.data()[i * n];
        for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
      }
    return t.record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& tp, const Tensor& g) {
      const Tensor& Av = tp.value(ia);
      const Tensor& Bv = tp.value(ib);
      if (tp.requires_grad(ia)) {
        Tensor& gA = tp.grad(ia);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += g.at(i, j) * Bv.at(p, j);
            gA.at(i, p) += s;
          }
      }
      if (tp.requires_grad(ib)) {
        Tensor& gB = tp.grad(ib);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = Av.at(i, p);
            for (std::size_t j = 0; j < n; ++j) gB.at(p, j) += aip * g.at(i, j);
          }
      }
    }, "matmul");
  }
  if (A.rank() == 2 && B.rank() == 1) {
    const std::size_t m = A.rows(), k = A.cols();
    if (B.size() != k) throw Error("matmul: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
    Tensor out(Shape{m});
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      const double* arow = &A.data()[i * k];
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * B[p];
      out[i] = s;
    }
    return t.record(std::move(out), {a, b}, [ia, ib, m, k](Tape& tp, const Tensor& g) {
      const Tensor& Av = tp.value(ia);
      const Tensor& Bv = tp.value(ib);
      if (tp.requires_grad(ia)) {
        Tensor& gA = tp.grad(ia);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) gA.at(i, p) += g[i] * Bv[p];
      }
      if (tp.requires_grad(ib)) {
        Tensor& gB = tp.grad(ib);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) gB[p] += Av.at(i, p) * g[i];
      }
    }, "matmul");
  }
  if (A.rank() == 1 && B.rank() == 2) {
    const std::size_t k = A.size(), n = B.cols();
    if (B.rows() != k) throw Error("matmul: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
    Tensor out(Shape{n});
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) out[j] += A[p] * B.at(p, j);
    return t.record(std::move(out), {a, b}, [ia, ib, k, n](Tape& tp, const Tensor& g) {
      const Tensor& Av = tp.value(ia);
      const Tensor& Bv = tp.value(ib);
      if (tp.requires_grad(ia)) {
        Tensor& gA = tp.grad(ia);
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += Bv.at(p, j) * g[j];
          gA[p] += s;
        }
      }
      if (tp.requires_grad(ib)) {
        Tensor& gB = tp.grad(ib);
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) gB.at(p, j) += Av[p] * g[j];
      }
    }, "matmul");
  }
  throw Error("matmul: unsupported shapes " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
}

inline Var dot(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_rank(a, 1, "dot");
  Tensor::require_same_shape(a.value(), b.value(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) s += a.value()[i] * b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(Tensor::scalar(s), {a, b}, [ia, ib](Tape& tp, const Tensor& g) {
    const double gs = g[0];
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad(ia);
      const Tensor& bv = tp.value(ib);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gs * bv[i];
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad(ib);
      const Tensor& av = tp.value(ia);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gs * av[i];
    }
  }, "dot");
}

inline Var sum(const Var& a) {
  Tape& t = detail::tape_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id();
  return t.record(Tensor::scalar(s), {a}, [ia](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  }, "sum");
}

/// Sum of scalar Vars.
inline Var add_n(std::span<const Var> xs) {
  if (xs.empty()) throw Error("add_n: empty input");
  Tape& t = detail::tape_of(xs[0]);
  double s = 0.0;
  std::vector<std::size_t> ids;
  ids.reserve(xs.size());
  for (const Var& x : xs) {
    if (x.tape() != &t) throw Error("add_n: operands recorded on different tapes");
    if (x.value().size() != 1) throw Error("add_n: expected scalars, got " + shape_str(x.shape()));
    s += x.value()[0];
    ids.push_back(x.id());
  }
  return t.record(Tensor::scalar(s), xs, [ids = std::move(ids)](Tape& tp, const Tensor& g) {
    for (std::size_t id : ids)
      if (tp.requires_grad(id)) tp.grad(id)[0] += g[0];
  }, "add_n");
}

// ---------------------------------------------------------------------------
// Nonlinearities

inline Var tanh(const Var& a) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  const std::size_t ia = a.id();
  const std::size_t io = t.size();
  return t.record(std::move(out), {a}, [ia, io](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(io);
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
  }, "tanh");
}

inline Var sigmoid(const Var& a) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid(out[i]);
  const std::size_t ia = a.id();
  const std::size_t io = t.size();
  return t.record(std::move(out), {a}, [ia, io](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(io);
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  }, "sigmoid");
}

/// Scalar (or elementwise) absolute value; subgradient 0 at the kink.
inline Var abs(const Var& a) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(out[i]);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(ia);
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0));
  }, "abs");
}

inline Var softmax(const Var& a) {
  Tape& t = detail::tape_of(a);
  detail::require_rank(a, 1, "softmax");
  const double lse = detail::logsumexp(a.value().data());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i] - lse);
  const std::size_t ia = a.id();
  const std::size_t io = t.size();
  return t.record(std::move(out), {a}, [ia, io](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(io);
    double gy = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - gy);
  }, "softmax");
}

/// log(sum(exp(a))) over all entries of a vector.
inline Var logsumexp(const Var& a) {
  Tape& t = detail::tape_of(a);
  detail::require_rank(a, 1, "logsumexp");
  const double lse = detail::logsumexp(a.value().data());
  const std::size_t ia = a.id();
  return t.record(Tensor::scalar(lse), {a}, [ia, lse](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(ia);
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += g[0] * std::exp(x[i] - lse);
  }, "logsumexp");
}

/// log-sum-exp of a matrix along `axis` (0: reduce rows -> one value per column; 1: per row).
inline Var logsumexp(const Var& a, int axis) {
  Tape& t = detail::tape_of(a);
  detail::require_rank(a, 2, "logsumexp(axis)");
  if (axis != 0 && axis != 1) throw Error("logsumexp: axis must be 0 or 1");
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  const std::size_t outer = axis == 0 ? n : m;
  const std::size_t inner = axis == 0 ? m : n;
  auto elem = [axis](const Tensor& X, std::size_t o, std::size_t r) { return axis == 0 ? X.at(r, o) : X.at(o, r); };
  Tensor out(Shape{outer});
  for (std::size_t o = 0; o < outer; ++o) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < inner; ++r) mx = std::max(mx, elem(A, o, r));
    double s = 0.0;
    for (std::size_t r = 0; r < inner; ++r) s += std::exp(elem(A, o, r) - mx);
    out[o] = mx + std::log(s);
  }
  const std::size_t ia = a.id();
  const std::size_t io = t.size();
  return t.record(std::move(out), {a}, [ia, io, axis, outer, inner](Tape& tp, const Tensor& g) {
    const Tensor& X = tp.value(ia);
    const Tensor& y = tp.value(io);
    Tensor& gx = tp.grad(ia);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t r = 0; r < inner; ++r) {
        double& dst = axis == 0 ? gx.at(r, o) : gx.at(o, r);
        const double x = axis == 0 ? X.at(r, o) : X.at(o, r);
        dst += g[o] * std::exp(x - y[o]);
      }
  }, "logsumexp(axis)");
}

/// -log softmax(logits)[target].
inline Var softmax_cross_entropy(const Var& logits, std::size_t target) {
  Tape& t = detail::tape_of(logits);
  detail::require_rank(logits, 1, "softmax_cross_entropy");
  const Tensor& z = logits.value();
  if (target >= z.size())
    throw Error("softmax_cross_entropy: target " + std::to_string(target) + " out of range for " + shape_str(z.shape()));
  const double lse = detail::logsumexp(z.data());
  const std::size_t il = logits.id();
  return t.record(Tensor::scalar(lse - z[target]), {logits}, [il, lse, target](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(il);
    Tensor& gx = tp.grad(il);
    for (std::size_t i = 0; i < x.size(); ++i)
      gx[i] += g[0] * (std::exp(x[i] - lse) - (i == target ? 1.0 : 0.0));
  }, "softmax_cross_entropy");
}

/// x / ||x||. Zero vectors are rejected.
inline Var l2_normalize(const Var& a) {
  Tape& t = detail::tape_of(a);
  detail::require_rank(a, 1, "l2_normalize");
  double nrm = 0.0;
  for (double v : a.value().data()) nrm += v * v;
  nrm = std::sqrt(nrm);
  if (nrm == 0.0) throw Error("l2_normalize: zero-norm vector");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= nrm;
  const std::size_t ia = a.id();
  const std::size_t io = t.size();
  return t.record(std::move(out), {a}, [ia, io, nrm](Tape& tp, const Tensor& g) {
    const Tensor& y = tp.value(io);
    double gy = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
    Tensor& ga = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (g[i] - y[i] * gy) / nrm;
  }, "l2_normalize");
}

/// 1 - cos(a, b). Zero vectors are rejected.
inline Var cosine_distance(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_rank(a, 1, "cosine_distance");
  Tensor::require_same_shape(a.value(), b.value(), "cosine_distance");
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  double xy = 0.0, xx = 0.0, yy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xy += x[i] * y[i];
    xx += x[i] * x[i];
    yy += y[i] * y[i];
  }
  if (xx == 0.0 || yy == 0.0) throw Error("cosine_distance: zero-norm vector");
  const double nx = std::sqrt(xx), ny = std::sqrt(yy);
  const double sim = xy / (nx * ny);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(Tensor::scalar(1.0 - sim), {a, b}, [ia, ib, nx, ny, sim](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(ia);
    const Tensor& yv = tp.value(ib);
    const double gs = -g[0];
    if (tp.requires_grad(ia)) {
      Tensor& gx = tp.grad(ia);
      for (std::size_t i = 0; i < xv.size(); ++i)
        gx[i] += gs * (yv[i] / (nx * ny) - sim * xv[i] / (nx * nx));
    }
    if (tp.requires_grad(ib)) {
      Tensor& gy = tp.grad(ib);
      for (std::size_t i = 0; i < yv.size(); ++i)
        gy[i] += gs * (xv[i] / (nx * ny) - sim * yv[i] / (ny * ny));
    }
  }, "cosine_distance");
}

// ---------------------------------------------------------------------------
// Structural

/// Concatenation of vectors.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat: empty input");
  Tape& t = detail::tape_of(parts[0]);
  std::vector<double> data;
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (id, offset)
  for (const Var& p : parts) {
    if (p.tape() != &t) throw Error("concat: operands recorded on different tapes");
    detail::require_rank(p, 1, "concat");
    spans.emplace_back(p.id(), data.size());
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  }
  return t.record(Tensor::vector(std::move(data)), parts, [spans = std::move(spans)](Tape& tp, const Tensor& g) {
    for (auto [id, off] : spans) {
      if (!tp.requires_grad(id)) continue;
      Tensor& gp = tp.grad(id);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
    }
  }, "concat");
}

inline Var concat(const Var& a, const Var& b) {
  const Var parts[] = {a, b};
  return concat(std::span<const Var>(parts));
}

/// [A | B] for matrices with equal row counts.
inline Var concat_cols(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_rank(a, 2, "concat_cols");
  detail::require_rank(b, 2, "concat_cols");
  const std::size_t m = a.value().rows(), p = a.value().cols(), q = b.value().cols();
  if (b.value().rows() != m)
    throw Error("concat_cols: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out(Shape{m, p + q});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) out.at(i, j) = a.value().at(i, j);
    for (std::size_t j = 0; j < q; ++j) out.at(i, p + j) = b.value().at(i, j);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib, m, p, q](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(ia)) {
      Tensor& ga = tp.grad(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) ga.at(i, j) += g.at(i, j);
    }
    if (tp.requires_grad(ib)) {
      Tensor& gb = tp.grad(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < q; ++j) gb.at(i, j) += g.at(i, p + j);
    }
  }, "concat_cols");
}

/// Row `r` of a matrix as a vector.
inline Var row(const Var& a, std::size_t r) {
  Tape& t = detail::tape_of(a);
  detail::require_rank(a, 2, "row");
  if (r >= a.value().rows()) throw Error("row: index " + std::to_string(r) + " out of range for " + shape_str(a.shape()));
  auto src = a.value().row(r);
  const std::size_t ia = a.id();
  return t.record(Tensor::vector(std::vector<double>(src.begin(), src.end())), {a}, [ia, r](Tape& tp, const Tensor& g) {
    auto dst = tp.grad(ia).row(r);
    for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
  }, "row");
}

/// Selected rows of a matrix (embedding lookup).
inline Var gather_rows(const Var& table, std::vector<std::size_t> ids) {
  Tape& t = detail::tape_of(table);
  detail::require_rank(table, 2, "gather_rows");
  if (ids.empty()) throw Error("gather_rows: empty index list");
  const Tensor& T = table.value();
  const std::size_t n = T.cols();
  Tensor out(Shape{ids.size(), n});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= T.rows())
      throw Error("gather_rows: index " + std::to_string(ids[i]) + " out of range for " + shape_str(T.shape()));
    auto src = T.row(ids[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t it = table.id();
  return t.record(std::move(out), {table}, [it, ids = std::move(ids)](Tape& tp, const Tensor& g) {
    Tensor& gt = tp.grad(it);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto dst = gt.row(ids[i]);
      auto src = g.row(i);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }, "gather_rows");
}

/// Stacks equal-length vectors into the rows of a matrix.
inline Var stack_rows(std::span<const Var> rows_in) {
  if (rows_in.empty()) throw Error("stack_rows: empty input");
  Tape& t = detail::tape_of(rows_in[0]);
  const std::size_t n = rows_in[0].value().size();
  Tensor out(Shape{rows_in.size(), n});
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < rows_in.size(); ++i) {
    const Var& r = rows_in[i];
    if (r.tape() != &t) throw Error("stack_rows: operands recorded on different tapes");
    detail::require_rank(r, 1, "stack_rows");
    if (r.value().size() != n) throw Error("stack_rows: ragged rows " + shape_str(r.shape()));
    std::copy(r.value().data().begin(), r.value().data().end(), out.row(i).begin());
    ids.push_back(r.id());
  }
  return t.record(std::move(out), rows_in, [ids = std::move(ids)](Tape& tp, const Tensor& g) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!tp.requires_grad(ids[i])) continue;
      Tensor& gr = tp.grad(ids[i]);
      auto src = g.row(i);
      for (std::size_t j = 0; j < gr.size(); ++j) gr[j] += src[j];
    }
  }, "stack_rows");
}

/// Entry `i` of a vector as a scalar.
inline Var pick(const Var& a, std::size_t i) {
  Tape& t = detail::tape_of(a);
  detail::require_rank(a, 1, "pick");
  if (i >= a.value().size()) throw Error("pick: index out of range");
  const std::size_t ia = a.id();
  return t.record(Tensor::scalar(a.value()[i]), {a}, [ia, i](Tape& tp, const Tensor& g) { tp.grad(ia)[i] += g[0]; },
                  "pick");
}

// ---------------------------------------------------------------------------
// Recurrent cell

/// GRU over the rows of X (T x I), starting from a zero state. Returns all
/// hidden states (T x H); row t is the state after consuming position t.
/// With `reverse`, positions are consumed from T-1 down to 0.
///
///   z = sigmoid(Wz x + Uz h + bz)      r = sigmoid(Wr x + Ur h + br)
///   n = tanh(Wn x + Un (r * h) + bn)   h' = (1 - z) * n + z * h
///
/// W is (3H x I), U is (3H x H), b is (3H); gate blocks ordered [z; r; n].
inline Var gru_sequence(const Var& x, const Var& w, const Var& u, const Var& b, bool reverse = false) {
  Tape& t = detail::tape_of(x, w);
  detail::tape_of(u, b);
  detail::require_rank(x, 2, "gru_sequence");
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& U = u.value();
  const Tensor& B = b.value();
  const std::size_t T = X.rows(), I = X.cols();
  if (W.rank() != 2 || W.rows() % 3 != 0 || W.cols() != I)
    throw Error("gru_sequence: input weight shape " + shape_str(W.shape()) + " incompatible with input " + shape_str(X.shape()));
  const std::size_t H = W.rows() / 3;
  if (U.rank() != 2 || U.rows() != 3 * H || U.cols() != H)
    throw Error("gru_sequence: recurrent weight shape " + shape_str(U.shape()) + " expected [" + std::to_string(3 * H) + "x" + std::to_string(H) + "]");
  if (B.rank() != 1 || B.size() != 3 * H) throw Error("gru_sequence: bias shape " + shape_str(B.shape()));

  // Cache per step: z, r, n, h_prev (each H) in step order.
  auto cache = std::make_shared<std::vector<double>>(T * 4 * H);
  Tensor out(Shape{T, H});
  std::vector<double> h(H, 0.0), a(3 * H), rh(H);
  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t pos = reverse ? T - 1 - s : s;
    auto xr = X.row(pos);
    for (std::size_t k = 0; k < 3 * H; ++k) a[k] = B[k] + detail::dot_n(&W.data()[k * I], xr.data(), I);
    double* c = &(*cache)[s * 4 * H];
    double* cz = c;
    double* cr = c + H;
    double* cn = c + 2 * H;
    double* ch = c + 3 * H;
    for (std::size_t k = 0; k < 2 * H; ++k) a[k] += detail::dot_n(&U.data()[k * H], h.data(), H);
    for (std::size_t k = 0; k < H; ++k) {
      cz[k] = detail::sigmoid(a[k]);
      cr[k] = detail::sigmoid(a[H + k]);
      rh[k] = cr[k] * h[k];
      ch[k] = h[k];
    }
    for (std::size_t k = 0; k < H; ++k)
      cn[k] = std::tanh(a[2 * H + k] + detail::dot_n(&U.data()[(2 * H + k) * H], rh.data(), H));
    for (std::size_t k = 0; k < H; ++k) h[k] = (1.0 - cz[k]) * cn[k] + cz[k] * h[k];
    std::copy(h.begin(), h.end(), out.row(pos).begin());
  }

  const std::size_t ix = x.id(), iw = w.id(), iu = u.id(), ib = b.id();
  return t.record(std::move(out), {x, w, u, b}, [=](Tape& tp, const Tensor& g) {
    const Tensor& Xv = tp.value(ix);
    const Tensor& Wv = tp.value(iw);
    const Tensor& Uv = tp.value(iu);
    const bool gx_on = tp.requires_grad(ix), gw_on = tp.requires_grad(iw), gu_on = tp.requires_grad(iu),
               gb_on = tp.requires_grad(ib);
    Tensor* gX = gx_on ? &tp.grad(ix) : nullptr;
    Tensor* gW = gw_on ? &tp.grad(iw) : nullptr;
    Tensor* gU = gu_on ? &tp.grad(iu) : nullptr;
    Tensor* gB = gb_on ? &tp.grad(ib) : nullptr;
    std::vector<double> dh(H, 0.0), da(3 * H), drh(H), dh_prev(H), rhv(H);
    for (std::size_t s = T; s-- > 0;) {
      const std::size_t pos = reverse ? T - 1 - s : s;
      const double* c = &(*cache)[s * 4 * H];
      const double* cz = c;
      const double* cr = c + H;
      const double* cn = c + 2 * H;
      const double* hp = c + 3 * H;
      auto gr = g.row(pos);
      for (std::size_t k = 0; k < H; ++k) dh[k] += gr[k];
      for (std::size_t k = 0; k < H; ++k) {
        const double dn = dh[k] * (1.0 - cz[k]);
        const double dz = dh[k] * (hp[k] - cn[k]);
        dh_prev[k] = dh[k] * cz[k];
        da[2 * H + k] = dn * (1.0 - cn[k] * cn[k]);
        da[k] = dz * cz[k] * (1.0 - cz[k]);
        rhv[k] = cr[k] * hp[k];
      }
      // d(r*h) = Un^T da_n
      std::fill(drh.begin(), drh.end(), 0.0);
      for (std::size_t k = 0; k < H; ++k) {
        const double dak = da[2 * H + k];
        const double* ur = &Uv.data()[(2 * H + k) * H];
        for (std::size_t j = 0; j < H; ++j) drh[j] += ur[j] * dak;
      }
      for (std::size_t k = 0; k < H; ++k) {
        const double dr = drh[k] * hp[k];
        dh_prev[k] += drh[k] * cr[k];
        da[H + k] = dr * cr[k] * (1.0 - cr[k]);
      }
      // dh_prev += Uz^T da_z + Ur^T da_r
      for (std::size_t k = 0; k < 2 * H; ++k) {
        const double dak = da[k];
        const double* ur = &Uv.data()[k * H];
        for (std::size_t j = 0; j < H; ++j) dh_prev[j] += ur[j] * dak;
      }
      auto xr = Xv.row(pos);
      if (gX) {
        auto gxr = gX->row(pos);
        for (std::size_t k = 0; k < 3 * H; ++k) {
          const double dak = da[k];
          const double* wr = &Wv.data()[k * I];
          for (std::size_t j = 0; j < I; ++j) gxr[j] += wr[j] * dak;
        }
      }
      if (gW)
        for (std::size_t k = 0; k < 3 * H; ++k) {
          double* gwr = &gW->data()[k * I];
          for (std::size_t j = 0; j < I; ++j) gwr[j] += da[k] * xr[j];
        }
      if (gU) {
        for (std::size_t k = 0; k < 2 * H; ++k) {
          double* gur = &gU->data()[k * H];
          for (std::size_t j = 0; j < H; ++j) gur[j] += da[k] * hp[j];
        }
        for (std::size_t k = 0; k < H; ++k) {
          double* gur = &gU->data()[(2 * H + k) * H];
          for (std::size_t j = 0; j < H; ++j) gur[j] += da[2 * H + k] * rhv[j];
        }
      }
      if (gB)
        for (std::size_t k = 0; k < 3 * H; ++k) (*gB)[k] += da[k];
      dh.swap(dh_prev);
    }
  }, "gru_sequence");
}

}  // namespace numscl
