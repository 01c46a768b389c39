#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ntt/tensor.hpp"

namespace ntt {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Named parameters with stable addresses, iterated in name order. The name
/// order is the canonical order for optimizer updates and checkpoints.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter& add(const std::string& name, Tensor value) {
    if (!value.all_finite()) throw Error("parameter '" + name + "': non-finite initial value");
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw Error("parameter '" + name + "' already exists");
    it->second.name = name;
    it->second.grad = Tensor::zeros_like(value);
    it->second.value = std::move(value);
    return it->second;
  }

  Parameter& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("unknown parameter '" + name + "'");
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.contains(name); }

  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.fill(0.0);
  }

  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& [_, p] : params_) fn(p);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [_, p] : params_) fn(p);
  }

 private:
  std::map<std::string, Parameter> params_;
};

enum class Op {
  Leaf,
  MatVec,
  MatVecT,
  MatMulNT,
  Add,
  AddRows,
  Mul,
  Scale,
  Concat,
  Slice,
  Row,
  Sigmoid,
  Tanh,
  Relu,
  Softmax,
  MeanRows,
  Dropout,
  NllPick,
  Sum,
};

inline std::string_view op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatVec: return "matvec";
    case Op::MatVecT: return "matvec_t";
    case Op::MatMulNT: return "matmul_nt";
    case Op::Add: return "add";
    case Op::AddRows: return "add_rows";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Row: return "row";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Relu: return "relu";
    case Op::Softmax: return "softmax";
    case Op::MeanRows: return "mean_rows";
    case Op::Dropout: return "dropout";
    case Op::NllPick: return "nll_pick";
    case Op::Sum: return "sum";
  }
  return "?";
}

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records primitives in execution order; backward() replays adjoints in
/// exact reverse order. Not thread-safe: one tape per thread.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  /// Probability floor used by nll_pick.
  static constexpr double kProbFloor = 1e-12;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    if (!value.all_finite()) throw Error("constant: non-finite value");
    Node n;
    n.op = Op::Leaf;
    n.own = std::move(value);
    return push(std::move(n));
  }

  /// Leaf bound to a parameter; the value is referenced, not copied.
  /// Repeated calls for the same parameter return the same node.
  Var param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    if (!p.value.all_finite()) throw Error("parameter '" + p.name + "': non-finite value");
    Node n;
    n.op = Op::Leaf;
    n.ref = &p.value;
    n.param = &p;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  Var record(Op op, Tensor value, Backward backward) {
    if (!value.all_finite()) throw Error(std::string(op_name(op)) + ": produced non-finite output");
    Node n;
    n.op = op;
    n.own = std::move(value);
    n.backward = std::move(backward);
    return push(std::move(n));
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.own;
  }

  /// Adjoint buffer, allocated on first touch.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor::zeros_like(value(id));
    return n.grad;
  }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  std::size_t size() const { return nodes_.size(); }
  Op op(std::size_t id) const { return nodes_[id].op; }

  /// Number of nll_pick evaluations whose probability hit the floor.
  std::size_t clamp_count() const { return clamp_count_; }
  void note_clamp() { ++clamp_count_; }

  /// Reverse sweep from a scalar output; accumulates into Parameter::grad.
  void backward(Var output) {
    if (&output.tape() != this) throw Error("backward: output belongs to another tape");
    if (output.value().size() != 1) {
      throw Error("backward: output must be scalar, got shape " + shape_str(output.shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor();
    grad(output.id())[0] = 1.0;
    for (std::size_t i = output.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        auto dst = n.param->grad.data();
        auto src = n.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

 private:
  struct Node {
    Op op = Op::Leaf;
    Tensor own;
    const Tensor* ref = nullptr;
    Parameter* param = nullptr;
    Tensor grad;
    Backward backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  std::size_t clamp_count_ = 0;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

/// Backpropagates a scalar output into every Parameter reached on its tape.
inline void backprop(Tape& tape, Var output) { tape.backward(output); }

namespace detail {

[[noreturn]] inline void shape_error(Op op, std::initializer_list<Shape> shapes) {
  std::string msg = std::string(op_name(op)) + ": incompatible shapes";
  for (const auto& s : shapes) msg += " " + shape_str(s);
  throw Error(msg);
}

inline Tape& same_tape(Op op, std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw Error(std::string(op_name(op)) + ": invalid operand");
    if (t && &v.tape() != t) throw Error(std::string(op_name(op)) + ": operands on different tapes");
    t = &v.tape();
  }
  return *t;
}

template <typename Fn>
Var unary(Op op, Var x, Fn f, std::function<double(double y, double x)> dfdx) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id();
  return t.record(op, std::move(out), [xi, dfdx](Tape& tp, std::size_t self) {
    const Tensor& y = tp.value(self);
    const Tensor& xv2 = tp.value(xi);
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(y[i], xv2[i]);
  });
}

}  // namespace detail

/// A[m,n] · x[n] -> [m]
inline Var matvec(Var a, Var x) {
  Tape& t = detail::same_tape(Op::MatVec, {a, x});
  const Tensor& A = a.value();
  const Tensor& X = x.value();
  if (A.rank() != 2 || X.rank() != 1 || A.cols() != X.size()) detail::shape_error(Op::MatVec, {A.shape(), X.shape()});
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    const double* row = A.data().data() + r * n;
    for (std::size_t c = 0; c < n; ++c) s += row[c] * X[c];
    out[r] = s;
  }
  const std::size_t ai = a.id(), xi = x.id();
  return t.record(Op::MatVec, std::move(out), [ai, xi, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& A2 = tp.value(ai);
    const Tensor& X2 = tp.value(xi);
    Tensor& gA = tp.grad(ai);
    for (std::size_t r = 0; r < m; ++r) {
      const double gr = g[r];
      if (gr == 0.0) continue;
      double* grow = gA.data().data() + r * n;
      for (std::size_t c = 0; c < n; ++c) grow[c] += gr * X2[c];
    }
    Tensor& gX = tp.grad(xi);
    for (std::size_t r = 0; r < m; ++r) {
      const double gr = g[r];
      if (gr == 0.0) continue;
      const double* row = A2.data().data() + r * n;
      for (std::size_t c = 0; c < n; ++c) gX[c] += gr * row[c];
    }
  });
}

/// A[m,n]ᵀ · x[m] -> [n]
inline Var matvec_t(Var a, Var x) {
  Tape& t = detail::same_tape(Op::MatVecT, {a, x});
  const Tensor& A = a.value();
  const Tensor& X = x.value();
  if (A.rank() != 2 || X.rank() != 1 || A.rows() != X.size()) detail::shape_error(Op::MatVecT, {A.shape(), X.shape()});
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({n});
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[c] += A.at(r, c) * X[r];
  }
  const std::size_t ai = a.id(), xi = x.id();
  return t.record(Op::MatVecT, std::move(out), [ai, xi, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& A2 = tp.value(ai);
    const Tensor& X2 = tp.value(xi);
    Tensor& gA = tp.grad(ai);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) gA.at(r, c) += X2[r] * g[c];
    }
    Tensor& gX = tp.grad(xi);
    for (std::size_t r = 0; r < m; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += A2.at(r, c) * g[c];
      gX[r] += s;
    }
  });
}

/// A[m,k] · B[n,k]ᵀ -> [m,n]
inline Var matmul_nt(Var a, Var b) {
  Tape& t = detail::same_tape(Op::MatMulNT, {a, b});
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) detail::shape_error(Op::MatMulNT, {A.shape(), B.shape()});
  const std::size_t m = A.rows(), n = B.rows(), k = A.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += A.at(i, l) * B.at(j, l);
      out.at(i, j) = s;
    }
  }
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(Op::MatMulNT, std::move(out), [ai, bi, m, n, k](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& A2 = tp.value(ai);
    const Tensor& B2 = tp.value(bi);
    Tensor& gA = tp.grad(ai);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double gij = g.at(i, j);
        for (std::size_t l = 0; l < k; ++l) gA.at(i, l) += gij * B2.at(j, l);
      }
    }
    Tensor& gB = tp.grad(bi);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double gij = g.at(i, j);
        for (std::size_t l = 0; l < k; ++l) gB.at(j, l) += gij * A2.at(i, l);
      }
    }
  });
}

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(Op::Add, {a, b});
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) detail::shape_error(Op::Add, {A.shape(), B.shape()});
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(Op::Add, std::move(out), [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    for (std::size_t id : {ai, bi}) {
      Tensor& gi = tp.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

/// Left-to-right element-wise sum of several operands.
inline Var add(std::initializer_list<Var> terms) {
  if (terms.size() == 0) throw Error("add: no operands");
  auto it = terms.begin();
  Var acc = *it++;
  for (; it != terms.end(); ++it) acc = add(acc, *it);
  return acc;
}

/// M[m,n] + v[n] broadcast over rows.
inline Var add_rows(Var m, Var v) {
  Tape& t = detail::same_tape(Op::AddRows, {m, v});
  const Tensor& M = m.value();
  const Tensor& V = v.value();
  if (M.rank() != 2 || V.rank() != 1 || M.cols() != V.size()) detail::shape_error(Op::AddRows, {M.shape(), V.shape()});
  Tensor out = M;
  for (std::size_t r = 0; r < M.rows(); ++r) {
    for (std::size_t c = 0; c < M.cols(); ++c) out.at(r, c) += V[c];
  }
  const std::size_t mi = m.id(), vi = v.id();
  return t.record(Op::AddRows, std::move(out), [mi, vi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gM = tp.grad(mi);
    for (std::size_t i = 0; i < g.size(); ++i) gM[i] += g[i];
    Tensor& gV = tp.grad(vi);
    const std::size_t cols = gV.size();
    for (std::size_t i = 0; i < g.size(); ++i) gV[i % cols] += g[i];
  });
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(Op::Mul, {a, b});
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.shape() != B.shape()) detail::shape_error(Op::Mul, {A.shape(), B.shape()});
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  const std::size_t ai = a.id(), bi = b.id();
  return t.record(Op::Mul, std::move(out), [ai, bi](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& A2 = tp.value(ai);
    const Tensor& B2 = tp.value(bi);
    Tensor& gA = tp.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i] * B2[i];
    Tensor& gB = tp.grad(bi);
    for (std::size_t i = 0; i < g.size(); ++i) gB[i] += g[i] * A2[i];
  });
}

inline Var scale(Var a, double k) {
  Tape& t = a.tape();
  if (!std::isfinite(k)) throw Error("scale: non-finite factor");
  const Tensor& A = a.value();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * k;
  const std::size_t ai = a.id();
  return t.record(Op::Scale, std::move(out), [ai, k](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gA = tp.grad(ai);
    for (std::size_t i = 0; i < g.size(); ++i) gA[i] += g[i] * k;
  });
}

/// Concatenation along the last axis; leading dimensions must agree.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat: no operands");
  Tape& t = parts.front().tape();
  const Shape& first = parts.front().shape();
  const std::size_t rows = parts.front().value().rows();
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (&p.tape() != &t) throw Error("concat: operands on different tapes");
    const Shape& s = p.shape();
    if (s.size() != first.size() || (s.size() == 2 && s[0] != first[0]) || s.size() > 2) {
      std::string msg = "concat: incompatible shapes";
      for (const Var& q : parts) msg += " " + shape_str(q.shape());
      throw Error(msg);
    }
    total += s.back();
  }
  Shape out_shape = first;
  out_shape.back() = total;
  Tensor out(out_shape);
  std::vector<std::size_t> ids, widths;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    const std::size_t w = v.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) out[r * total + offset + c] = v[r * w + c];
    }
    ids.push_back(p.id());
    widths.push_back(w);
    offset += w;
  }
  return t.record(Op::Concat, std::move(out), [ids, widths, rows, total](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      Tensor& gk = tp.grad(ids[k]);
      const std::size_t w = widths[k];
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < w; ++c) gk[r * w + c] += g[r * total + off + c];
      }
      off += w;
    }
  });
}

/// v[offset : offset+len] of a vector.
inline Var slice(Var v, std::size_t offset, std::size_t len) {
  Tape& t = v.tape();
  const Tensor& V = v.value();
  if (V.rank() != 1 || len == 0 || offset + len > V.size()) {
    throw Error("slice: range [" + std::to_string(offset) + ", " + std::to_string(offset + len) +
                ") out of bounds for shape " + shape_str(V.shape()));
  }
  std::vector<double> data(V.data().begin() + offset, V.data().begin() + offset + len);
  const std::size_t vi = v.id();
  return t.record(Op::Slice, Tensor::vector(std::move(data)), [vi, offset](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gv = tp.grad(vi);
    for (std::size_t i = 0; i < g.size(); ++i) gv[offset + i] += g[i];
  });
}

/// Row r of a matrix as a vector.
inline Var row(Var m, std::size_t r) {
  Tape& t = m.tape();
  const Tensor& M = m.value();
  if (M.rank() != 2 || r >= M.rows()) {
    throw Error("row: index " + std::to_string(r) + " out of bounds for shape " + shape_str(M.shape()));
  }
  auto src = M.row(r);
  const std::size_t mi = m.id(), cols = M.cols();
  return t.record(Op::Row, Tensor::vector({src.begin(), src.end()}), [mi, r, cols](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gm = tp.grad(mi);
    for (std::size_t c = 0; c < cols; ++c) gm[r * cols + c] += g[c];
  });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var x) {
  return detail::unary(Op::Sigmoid, x, sigmoid_scalar, [](double y, double) { return y * (1.0 - y); });
}

inline Var tanh(Var x) {
  return detail::unary(Op::Tanh, x, [](double v) { return std::tanh(v); }, [](double y, double) { return 1.0 - y * y; });
}

inline Var relu(Var x) {
  return detail::unary(Op::Relu, x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double, double xin) { return xin > 0.0 ? 1.0 : 0.0; });
}

/// Max-shifted softmax of a span, written into out.
inline void softmax_into(std::span<const double> in, std::span<double> out) {
  const double mx = *std::max_element(in.begin(), in.end());
  double z = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = std::exp(in[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
}

/// Softmax over the last axis.
inline Var softmax(Var x) {
  Tape& t = x.tape();
  const Tensor& X = x.value();
  if (X.rank() > 2) detail::shape_error(Op::Softmax, {X.shape()});
  Tensor out(X.shape());
  const std::size_t rows = X.rows(), cols = X.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_into(X.data().subspan(r * cols, cols), out.data().subspan(r * cols, cols));
  }
  const std::size_t xi = x.id();
  return t.record(Op::Softmax, std::move(out), [xi, rows, cols](Tape& tp, std::size_t self) {
    const Tensor& y = tp.value(self);
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t k = r * cols + c;
        gx[k] += y[k] * (g[k] - dot);
      }
    }
  });
}

/// Column-wise mean of a matrix -> vector of its column count.
inline Var mean_rows(Var m) {
  Tape& t = m.tape();
  const Tensor& M = m.value();
  if (M.rank() != 2) detail::shape_error(Op::MeanRows, {M.shape()});
  const std::size_t rows = M.rows(), cols = M.cols();
  Tensor out({cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += M.at(r, c);
  }
  for (std::size_t c = 0; c < cols; ++c) out[c] /= static_cast<double>(rows);
  const std::size_t mi = m.id();
  return t.record(Op::MeanRows, std::move(out), [mi, rows, cols](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gm = tp.grad(mi);
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gm[r * cols + c] += g[c] * inv;
    }
  });
}

/// x ⊙ mask with a constant mask (already scaled for inverted dropout).
inline Var dropout(Var x, const Tensor& mask) {
  Tape& t = x.tape();
  const Tensor& X = x.value();
  if (X.shape() != mask.shape()) detail::shape_error(Op::Dropout, {X.shape(), mask.shape()});
  Tensor out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = X[i] * mask[i];
  const std::size_t xi = x.id();
  return t.record(Op::Dropout, std::move(out), [xi, mask](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

/// −log p[index], with p clamped below at Tape::kProbFloor.
inline Var nll_pick(Var p, std::size_t index) {
  Tape& t = p.tape();
  const Tensor& P = p.value();
  if (P.rank() != 1 || index >= P.size()) {
    throw Error("nll_pick: index " + std::to_string(index) + " out of range for shape " + shape_str(P.shape()));
  }
  const bool clamped = P[index] < Tape::kProbFloor;
  if (clamped) t.note_clamp();
  const double pv = clamped ? Tape::kProbFloor : P[index];
  const std::size_t pi = p.id();
  return t.record(Op::NllPick, Tensor::scalar(-std::log(pv)), [pi, index, clamped](Tape& tp, std::size_t self) {
    if (clamped) return;
    const double g = tp.grad(self)[0];
    Tensor& gp = tp.grad(pi);
    gp[index] += -g / tp.value(pi)[index];
  });
}

inline Var sum(Var v) {
  Tape& t = v.tape();
  const Tensor& V = v.value();
  double s = 0.0;
  for (double x : V.data()) s += x;
  const std::size_t vi = v.id();
  return t.record(Op::Sum, Tensor::scalar(s), [vi](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    Tensor& gv = tp.grad(vi);
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g;
  });
}

}  // namespace ntt
