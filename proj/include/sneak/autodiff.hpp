#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "sneak/matrix.hpp"

namespace sneak {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  const Matrix& grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t index() const { return index_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}
  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

/// Single-use record of matrix operations for reverse-mode differentiation.
///
/// A tape is built by one forward evaluation, consumed by one backward pass, and
/// then discarded. Nodes that do not depend on any differentiable leaf carry no
/// backward rule and never receive gradient.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }
  Var variable(Matrix value) { return push(std::move(value), true, nullptr); }

  /// Record an operation. `backward` receives d(output)/d(loss) and must call
  /// accumulate() for each differentiable input.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (const Var& v : inputs) {
      assert(v.tape_ == this);
      needs = needs || nodes_[v.index_].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
  }

  void accumulate(Var target, const Matrix& contribution) {
    Node& n = nodes_[target.index_];
    if (!n.requires_grad) return;
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix::zeros_like(n.value);
    n.grad += contribution;
  }

  /// Seed d(output)/d(output) = 1 and propagate in reverse recording order.
  void backward(Var output) {
    if (output.value().rows() != 1 || output.value().cols() != 1) {
      throw ShapeError("backward: output must be 1x1, got " + output.value().shape_string());
    }
    visited_.clear();
    Node& out = nodes_[output.index_];
    if (!out.requires_grad) return;
    out.grad = Matrix(1, 1, 1.0);
    for (std::size_t i = output.index_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      visited_.push_back(i);
      const Matrix g = n.grad;
      n.backward(*this, g);
    }
  }

  const Matrix& value(std::size_t i) const { return nodes_[i].value; }
  const Matrix& grad(std::size_t i) const {
    const Node& n = nodes_[i];
    if (n.grad.empty()) {
      if (n.zero.empty() && !n.value.empty()) n.zero = Matrix::zeros_like(n.value);
      return n.zero;
    }
    return n.grad;
  }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Operation indices visited by the most recent backward(), in visit order.
  const std::vector<std::size_t>& backward_visits() const { return visited_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    mutable Matrix zero;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix{}, Matrix{}, requires_grad, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> visited_;
};

inline const Matrix& Var::value() const { return tape_->value(index_); }
inline const Matrix& Var::grad() const { return tape_->grad(index_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(index_); }

// ---------------------------------------------------------------------------
// Differentiable operations. Each mirrors a plain Matrix function and records
// its backward rule on the operands' tape.
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  return t.record(matmul(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (a.requires_grad()) tp.accumulate(a, matmul_nt(g, b.value()));
    if (b.requires_grad()) tp.accumulate(b, matmul_tn(a.value(), g));
  });
}

inline Var add(Var a, Var b) {
  a.value().require_same_shape(b.value(), "add");
  return a.tape().record(a.value() + b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  a.value().require_same_shape(b.value(), "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (b.requires_grad()) tp.accumulate(b, g * -1.0);
  });
}

inline Var scale(Var a, Real s) {
  return a.tape().record(a.value() * s, {a}, [a, s](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g * s);
  });
}

inline Var hadamard(Var a, Var b) {
  return a.tape().record(hadamard(a.value(), b.value()), {a, b}, [a, b](Tape& tp, const Matrix& g) {
    if (a.requires_grad()) tp.accumulate(a, hadamard(g, b.value()));
    if (b.requires_grad()) tp.accumulate(b, hadamard(g, a.value()));
  });
}

/// Multiply every row of `a` (n x c) elementwise by `row` (1 x c).
inline Var hadamard_row(Var a, Var row) {
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("hadamard_row: " + av.shape_string() + " with " + rv.shape_string());
  }
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] *= rv[j];
  }
  return a.tape().record(std::move(out), {a, row}, [a, row](Tape& tp, const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& rv = row.value();
    if (a.requires_grad()) {
      Matrix ga = g;
      for (std::size_t i = 0; i < ga.rows(); ++i) {
        auto r = ga.row(i);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] *= rv[j];
      }
      tp.accumulate(a, ga);
    }
    if (row.requires_grad()) {
      Matrix gr(1, rv.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j) * av(i, j);
      tp.accumulate(row, gr);
    }
  });
}

/// Add `row` (1 x c) to every row of `a` (n x c).
inline Var add_row(Var a, Var row) {
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("add_row: " + av.shape_string() + " with " + rv.shape_string());
  }
  Matrix out = av;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += rv[j];
  }
  return a.tape().record(std::move(out), {a, row}, [a, row](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (row.requires_grad()) {
      Matrix gr(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
      tp.accumulate(row, gr);
    }
  });
}

inline Var tanh(Var a) {
  Matrix out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  Matrix saved = out;
  return a.tape().record(std::move(out), {a}, [a, y = std::move(saved)](Tape& tp, const Matrix& g) {
    Matrix ga = g;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= 1.0 - y[i] * y[i];
    tp.accumulate(a, ga);
  });
}

inline Var transpose(Var a) {
  return a.tape().record(transpose(a.value()), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, transpose(g));
  });
}

/// Column means: (n x c) -> (1 x c).
inline Var mean_rows(Var a) {
  const Matrix& av = a.value();
  if (av.rows() == 0) throw ShapeError("mean_rows: empty input");
  Matrix out(1, av.cols());
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out[j] += av(i, j);
  const Real inv = 1.0 / static_cast<Real>(av.rows());
  out *= inv;
  return a.tape().record(std::move(out), {a}, [a, inv](Tape& tp, const Matrix& g) {
    Matrix ga(a.rows(), a.cols());
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) = g[j] * inv;
    tp.accumulate(a, ga);
  });
}

/// Select rows of `table` by index (embedding lookup). Repeated indices accumulate.
inline Var gather_rows(Var table, std::vector<std::size_t> indices) {
  const Matrix& tv = table.value();
  Matrix out(indices.size(), tv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= tv.rows()) {
      throw IndexError("gather_rows: index " + std::to_string(indices[i]) + " outside table of " +
                       std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.row(indices[i]).begin(), tv.cols(), out.row(i).begin());
  }
  return table.tape().record(std::move(out), {table},
                             [table, idx = std::move(indices)](Tape& tp, const Matrix& g) {
                               Matrix gt = Matrix::zeros_like(table.value());
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 auto dst = gt.row(idx[i]);
                                 auto src = g.row(i);
                                 for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
                               }
                               tp.accumulate(table, gt);
                             });
}

/// Row i of the result concatenates rows i-radius .. i+radius of `a` (zero padded),
/// giving an n x ((2 radius + 1) c) context matrix.
inline Matrix unfold_rows(const Matrix& a, std::size_t radius) {
  const std::size_t n = a.rows(), c = a.cols(), w = 2 * radius + 1;
  Matrix out(n, w * c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < w; ++k) {
      if (i + k < radius || i + k - radius >= n) continue;
      auto src = a.row(i + k - radius);
      std::copy(src.begin(), src.end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(k * c));
    }
  }
  return out;
}

inline Var unfold_rows(Var a, std::size_t radius) {
  if (radius == 0) return a;
  return a.tape().record(unfold_rows(a.value(), radius), {a}, [a, radius](Tape& tp, const Matrix& g) {
    const std::size_t n = a.rows(), c = a.cols(), w = 2 * radius + 1;
    Matrix ga(n, c);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < w; ++k) {
        if (i + k < radius || i + k - radius >= n) continue;
        auto dst = ga.row(i + k - radius);
        for (std::size_t j = 0; j < c; ++j) dst[j] += g(i, k * c + j);
      }
    }
    tp.accumulate(a, ga);
  });
}

inline Var softmax_rows(Var x) {
  Matrix p = softmax_rows(x.value());
  Matrix saved = p;
  return x.tape().record(std::move(p), {x}, [x, p = std::move(saved)](Tape& tp, const Matrix& g) {
    Matrix gx(p.rows(), p.cols());
    for (std::size_t r = 0; r < p.rows(); ++r) {
      Real dot = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) dot += g(r, c) * p(r, c);
      for (std::size_t c = 0; c < p.cols(); ++c) gx(r, c) = p(r, c) * (g(r, c) - dot);
    }
    tp.accumulate(x, gx);
  });
}

/// -log max(p[label], floor) for a 1 x n distribution. Zero gradient below the floor.
inline Var cross_entropy(Var probs, std::size_t label) {
  const Matrix& pv = probs.value();
  if (pv.rows() != 1) throw ShapeError("cross_entropy: expected 1xn, got " + pv.shape_string());
  const Real loss = cross_entropy(pv.values(), label);
  return probs.tape().record(Matrix(1, 1, loss), {probs}, [probs, label](Tape& tp, const Matrix& g) {
    const Real p = probs.value()[label];
    Matrix gp = Matrix::zeros_like(probs.value());
    if (p >= kProbabilityFloor) gp[label] = -g[0] / p;
    tp.accumulate(probs, gp);
  });
}

inline Var sum(Var a) {
  return a.tape().record(Matrix(1, 1, sum(a.value())), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, Matrix(a.rows(), a.cols(), g[0]));
  });
}

inline Var squared_norm(Var a) {
  return a.tape().record(Matrix(1, 1, squared_norm(a.value())), {a}, [a](Tape& tp, const Matrix& g) {
    tp.accumulate(a, a.value() * (2.0 * g[0]));
  });
}

/// Mean squared error over all entries against a constant target.
inline Var mse(Var a, const Matrix& target) {
  a.value().require_same_shape(target, "mse");
  Matrix diff = a.value() - target;
  const Real inv = 1.0 / static_cast<Real>(diff.size());
  const Real loss = squared_norm(diff) * inv;
  return a.tape().record(Matrix(1, 1, loss), {a}, [a, diff = std::move(diff), inv](Tape& tp, const Matrix& g) {
    tp.accumulate(a, diff * (2.0 * inv * g[0]));
  });
}

}  // namespace sneak
