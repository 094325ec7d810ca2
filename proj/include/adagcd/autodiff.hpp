#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Tape records every operation applied to its Vars; Tape::backward walks the
// record in reverse and accumulates gradients. Parameters live outside the tape
// and receive gradients only when they are trainable and the tape has gradients
// enabled, so frozen weights never accumulate anything.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "adagcd/error.hpp"
#include "adagcd/matrix.hpp"

namespace adagcd {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  bool trainable = true;
  double lr_scale = 1.0;

  void zero_grad() { grad = Matrix(value.rows(), value.cols()); }
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  // Gradient after Tape::backward; a zero matrix when nothing flowed here.
  Matrix grad() const;
  double scalar() const { return value()[0]; }

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Matrix value) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, false, nullptr});
    return Var(this, nodes_.size() - 1);
  }

  // Leaf referring to externally owned storage. The parameter must outlive the tape.
  Var parameter(Parameter& p) {
    const bool rg = grad_enabled_ && p.trainable;
    Backward fn;
    if (rg) {
      Parameter* target = &p;
      fn = [target](Tape&, const Matrix& g) {
        if (target->grad.empty()) target->zero_grad();
        target->grad += g;
      };
    }
    nodes_.push_back(Node{Matrix{}, &p.value, {}, rg, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  Var record(Matrix value, bool requires_grad, Backward fn) {
    const bool rg = grad_enabled_ && requires_grad;
    nodes_.push_back(Node{std::move(value), nullptr, {}, rg, rg ? std::move(fn) : Backward{}});
    return Var(this, nodes_.size() - 1);
  }

  void backward(const Var& root) {
    if (root.tape() != this) throw ContractError("Tape::backward: foreign Var");
    const Matrix& rv = value(root.id());
    if (rv.size() != 1) throw ShapeError("Tape::backward: root must be scalar, got " + rv.shape_string());
    for (auto& n : nodes_) n.grad = Matrix{};
    if (!nodes_[root.id()].requires_grad) return;
    grad(root.id()) = Matrix(1, 1, 1.0);
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  const Matrix& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }

  // Gradient buffer for node `id`, zero-initialized on first access.
  Matrix& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) {
      const Matrix& v = value(id);
      n.grad = Matrix(v.rows(), v.cols());
    }
    return n.grad;
  }

  const Matrix* grad_if_any(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix owned;
    const Matrix* external;
    Matrix grad;
    bool requires_grad;
    Backward backward;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

inline const Matrix& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }
inline Matrix Var::grad() const {
  if (const Matrix* g = tape_->grad_if_any(id_)) return *g;
  return Matrix(rows(), cols());
}

namespace ad {

namespace detail {

inline Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ContractError("autodiff: uninitialized Var");
  return *a.tape();
}

inline Tape& tape_of(const Var& a, const Var& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw ContractError("autodiff: Vars from different tapes");
  return t;
}

inline void require_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace detail

inline Var constant(Tape& t, Matrix m) { return t.constant(std::move(m)); }

inline Var matmul(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  Matrix v = linalg::matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(v), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) linalg::gemm_nt_acc(g, t.value(ib), t.grad(ia));
    if (t.requires_grad(ib)) linalg::gemm_tn_acc(t.value(ia), g, t.grad(ib));
  });
}

// a·bᵀ
inline Var matmul_nt(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols())
    throw ShapeError("matmul_nt: " + av.shape_string() + " · (" + bv.shape_string() + ")ᵀ");
  Matrix v(av.rows(), bv.rows());
  linalg::gemm_nt_acc(av, bv, v);
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(v), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) linalg::gemm_nn_acc(g, t.value(ib), t.grad(ia));
    if (t.requires_grad(ib)) linalg::gemm_tn_acc(g, t.value(ia), t.grad(ib));
  });
}

inline Var add(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_shape(a.value(), b.value(), "add");
  Matrix v = a.value();
  v += b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(v), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) t.grad(ib) += g;
  });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_shape(a.value(), b.value(), "sub");
  Matrix v = a.value();
  v -= b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(v), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ib)) t.grad(ib) -= g;
  });
}

// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  Tape& t = detail::tape_of(a, b);
  detail::require_shape(a.value(), b.value(), "mul");
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(v), a.requires_grad() || b.requires_grad(), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) {
      Matrix& ga = t.grad(ia);
      const Matrix& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Matrix& gb = t.grad(ib);
      const Matrix& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

// a (n×c) + row (1×c) broadcast over rows.
inline Var add_row(const Var& a, const Var& row) {
  Tape& t = detail::tape_of(a, row);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols())
    throw ShapeError("add_row: " + av.shape_string() + " + " + rv.shape_string());
  Matrix v = av;
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) v(i, j) += rv[j];
  const std::size_t ia = a.id(), ir = row.id();
  return t.record(std::move(v), a.requires_grad() || row.requires_grad(), [ia, ir](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.grad(ia) += g;
    if (t.requires_grad(ir)) {
      Matrix& gr = t.grad(ir);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
    }
  });
}

// s·a + c
inline Var affine(const Var& a, double s, double c = 0.0) {
  Tape& t = detail::tape_of(a);
  Matrix v = a.value();
  for (double& x : v.data()) x = s * x + c;
  const std::size_t ia = a.id();
  return t.record(std::move(v), a.requires_grad(), [ia, s](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

inline Var scale(const Var& a, double s) { return affine(a, s, 0.0); }

inline Var add_const(const Var& a, const Matrix& c) {
  Tape& t = detail::tape_of(a);
  detail::require_shape(a.value(), c, "add_const");
  Matrix v = a.value();
  v += c;
  const std::size_t ia = a.id();
  return t.record(std::move(v), a.requires_grad(), [ia](Tape& t, const Matrix& g) { t.grad(ia) += g; });
}

namespace detail {

template <typename F, typename D>
Var unary(const Var& a, F f, D df_from_xy) {
  Tape& t = tape_of(a);
  Matrix v = a.value();
  for (double& x : v.data()) x = f(x);
  const std::size_t ia = a.id();
  const std::size_t out_id = t.size();
  return t.record(std::move(v), a.requires_grad(), [ia, out_id, df_from_xy](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(ia);
    const Matrix& x = t.value(ia);
    const Matrix& y = t.value(out_id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df_from_xy(x[i], y[i]);
  });
}

}  // namespace detail

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

// Exact (erf-based) GELU.
inline Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return detail::unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

// Softmax along each row.
inline Var softmax_rows(const Var& a) {
  Tape& t = detail::tape_of(a);
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.rows(); ++i) {
    auto r = v.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double& x : r) s += (x = std::exp(x - m));
    for (double& x : r) x /= s;
  }
  const std::size_t ia = a.id();
  const std::size_t out_id = t.size();
  return t.record(std::move(v), a.requires_grad(), [ia, out_id](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(out_id);
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double d = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) d += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - d);
    }
  });
}

// Softmax down each column.
inline Var softmax_cols(const Var& a) {
  Tape& t = detail::tape_of(a);
  Matrix v = a.value();
  const std::size_t R = v.rows(), C = v.cols();
  for (std::size_t j = 0; j < C; ++j) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < R; ++i) m = std::max(m, v(i, j));
    double s = 0.0;
    for (std::size_t i = 0; i < R; ++i) s += (v(i, j) = std::exp(v(i, j) - m));
    for (std::size_t i = 0; i < R; ++i) v(i, j) /= s;
  }
  const std::size_t ia = a.id();
  const std::size_t out_id = t.size();
  return t.record(std::move(v), a.requires_grad(), [ia, out_id](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(out_id);
    Matrix& ga = t.grad(ia);
    for (std::size_t j = 0; j < y.cols(); ++j) {
      double d = 0.0;
      for (std::size_t i = 0; i < y.rows(); ++i) d += g(i, j) * y(i, j);
      for (std::size_t i = 0; i < y.rows(); ++i) ga(i, j) += y(i, j) * (g(i, j) - d);
    }
  });
}

inline Var log_softmax_rows(const Var& a) {
  Tape& t = detail::tape_of(a);
  Matrix v = a.value();
  for (std::size_t i = 0; i < v.rows(); ++i) {
    auto r = v.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double x : r) s += std::exp(x - m);
    const double lse = m + std::log(s);
    for (double& x : r) x -= lse;
  }
  const std::size_t ia = a.id();
  const std::size_t out_id = t.size();
  return t.record(std::move(v), a.requires_grad(), [ia, out_id](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(out_id);
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) gs += g(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += g(i, j) - std::exp(y(i, j)) * gs;
    }
  });
}

// Row-wise layer normalization with affine gamma/beta (each 1×c).
inline Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  Tape& t = detail::tape_of(x, gamma);
  if (beta.tape() != &t) throw ContractError("layer_norm_rows: Vars from different tapes");
  const Matrix& xv = x.value();
  const std::size_t R = xv.rows(), C = xv.cols();
  if (gamma.value().cols() != C || beta.value().cols() != C)
    throw ShapeError("layer_norm_rows: affine width mismatch");
  Matrix xhat(R, C);
  std::vector<double> inv_std(R);
  Matrix v(R, C);
  for (std::size_t i = 0; i < R; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < C; ++j) mean += xv(i, j);
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t j = 0; j < C; ++j) var += (xv(i, j) - mean) * (xv(i, j) - mean);
    var /= static_cast<double>(C);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < C; ++j) {
      xhat(i, j) = (xv(i, j) - mean) * inv_std[i];
      v(i, j) = xhat(i, j) * gamma.value()[j] + beta.value()[j];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  return t.record(std::move(v), rg,
                  [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Matrix& g) {
                    const std::size_t R = g.rows(), C = g.cols();
                    const Matrix& gam = t.value(ig);
                    if (t.requires_grad(ig)) {
                      Matrix& gg = t.grad(ig);
                      for (std::size_t i = 0; i < R; ++i)
                        for (std::size_t j = 0; j < C; ++j) gg[j] += g(i, j) * xhat(i, j);
                    }
                    if (t.requires_grad(ib)) {
                      Matrix& gb = t.grad(ib);
                      for (std::size_t i = 0; i < R; ++i)
                        for (std::size_t j = 0; j < C; ++j) gb[j] += g(i, j);
                    }
                    if (t.requires_grad(ix)) {
                      Matrix& gx = t.grad(ix);
                      for (std::size_t i = 0; i < R; ++i) {
                        double s1 = 0.0, s2 = 0.0;
                        for (std::size_t j = 0; j < C; ++j) {
                          const double dh = g(i, j) * gam[j];
                          s1 += dh;
                          s2 += dh * xhat(i, j);
                        }
                        const double invC = 1.0 / static_cast<double>(C);
                        for (std::size_t j = 0; j < C; ++j) {
                          const double dh = g(i, j) * gam[j];
                          gx(i, j) += inv_std[i] * (dh - invC * s1 - xhat(i, j) * invC * s2);
                        }
                      }
                    }
                  });
}

// Each row divided by its sum. Rows must have positive sums.
inline Var div_by_row_sum(const Var& a) {
  Tape& t = detail::tape_of(a);
  Matrix v = a.value();
  std::vector<double> sums(v.rows());
  for (std::size_t i = 0; i < v.rows(); ++i) {
    double s = 0.0;
    for (double x : v.row(i)) s += x;
    if (!(s > 0.0)) throw NumericError("div_by_row_sum: non-positive row sum");
    sums[i] = s;
    for (double& x : v.row(i)) x /= s;
  }
  const std::size_t ia = a.id();
  const std::size_t out_id = t.size();
  return t.record(std::move(v), a.requires_grad(), [ia, out_id, sums = std::move(sums)](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(out_id);
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double d = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) d += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += (g(i, j) - d) / sums[i];
    }
  });
}

// Each row scaled to unit Euclidean norm. A zero row is a numeric error.
inline Var l2_normalize_rows(const Var& a) {
  Tape& t = detail::tape_of(a);
  Matrix v = a.value();
  std::vector<double> norms(v.rows());
  for (std::size_t i = 0; i < v.rows(); ++i) {
    const double n = linalg::norm(v.row(i));
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericError("l2_normalize_rows: zero or non-finite norm");
    norms[i] = n;
    for (double& x : v.row(i)) x /= n;
  }
  const std::size_t ia = a.id();
  const std::size_t out_id = t.size();
  return t.record(std::move(v), a.requires_grad(), [ia, out_id, norms = std::move(norms)](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(out_id);
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      const double d = linalg::dot(g.row(i), y.row(i));
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += (g(i, j) - y(i, j) * d) / norms[i];
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& t = detail::tape_of(parts.front());
  const std::size_t R = parts.front().rows();
  std::size_t C = 0;
  bool rg = false;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractError("concat_cols: Vars from different tapes");
    if (p.rows() != R) throw ShapeError("concat_cols: row count mismatch");
    C += p.cols();
    rg = rg || p.requires_grad();
    ids.push_back(p.id());
  }
  Matrix v(R, C);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) v(i, off + j) = pv(i, j);
    off += pv.cols();
  }
  return t.record(std::move(v), rg, [ids](Tape& t, const Matrix& g) {
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t c = t.value(id).cols();
      if (t.requires_grad(id)) {
        Matrix& gp = t.grad(id);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < c; ++j) gp(i, j) += g(i, off + j);
      }
      off += c;
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Tape& t = detail::tape_of(parts.front());
  const std::size_t C = parts.front().cols();
  std::size_t R = 0;
  bool rg = false;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw ContractError("concat_rows: Vars from different tapes");
    if (p.cols() != C) throw ShapeError("concat_rows: column count mismatch");
    R += p.rows();
    rg = rg || p.requires_grad();
    ids.push_back(p.id());
  }
  Matrix v(R, C);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const auto src = p.value().data();
    std::copy(src.begin(), src.end(), v.data().begin() + static_cast<std::ptrdiff_t>(off * C));
    off += p.rows();
  }
  return t.record(std::move(v), rg, [ids, C](Tape& t, const Matrix& g) {
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t r = t.value(id).rows();
      if (t.requires_grad(id)) {
        Matrix& gp = t.grad(id);
        for (std::size_t k = 0; k < r * C; ++k) gp[k] += g[off * C + k];
      }
      off += r;
    }
  });
}

inline Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  Tape& t = detail::tape_of(a);
  const Matrix& av = a.value();
  if (begin + count > av.rows()) throw ShapeError("slice_rows: out of range");
  const std::size_t C = av.cols();
  Matrix v(count, C, std::vector<double>(av.data().begin() + static_cast<std::ptrdiff_t>(begin * C),
                                         av.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * C)));
  const std::size_t ia = a.id();
  return t.record(std::move(v), a.requires_grad(), [ia, begin, C](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k) ga[begin * C + k] += g[k];
  });
}

inline Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  Tape& t = detail::tape_of(a);
  const Matrix& av = a.value();
  if (begin + count > av.cols()) throw ShapeError("slice_cols: out of range");
  Matrix v(av.rows(), count);
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) v(i, j) = av(i, begin + j);
  const std::size_t ia = a.id();
  return t.record(std::move(v), a.requires_grad(), [ia, begin](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, begin + j) += g(i, j);
  });
}

// Row k of `a` repeated `times` consecutively: output row k·times + n = a[k].
inline Var repeat_rows_each(const Var& a, std::size_t times) {
  Tape& t = detail::tape_of(a);
  const Matrix& av = a.value();
  const std::size_t K = av.rows(), C = av.cols();
  Matrix v(K * times, C);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t n = 0; n < times; ++n)
      for (std::size_t j = 0; j < C; ++j) v(k * times + n, j) = av(k, j);
  const std::size_t ia = a.id();
  return t.record(std::move(v), a.requires_grad(), [ia, times](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(ia);
    const std::size_t C = ga.cols();
    for (std::size_t k = 0; k < ga.rows(); ++k)
      for (std::size_t n = 0; n < times; ++n)
        for (std::size_t j = 0; j < C; ++j) ga(k, j) += g(k * times + n, j);
  });
}

// The whole of `a` stacked `times` times: output row k·rows(a) + n = a[n].
inline Var tile_rows(const Var& a, std::size_t times) {
  std::vector<Var> parts(times, a);
  return concat_rows(parts);
}

inline Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  Tape& t = detail::tape_of(a);
  Matrix v = a.value();
  v.reshape(rows, cols);
  const std::size_t ia = a.id();
  return t.record(std::move(v), a.requires_grad(), [ia](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(ia);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
  });
}

inline Var sum(const Var& a) {
  Tape& t = detail::tape_of(a);
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  const std::size_t ia = a.id();
  return t.record(Matrix(1, 1, s), a.requires_grad(), [ia](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(ia);
    for (double& x : ga.data()) x += g[0];
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

// Σ w ⊙ a for a constant weight matrix w.
inline Var weighted_sum(const Var& a, Matrix w) {
  Tape& t = detail::tape_of(a);
  detail::require_shape(a.value(), w, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w[i] != 0.0) s += w[i] * a.value()[i];
  const std::size_t ia = a.id();
  return t.record(Matrix(1, 1, s), a.requires_grad(), [ia, w = std::move(w)](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad(ia);
    for (std::size_t i = 0; i < w.size(); ++i) ga[i] += g[0] * w[i];
  });
}

// Mean over all elements of (a − b)².
inline Var mse(const Var& a, const Var& b) {
  const Var d = sub(a, b);
  return mean(mul(d, d));
}

// Forward value is `hard`; the gradient passes to `soft` unchanged (straight-through).
inline Var straight_through(const Var& soft, Matrix hard) {
  Tape& t = detail::tape_of(soft);
  detail::require_shape(soft.value(), hard, "straight_through");
  const std::size_t is = soft.id();
  return t.record(std::move(hard), soft.requires_grad(), [is](Tape& t, const Matrix& g) { t.grad(is) += g; });
}

// Softmax down the slot axis (rows) of K×N logits, excluding rows whose mask
// entry (K×1) is below 0.5. Excluded rows get exactly zero weight; their logits
// are treated as -1e9 before the softmax. The gradient w.r.t. the mask is the
// derivative of the equivalent renormalized form a_k m_k / Σ_j a_j m_j.
inline Var masked_softmax_cols(const Var& logits, const Var& mask) {
  Tape& t = detail::tape_of(logits, mask);
  const Matrix& lv = logits.value();
  const Matrix& mv = mask.value();
  const std::size_t K = lv.rows(), N = lv.cols();
  if (mv.rows() != K || mv.cols() != 1) throw ShapeError("masked_softmax_cols: mask must be K×1");
  std::vector<bool> kept(K);
  bool any = false;
  for (std::size_t k = 0; k < K; ++k) {
    kept[k] = mv[k] >= 0.5;
    any = any || kept[k];
  }
  if (!any) throw ContractError("masked_softmax_cols: every slot is masked");
  constexpr double masked_logit = -1e9;
  Matrix alpha(K, N);
  // ratio(k,n) = exp(l_kn − logsumexp over kept), i.e. the renormalized weight
  // slot k would receive if it were kept.
  Matrix ratio(K, N);
  for (std::size_t n = 0; n < N; ++n) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) m = std::max(m, kept[k] ? lv(k, n) : masked_logit);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp((kept[k] ? lv(k, n) : masked_logit) - m);
    const double lse = m + std::log(s);
    for (std::size_t k = 0; k < K; ++k) {
      alpha(k, n) = kept[k] ? std::exp(lv(k, n) - lse) : 0.0;
      ratio(k, n) = std::exp(std::min(lv(k, n) - lse, 50.0));
    }
  }
  const std::size_t il = logits.id(), im = mask.id();
  const std::size_t out_id = t.size();
  return t.record(std::move(alpha), logits.requires_grad() || mask.requires_grad(),
                  [il, im, out_id, ratio = std::move(ratio)](Tape& t, const Matrix& g) {
                    const Matrix& y = t.value(out_id);
                    const std::size_t K = y.rows(), N = y.cols();
                    std::vector<double> d(N, 0.0);
                    for (std::size_t n = 0; n < N; ++n)
                      for (std::size_t k = 0; k < K; ++k) d[n] += g(k, n) * y(k, n);
                    if (t.requires_grad(il)) {
                      Matrix& gl = t.grad(il);
                      for (std::size_t k = 0; k < K; ++k)
                        for (std::size_t n = 0; n < N; ++n) gl(k, n) += y(k, n) * (g(k, n) - d[n]);
                    }
                    if (t.requires_grad(im)) {
                      Matrix& gm = t.grad(im);
                      for (std::size_t k = 0; k < K; ++k) {
                        double acc = 0.0;
                        for (std::size_t n = 0; n < N; ++n) acc += ratio(k, n) * (g(k, n) - d[n]);
                        gm[k] += acc;
                      }
                    }
                  });
}

// recon[n,:] = Σ_k alpha[k,n] · per_slot[k·N + n, :]
inline Var mix_slots(const Var& alpha, const Var& per_slot) {
  Tape& t = detail::tape_of(alpha, per_slot);
  const Matrix& av = alpha.value();
  const Matrix& pv = per_slot.value();
  const std::size_t K = av.rows(), N = av.cols(), D = pv.cols();
  if (pv.rows() != K * N) throw ShapeError("mix_slots: per_slot must have K·N rows");
  Matrix v(N, D);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t n = 0; n < N; ++n) {
      const double a = av(k, n);
      if (a == 0.0) continue;
      for (std::size_t j = 0; j < D; ++j) v(n, j) += a * pv(k * N + n, j);
    }
  const std::size_t ia = alpha.id(), ip = per_slot.id();
  return t.record(std::move(v), alpha.requires_grad() || per_slot.requires_grad(),
                  [ia, ip, K, N, D](Tape& t, const Matrix& g) {
                    const Matrix& av = t.value(ia);
                    const Matrix& pv = t.value(ip);
                    if (t.requires_grad(ia)) {
                      Matrix& ga = t.grad(ia);
                      for (std::size_t k = 0; k < K; ++k)
                        for (std::size_t n = 0; n < N; ++n) {
                          double s = 0.0;
                          for (std::size_t j = 0; j < D; ++j) s += g(n, j) * pv(k * N + n, j);
                          ga(k, n) += s;
                        }
                    }
                    if (t.requires_grad(ip)) {
                      Matrix& gp = t.grad(ip);
                      for (std::size_t k = 0; k < K; ++k)
                        for (std::size_t n = 0; n < N; ++n)
                          for (std::size_t j = 0; j < D; ++j) gp(k * N + n, j) += av(k, n) * g(n, j);
                    }
                  });
}

// Σ_k m_k x_k / Σ_k m_k over rows of x (K×d) with mask m (K×1). Differentiable in both.
inline Var masked_mean_rows(const Var& x, const Var& mask) {
  Tape& t = detail::tape_of(x, mask);
  const Matrix& xv = x.value();
  const Matrix& mv = mask.value();
  const std::size_t K = xv.rows(), D = xv.cols();
  if (mv.rows() != K || mv.cols() != 1) throw ShapeError("masked_mean_rows: mask must be K×1");
  double msum = 0.0;
  for (std::size_t k = 0; k < K; ++k) msum += mv[k];
  if (!(msum > 0.0)) throw ContractError("masked_mean_rows: no kept rows");
  Matrix v(1, D);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < D; ++j) v[j] += mv[k] * xv(k, j);
  for (double& e : v.data()) e /= msum;
  const std::size_t ix = x.id(), im = mask.id();
  const std::size_t out_id = t.size();
  return t.record(std::move(v), x.requires_grad() || mask.requires_grad(),
                  [ix, im, out_id, msum](Tape& t, const Matrix& g) {
                    const Matrix& xv = t.value(ix);
                    const Matrix& mv = t.value(im);
                    const Matrix& y = t.value(out_id);
                    const std::size_t K = xv.rows(), D = xv.cols();
                    if (t.requires_grad(ix)) {
                      Matrix& gx = t.grad(ix);
                      for (std::size_t k = 0; k < K; ++k)
                        for (std::size_t j = 0; j < D; ++j) gx(k, j) += g[j] * mv[k] / msum;
                    }
                    if (t.requires_grad(im)) {
                      Matrix& gm = t.grad(im);
                      for (std::size_t k = 0; k < K; ++k) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < D; ++j) s += g[j] * (xv(k, j) - y[j]);
                        gm[k] += s / msum;
                      }
                    }
                  });
}

// Coordinatewise maximum over rows whose mask entry is ≥ 0.5. No gradient to the mask.
inline Var masked_max_rows(const Var& x, const Matrix& mask) {
  Tape& t = detail::tape_of(x);
  const Matrix& xv = x.value();
  const std::size_t K = xv.rows(), D = xv.cols();
  if (mask.rows() != K || mask.cols() != 1) throw ShapeError("masked_max_rows: mask must be K×1");
  Matrix v(1, D, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> arg(D, K);
  for (std::size_t k = 0; k < K; ++k) {
    if (mask[k] < 0.5) continue;
    for (std::size_t j = 0; j < D; ++j)
      if (arg[j] == K || xv(k, j) > v[j]) {
        v[j] = xv(k, j);
        arg[j] = k;
      }
  }
  if (D > 0 && arg[0] == K) throw ContractError("masked_max_rows: no kept rows");
  const std::size_t ix = x.id();
  return t.record(std::move(v), x.requires_grad(), [ix, arg = std::move(arg)](Tape& t, const Matrix& g) {
    Matrix& gx = t.grad(ix);
    for (std::size_t j = 0; j < arg.size(); ++j) gx(arg[j], j) += g[j];
  });
}

}  // namespace ad
}  // namespace adagcd
