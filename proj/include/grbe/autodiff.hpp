#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "grbe/tensor.hpp"

namespace grbe::ad {

class Tape;

/// Lightweight handle to a tape node. Copyable; valid while its tape lives.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, int id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  const Tensor& data() const;
  int rows() const { return data().rows; }
  int cols() const { return data().cols; }
  double scalar() const;

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in topological order; backward() does
/// one reverse sweep, accumulating into parent gradients (so shared
/// subexpressions add up, d(x+x)/dx = 2). One backward per tape.
class Tape {
 public:
  Value leaf(Tensor data) { return Value(this, push(std::move(data), nullptr)); }
  Value constant(Tensor data) { return leaf(std::move(data)); }
  Value constant(double x) { return leaf(Tensor::scalar(x)); }

  int push(Tensor data, std::function<void(Tape&, int)> back) {
    require(data.all_finite(), "Tape: non-finite value produced");
    nodes_.push_back(Node{std::move(data), Tensor(), false, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor& data(int id) const { return nodes_[static_cast<std::size_t>(id)].data; }
  const Tensor& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Tensor& grad(const Value& v) const { return grad(v.id()); }

  /// Add `g` into the gradient slot of node `id` (lazy-allocating zeros).
  void accumulate(int id, const Tensor& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.touched) {
      n.grad = Tensor(n.data.rows, n.data.cols);
      n.touched = true;
    }
    for (std::size_t i = 0; i < g.v.size(); ++i) n.grad.v[i] += g.v[i];
  }

  void backward(const Value& out) {
    require(out.tape() == this, "backward: value from another tape");
    require(data(out.id()).is_scalar(), "backward: output must be scalar");
    require(!backward_done_, "backward: tape already swept");
    backward_done_ = true;
    accumulate(out.id(), Tensor::scalar(1.0));
    for (int id = out.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.touched && n.back) n.back(*this, id);
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor data;
    Tensor grad;  // allocated on first accumulate
    bool touched = false;
    std::function<void(Tape&, int)> back;  // adds self grad into parents; null for leaves
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Value::data() const { return tape_->data(id_); }
inline double Value::scalar() const {
  require(data().is_scalar(), "Value::scalar: not a (1,1) tensor");
  return data().v[0];
}

namespace detail {
inline Tape& tape_of(const Value& a, const Value& b) {
  require(a.valid() && b.valid(), "op: invalid value handle");
  require(a.tape() == b.tape(), "op: operands from different tapes");
  return *a.tape();
}
inline Tape& tape_of(const Value& a) {
  require(a.valid(), "op: invalid value handle");
  return *a.tape();
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic.
// `add`/`sub` broadcast the right operand when it is (1,1) or a (1,cols) row;
// `mul`/`div` broadcast a (1,1) right operand. Gradients of a broadcast
// operand are the matching reductions (full sum / column sums).
// ---------------------------------------------------------------------------

enum class Broadcast { none, scalar, row };

namespace detail {
inline Broadcast broadcast_mode(const Tensor& a, const Tensor& b, bool allow_row, const char* op) {
  if (a.same_shape(b)) return Broadcast::none;
  if (b.is_scalar()) return Broadcast::scalar;
  if (allow_row && b.rows == 1 && b.cols == a.cols) return Broadcast::row;
  require(false, std::string(op) + ": incompatible shapes");
  return Broadcast::none;  // unreachable
}
inline Tensor reduce_like(const Tensor& g, Broadcast mode, int rows, int cols) {
  if (mode == Broadcast::scalar) {
    double s = 0.0;
    for (double x : g.v) s += x;
    return Tensor::scalar(s);
  }
  Tensor out(1, cols);  // Broadcast::row: column sums
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out.v[static_cast<std::size_t>(j)] += g.at(i, j);
  return out;
}
}  // namespace detail

inline Value add(const Value& a, const Value& b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& A = a.data();
  const Tensor& B = b.data();
  const Broadcast mode = detail::broadcast_mode(A, B, true, "add");
  Tensor out = A;
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j)
      out.at(i, j) += (mode == Broadcast::none) ? B.at(i, j) : (mode == Broadcast::scalar ? B.v[0] : B.at(0, j));
  const int ia = a.id(), ib = b.id();
  const int rows = A.rows, cols = A.cols;
  return Value(&t, t.push(std::move(out), [ia, ib, mode, rows, cols](Tape& tp, int self) {
                 const Tensor& g = tp.grad(self);
                 tp.accumulate(ia, g);
                 if (mode == Broadcast::none)
                   tp.accumulate(ib, g);
                 else
                   tp.accumulate(ib, detail::reduce_like(g, mode, rows, cols));
               }));
}

inline Value sub(const Value& a, const Value& b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& A = a.data();
  const Tensor& B = b.data();
  const Broadcast mode = detail::broadcast_mode(A, B, true, "sub");
  Tensor out = A;
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j)
      out.at(i, j) -= (mode == Broadcast::none) ? B.at(i, j) : (mode == Broadcast::scalar ? B.v[0] : B.at(0, j));
  const int ia = a.id(), ib = b.id();
  const int rows = A.rows, cols = A.cols;
  return Value(&t, t.push(std::move(out), [ia, ib, mode, rows, cols](Tape& tp, int self) {
                 Tensor g = tp.grad(self);
                 tp.accumulate(ia, g);
                 for (double& x : g.v) x = -x;
                 if (mode == Broadcast::none)
                   tp.accumulate(ib, g);
                 else
                   tp.accumulate(ib, detail::reduce_like(g, mode, rows, cols));
               }));
}

inline Value mul(const Value& a, const Value& b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& A = a.data();
  const Tensor& B = b.data();
  const Broadcast mode = detail::broadcast_mode(A, B, false, "mul");
  Tensor out = A;
  if (mode == Broadcast::none)
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= B.v[i];
  else
    for (double& x : out.v) x *= B.v[0];
  const int ia = a.id(), ib = b.id();
  return Value(&t, t.push(std::move(out), [ia, ib, mode](Tape& tp, int self) {
                 const Tensor& g = tp.grad(self);
                 const Tensor& A2 = tp.data(ia);
                 const Tensor& B2 = tp.data(ib);
                 Tensor ga = g;
                 if (mode == Broadcast::none) {
                   for (std::size_t i = 0; i < ga.v.size(); ++i) ga.v[i] *= B2.v[i];
                   tp.accumulate(ia, ga);
                   Tensor gb = g;
                   for (std::size_t i = 0; i < gb.v.size(); ++i) gb.v[i] *= A2.v[i];
                   tp.accumulate(ib, gb);
                 } else {
                   for (double& x : ga.v) x *= B2.v[0];
                   tp.accumulate(ia, ga);
                   double s = 0.0;
                   for (std::size_t i = 0; i < g.v.size(); ++i) s += g.v[i] * A2.v[i];
                   tp.accumulate(ib, Tensor::scalar(s));
                 }
               }));
}

inline Value div(const Value& a, const Value& b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& A = a.data();
  const Tensor& B = b.data();
  const Broadcast mode = detail::broadcast_mode(A, B, false, "div");
  Tensor out = A;
  if (mode == Broadcast::none)
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] /= B.v[i];
  else
    for (double& x : out.v) x /= B.v[0];
  const int ia = a.id(), ib = b.id();
  return Value(&t, t.push(std::move(out), [ia, ib, mode](Tape& tp, int self) {
                 const Tensor& g = tp.grad(self);
                 const Tensor& A2 = tp.data(ia);
                 const Tensor& B2 = tp.data(ib);
                 if (mode == Broadcast::none) {
                   Tensor ga = g, gb = g;
                   for (std::size_t i = 0; i < ga.v.size(); ++i) {
                     ga.v[i] /= B2.v[i];
                     gb.v[i] *= -A2.v[i] / (B2.v[i] * B2.v[i]);
                   }
                   tp.accumulate(ia, ga);
                   tp.accumulate(ib, gb);
                 } else {
                   const double bb = B2.v[0];
                   Tensor ga = g;
                   for (double& x : ga.v) x /= bb;
                   tp.accumulate(ia, ga);
                   double s = 0.0;
                   for (std::size_t i = 0; i < g.v.size(); ++i) s += g.v[i] * A2.v[i];
                   tp.accumulate(ib, Tensor::scalar(-s / (bb * bb)));
                 }
               }));
}

inline Value add_scalar(const Value& a, double c) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.data();
  for (double& x : out.v) x += c;
  const int ia = a.id();
  return Value(&t, t.push(std::move(out), [ia](Tape& tp, int self) { tp.accumulate(ia, tp.grad(self)); }));
}

inline Value mul_scalar(const Value& a, double c) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.data();
  for (double& x : out.v) x *= c;
  const int ia = a.id();
  return Value(&t, t.push(std::move(out), [ia, c](Tape& tp, int self) {
                 Tensor g = tp.grad(self);
                 for (double& x : g.v) x *= c;
                 tp.accumulate(ia, g);
               }));
}

inline Value neg(const Value& a) { return mul_scalar(a, -1.0); }

// ---------------------------------------------------------------------------
// Matrix ops.
// ---------------------------------------------------------------------------

inline Value matmul(const Value& a, const Value& b) {
  Tape& t = detail::tape_of(a, b);
  Tensor out = matmul_nn(a.data(), b.data());
  const int ia = a.id(), ib = b.id();
  return Value(&t, t.push(std::move(out), [ia, ib](Tape& tp, int self) {
                 const Tensor& g = tp.grad(self);
                 tp.accumulate(ia, matmul_nt(g, tp.data(ib)));  // dA = g B^T
                 tp.accumulate(ib, matmul_tn(tp.data(ia), g));  // dB = A^T g
               }));
}

inline Value transpose(const Value& a) {
  Tape& t = detail::tape_of(a);
  const Tensor& A = a.data();
  Tensor out(A.cols, A.rows);
  for (int i = 0; i < A.rows; ++i)
    for (int j = 0; j < A.cols; ++j) out.at(j, i) = A.at(i, j);
  const int ia = a.id();
  return Value(&t, t.push(std::move(out), [ia](Tape& tp, int self) {
                 const Tensor& g = tp.grad(self);
                 Tensor gt(g.cols, g.rows);
                 for (int i = 0; i < g.rows; ++i)
                   for (int j = 0; j < g.cols; ++j) gt.at(j, i) = g.at(i, j);
                 tp.accumulate(ia, gt);
               }));
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities.
// ---------------------------------------------------------------------------

inline double sigmoid_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Value sigmoid(const Value& a) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.data();
  for (double& x : out.v) x = sigmoid_scalar(x);
  const int ia = a.id();
  return Value(&t, t.push(std::move(out), [ia](Tape& tp, int self) {
                 const Tensor& y = tp.data(self);
                 Tensor g = tp.grad(self);
                 for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] *= y.v[i] * (1.0 - y.v[i]);
                 tp.accumulate(ia, g);
               }));
}

inline Value relu(const Value& a) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.data();
  for (double& x : out.v) x = x > 0.0 ? x : 0.0;
  const int ia = a.id();
  return Value(&t, t.push(std::move(out), [ia](Tape& tp, int self) {
                 const Tensor& x = tp.data(ia);
                 Tensor g = tp.grad(self);
                 for (std::size_t i = 0; i < g.v.size(); ++i)
                   if (x.v[i] <= 0.0) g.v[i] = 0.0;
                 tp.accumulate(ia, g);
               }));
}

inline Value log(const Value& a) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.data();
  for (double& x : out.v) {
    require(x > 0.0, "log: non-positive input");
    x = std::log(x);
  }
  const int ia = a.id();
  return Value(&t, t.push(std::move(out), [ia](Tape& tp, int self) {
                 const Tensor& x = tp.data(ia);
                 Tensor g = tp.grad(self);
                 for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] /= x.v[i];
                 tp.accumulate(ia, g);
               }));
}

inline Value exp(const Value& a) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.data();
  for (double& x : out.v) x = std::exp(x);
  const int ia = a.id();
  return Value(&t, t.push(std::move(out), [ia](Tape& tp, int self) {
                 const Tensor& y = tp.data(self);
                 Tensor g = tp.grad(self);
                 for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] *= y.v[i];
                 tp.accumulate(ia, g);
               }));
}

/// |x| with subgradient 0 at the kink.
inline Value abs(const Value& a) {
  Tape& t = detail::tape_of(a);
  Tensor out = a.data();
  for (double& x : out.v) x = std::fabs(x);
  const int ia = a.id();
  return Value(&t, t.push(std::move(out), [ia](Tape& tp, int self) {
                 const Tensor& x = tp.data(ia);
                 Tensor g = tp.grad(self);
                 for (std::size_t i = 0; i < g.v.size(); ++i)
                   g.v[i] *= (x.v[i] > 0.0) ? 1.0 : (x.v[i] < 0.0 ? -1.0 : 0.0);
                 tp.accumulate(ia, g);
               }));
}

/// Clamp to [lo, hi]; gradient passes through strictly inside the interval.
inline Value clamp(const Value& a, double lo, double hi) {
  require(lo < hi, "clamp: empty interval");
  Tape& t = detail::tape_of(a);
  Tensor out = a.data();
  for (double& x : out.v) x = x < lo ? lo : (x > hi ? hi : x);
  const int ia = a.id();
  return Value(&t, t.push(std::move(out), [ia, lo, hi](Tape& tp, int self) {
                 const Tensor& x = tp.data(ia);
                 Tensor g = tp.grad(self);
                 for (std::size_t i = 0; i < g.v.size(); ++i)
                   if (x.v[i] <= lo || x.v[i] >= hi) g.v[i] = 0.0;
                 tp.accumulate(ia, g);
               }));
}

// ---------------------------------------------------------------------------
// Reductions and row-structured ops.
// ---------------------------------------------------------------------------

inline Value sum(const Value& a) {
  Tape& t = detail::tape_of(a);
  double s = 0.0;
  for (double x : a.data().v) s += x;
  const int ia = a.id();
  const int rows = a.rows(), cols = a.cols();
  return Value(&t, t.push(Tensor::scalar(s), [ia, rows, cols](Tape& tp, int self) {
                 tp.accumulate(ia, Tensor::full(rows, cols, tp.grad(self).v[0]));
               }));
}

inline Value mean(const Value& a) {
  require(a.data().size() > 0, "mean: empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.data().size()));
}

/// Row-wise stable log-sum-exp: (n,m) -> (n,1).
inline Value lse_rows(const Value& a) {
  Tape& t = detail::tape_of(a);
  const Tensor& A = a.data();
  require(A.cols > 0, "lse_rows: empty rows");
  Tensor out(A.rows, 1);
  for (int i = 0; i < A.rows; ++i) {
    double m = A.at(i, 0);
    for (int j = 1; j < A.cols; ++j) m = std::max(m, A.at(i, j));
    double s = 0.0;
    for (int j = 0; j < A.cols; ++j) s += std::exp(A.at(i, j) - m);
    out.v[static_cast<std::size_t>(i)] = m + std::log(s);
  }
  const int ia = a.id();
  return Value(&t, t.push(std::move(out), [ia](Tape& tp, int self) {
                 const Tensor& x = tp.data(ia);
                 const Tensor& y = tp.data(self);
                 const Tensor& g = tp.grad(self);
                 Tensor gx(x.rows, x.cols);
                 for (int i = 0; i < x.rows; ++i)
                   for (int j = 0; j < x.cols; ++j)
                     gx.at(i, j) = g.v[static_cast<std::size_t>(i)] * std::exp(x.at(i, j) - y.v[static_cast<std::size_t>(i)]);
                 tp.accumulate(ia, gx);
               }));
}

/// Main diagonal of a square matrix as a column vector.
inline Value take_diag(const Value& a) {
  Tape& t = detail::tape_of(a);
  const Tensor& A = a.data();
  require(A.rows == A.cols, "take_diag: matrix not square");
  Tensor out(A.rows, 1);
  for (int i = 0; i < A.rows; ++i) out.v[static_cast<std::size_t>(i)] = A.at(i, i);
  const int ia = a.id();
  const int n = A.rows;
  return Value(&t, t.push(std::move(out), [ia, n](Tape& tp, int self) {
                 const Tensor& g = tp.grad(self);
                 Tensor gx(n, n);
                 for (int i = 0; i < n; ++i) gx.at(i, i) = g.v[static_cast<std::size_t>(i)];
                 tp.accumulate(ia, gx);
               }));
}

/// Select rows by index (repeats allowed); backward scatter-adds.
inline Value gather_rows(const Value& a, std::vector<int> idx) {
  Tape& t = detail::tape_of(a);
  const Tensor& A = a.data();
  Tensor out(static_cast<int>(idx.size()), A.cols);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    require(idx[k] >= 0 && idx[k] < A.rows, "gather_rows: index out of range");
    for (int j = 0; j < A.cols; ++j) out.at(static_cast<int>(k), j) = A.at(idx[k], j);
  }
  const int ia = a.id();
  const int rows = A.rows, cols = A.cols;
  return Value(&t, t.push(std::move(out), [ia, rows, cols, idx = std::move(idx)](Tape& tp, int self) {
                 const Tensor& g = tp.grad(self);
                 Tensor gx(rows, cols);
                 for (std::size_t k = 0; k < idx.size(); ++k)
                   for (int j = 0; j < cols; ++j) gx.at(idx[k], j) += g.at(static_cast<int>(k), j);
                 tp.accumulate(ia, gx);
               }));
}

/// [a | b] column-wise; rows must match.
inline Value hconcat(const Value& a, const Value& b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& A = a.data();
  const Tensor& B = b.data();
  require(A.rows == B.rows, "hconcat: row counts differ");
  Tensor out(A.rows, A.cols + B.cols);
  for (int i = 0; i < A.rows; ++i) {
    for (int j = 0; j < A.cols; ++j) out.at(i, j) = A.at(i, j);
    for (int j = 0; j < B.cols; ++j) out.at(i, A.cols + j) = B.at(i, j);
  }
  const int ia = a.id(), ib = b.id();
  const int ca = A.cols, cb = B.cols, rows = A.rows;
  return Value(&t, t.push(std::move(out), [ia, ib, ca, cb, rows](Tape& tp, int self) {
                 const Tensor& g = tp.grad(self);
                 Tensor ga(rows, ca), gb(rows, cb);
                 for (int i = 0; i < rows; ++i) {
                   for (int j = 0; j < ca; ++j) ga.at(i, j) = g.at(i, j);
                   for (int j = 0; j < cb; ++j) gb.at(i, j) = g.at(i, ca + j);
                 }
                 tp.accumulate(ia, ga);
                 tp.accumulate(ib, gb);
               }));
}

/// Stack row blocks vertically; column counts must match.
inline Value vconcat(const std::vector<Value>& parts) {
  require(!parts.empty(), "vconcat: no parts");
  Tape& t = detail::tape_of(parts.front());
  int rows = 0;
  const int cols = parts.front().cols();
  std::vector<int> ids;
  std::vector<int> block_rows;
  for (const Value& p : parts) {
    require(p.tape() == &t, "vconcat: operands from different tapes");
    require(p.cols() == cols, "vconcat: column counts differ");
    ids.push_back(p.id());
    block_rows.push_back(p.rows());
    rows += p.rows();
  }
  Tensor out(rows, cols);
  int r = 0;
  for (const Value& p : parts) {
    const Tensor& P = p.data();
    for (int i = 0; i < P.rows; ++i)
      for (int j = 0; j < cols; ++j) out.at(r + i, j) = P.at(i, j);
    r += P.rows;
  }
  return Value(&t, t.push(std::move(out), [ids, block_rows, cols](Tape& tp, int self) {
                 const Tensor& g = tp.grad(self);
                 int r0 = 0;
                 for (std::size_t k = 0; k < ids.size(); ++k) {
                   Tensor gk(block_rows[k], cols);
                   for (int i = 0; i < block_rows[k]; ++i)
                     for (int j = 0; j < cols; ++j) gk.at(i, j) = g.at(r0 + i, j);
                   tp.accumulate(ids[k], gk);
                   r0 += block_rows[k];
                 }
               }));
}

/// Rows scaled to unit L2 norm. Rows with norm below 1e-12 are zeroed and get
/// zero gradient (the normalization is undefined there).
inline Value l2_normalize_rows(const Value& a) {
  Tape& t = detail::tape_of(a);
  const Tensor& A = a.data();
  Tensor out = A;
  std::vector<double> norms(static_cast<std::size_t>(A.rows));
  for (int i = 0; i < A.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < A.cols; ++j) s += A.at(i, j) * A.at(i, j);
    const double n = std::sqrt(s);
    norms[static_cast<std::size_t>(i)] = n;
    for (int j = 0; j < A.cols; ++j) out.at(i, j) = n > 1e-12 ? A.at(i, j) / n : 0.0;
  }
  const int ia = a.id();
  return Value(&t, t.push(std::move(out), [ia, norms](Tape& tp, int self) {
                 const Tensor& y = tp.data(self);
                 const Tensor& g = tp.grad(self);
                 Tensor gx(y.rows, y.cols);
                 for (int i = 0; i < y.rows; ++i) {
                   const double n = norms[static_cast<std::size_t>(i)];
                   if (n <= 1e-12) continue;
                   double dot = 0.0;
                   for (int j = 0; j < y.cols; ++j) dot += y.at(i, j) * g.at(i, j);
                   for (int j = 0; j < y.cols; ++j) gx.at(i, j) = (g.at(i, j) - y.at(i, j) * dot) / n;
                 }
                 tp.accumulate(ia, gx);
               }));
}

// ---------------------------------------------------------------------------
// Graph message aggregation:
//   out[v] = (1 + eps) * h[v] + sum_{e=(u,v)} w[e] * h[u]   (both directions)
// Differentiable in both node states and edge weights, which is what lets a
// loss on a downstream readout steer the per-edge gates.
// ---------------------------------------------------------------------------

inline Value edge_weighted_aggregate(const Value& h, const Value& w,
                                     std::vector<std::pair<int, int>> edges, double eps) {
  Tape& t = detail::tape_of(h, w);
  const Tensor& H = h.data();
  const Tensor& W = w.data();
  require(W.cols == 1 && W.rows == static_cast<int>(edges.size()),
          "edge_weighted_aggregate: weights must be (edge_count, 1)");
  for (const auto& [u, v] : edges)
    require(u >= 0 && u < H.rows && v >= 0 && v < H.rows, "edge_weighted_aggregate: edge endpoint out of range");
  Tensor out = H;
  const double self_scale = 1.0 + eps;
  for (double& x : out.v) x *= self_scale;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [u, v] = edges[e];
    const double we = W.v[e];
    if (we == 0.0) continue;
    for (int j = 0; j < H.cols; ++j) {
      out.at(v, j) += we * H.at(u, j);
      out.at(u, j) += we * H.at(v, j);
    }
  }
  const int ih = h.id(), iw = w.id();
  return Value(&t, t.push(std::move(out), [ih, iw, self_scale, edges = std::move(edges)](Tape& tp, int self) {
                 const Tensor& H2 = tp.data(ih);
                 const Tensor& W2 = tp.data(iw);
                 const Tensor& g = tp.grad(self);
                 Tensor gh = g;
                 for (double& x : gh.v) x *= self_scale;
                 Tensor gw(static_cast<int>(edges.size()), 1);
                 for (std::size_t e = 0; e < edges.size(); ++e) {
                   const auto [u, v] = edges[e];
                   const double we = W2.v[e];
                   double s = 0.0;
                   for (int j = 0; j < H2.cols; ++j) {
                     gh.at(u, j) += we * g.at(v, j);
                     gh.at(v, j) += we * g.at(u, j);
                     s += g.at(v, j) * H2.at(u, j) + g.at(u, j) * H2.at(v, j);
                   }
                   gw.v[e] = s;
                 }
                 tp.accumulate(ih, gh);
                 tp.accumulate(iw, gw);
               }));
}

// ---------------------------------------------------------------------------
// Column-wise batch normalization (biased variance), off by default in the
// encoder; provided so normalized variants stay expressible.
//   y = gamma * (x - mu) / sqrt(var + eps) + beta, per column over rows.
// ---------------------------------------------------------------------------

inline Value batch_norm_cols(const Value& x, const Value& gamma, const Value& beta, double eps = 1e-5) {
  Tape& t = detail::tape_of(x, gamma);
  require(gamma.tape() == beta.tape(), "batch_norm_cols: operands from different tapes");
  const Tensor& X = x.data();
  require(X.rows > 0, "batch_norm_cols: empty input");
  require(gamma.rows() == 1 && gamma.cols() == X.cols, "batch_norm_cols: gamma must be (1, cols)");
  require(beta.rows() == 1 && beta.cols() == X.cols, "batch_norm_cols: beta must be (1, cols)");
  const int n = X.rows, m = X.cols;
  std::vector<double> mu(static_cast<std::size_t>(m)), ivstd(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += X.at(i, j);
    mu[static_cast<std::size_t>(j)] = s / n;
    double v = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = X.at(i, j) - mu[static_cast<std::size_t>(j)];
      v += d * d;
    }
    ivstd[static_cast<std::size_t>(j)] = 1.0 / std::sqrt(v / n + eps);
  }
  Tensor out(n, m);
  const Tensor& G = gamma.data();
  const Tensor& B = beta.data();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      out.at(i, j) = G.v[static_cast<std::size_t>(j)] * (X.at(i, j) - mu[static_cast<std::size_t>(j)]) * ivstd[static_cast<std::size_t>(j)] +
                     B.v[static_cast<std::size_t>(j)];
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return Value(&t, t.push(std::move(out), [ix, ig, ib, n, m, mu, ivstd](Tape& tp, int self) {
                 const Tensor& X2 = tp.data(ix);
                 const Tensor& G2 = tp.data(ig);
                 const Tensor& g = tp.grad(self);
                 Tensor gx(n, m), gg(1, m), gb(1, m);
                 for (int j = 0; j < m; ++j) {
                   const double mj = mu[static_cast<std::size_t>(j)];
                   const double iv = ivstd[static_cast<std::size_t>(j)];
                   double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0, sum_g = 0.0, sum_g_xhat = 0.0;
                   for (int i = 0; i < n; ++i) {
                     const double xhat = (X2.at(i, j) - mj) * iv;
                     const double dxhat = g.at(i, j) * G2.v[static_cast<std::size_t>(j)];
                     sum_dxhat += dxhat;
                     sum_dxhat_xhat += dxhat * xhat;
                     sum_g += g.at(i, j);
                     sum_g_xhat += g.at(i, j) * xhat;
                   }
                   for (int i = 0; i < n; ++i) {
                     const double xhat = (X2.at(i, j) - mj) * iv;
                     const double dxhat = g.at(i, j) * G2.v[static_cast<std::size_t>(j)];
                     gx.at(i, j) = (iv / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat);
                   }
                   gg.v[static_cast<std::size_t>(j)] = sum_g_xhat;
                   gb.v[static_cast<std::size_t>(j)] = sum_g;
                 }
                 tp.accumulate(ix, gx);
                 tp.accumulate(ig, gg);
                 tp.accumulate(ib, gb);
               }));
}

// ---------------------------------------------------------------------------
// Convenience compositions.
// ---------------------------------------------------------------------------

/// Mean of selected rows: (n,m), k indices -> (1,m).
inline Value mean_rows(const Value& a, const std::vector<int>& rows) {
  require(!rows.empty(), "mean_rows: empty row subset");
  Tape& t = detail::tape_of(a);
  Tensor lhs(1, static_cast<int>(rows.size()));
  std::fill(lhs.v.begin(), lhs.v.end(), 1.0 / static_cast<double>(rows.size()));
  return matmul(t.constant(std::move(lhs)), gather_rows(a, rows));
}

/// Mean of all rows: (n,m) -> (1,m).
inline Value mean_rows(const Value& a) {
  require(a.rows() > 0, "mean_rows: empty tensor");
  Tape& t = detail::tape_of(a);
  Tensor lhs = Tensor::full(1, a.rows(), 1.0 / static_cast<double>(a.rows()));
  return matmul(t.constant(std::move(lhs)), a);
}

}  // namespace grbe::ad
