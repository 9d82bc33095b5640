#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace grbe {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Shape check must run before the vector member is constructed, or a negative
// dimension surfaces as the vector's own length_error instead.
inline std::size_t checked_cell_count(int r, int c) {
  require(r >= 0 && c >= 0, "Tensor: negative shape");
  return static_cast<std::size_t>(r) * static_cast<std::size_t>(c);
}

/// Dense row-major matrix of doubles. Column vectors are (n,1), row vectors (1,n),
/// scalars (1,1). Everything in the library is 64-bit.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(checked_cell_count(r, c), 0.0) {}

  static Tensor full(int r, int c, double x) {
    Tensor t(r, c);
    std::fill(t.v.begin(), t.v.end(), x);
    return t;
  }
  static Tensor scalar(double x) {
    Tensor t(1, 1);
    t.v[0] = x;
    return t;
  }
  static Tensor column(const std::vector<double>& xs) {
    Tensor t(static_cast<int>(xs.size()), 1);
    t.v = xs;
    return t;
  }

  double& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
  double at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }

  std::size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool is_scalar() const { return rows == 1 && cols == 1; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

// Plain (non-autodiff) matrix products used by backward rules. The ikj loop
// order keeps the inner loop contiguous in both operands.

/// a (n,k) * b (k,m) -> (n,m)
inline Tensor matmul_nn(const Tensor& a, const Tensor& b) {
  require(a.cols == b.rows, "matmul: inner dimensions differ");
  Tensor out(a.rows, b.cols);
  const int n = a.rows, k = a.cols, m = b.cols;
  for (int i = 0; i < n; ++i) {
    double* o = out.v.data() + static_cast<std::size_t>(i) * m;
    for (int p = 0; p < k; ++p) {
      const double aip = a.v[static_cast<std::size_t>(i) * k + p];
      if (aip == 0.0) continue;
      const double* brow = b.v.data() + static_cast<std::size_t>(p) * m;
      for (int j = 0; j < m; ++j) o[j] += aip * brow[j];
    }
  }
  return out;
}

/// a (n,k) * b^T, b (m,k) -> (n,m)
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols == b.cols, "matmul_nt: inner dimensions differ");
  Tensor out(a.rows, b.rows);
  const int n = a.rows, k = a.cols, m = b.rows;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      const double* ar = a.v.data() + static_cast<std::size_t>(i) * k;
      const double* br = b.v.data() + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ar[p] * br[p];
      out.v[static_cast<std::size_t>(i) * m + j] = s;
    }
  return out;
}

/// a^T * b, a (k,n), b (k,m) -> (n,m)
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require(a.rows == b.rows, "matmul_tn: inner dimensions differ");
  Tensor out(a.cols, b.cols);
  const int n = a.cols, k = a.rows, m = b.cols;
  for (int p = 0; p < k; ++p) {
    const double* ar = a.v.data() + static_cast<std::size_t>(p) * n;
    const double* br = b.v.data() + static_cast<std::size_t>(p) * m;
    for (int i = 0; i < n; ++i) {
      const double aip = ar[i];
      if (aip == 0.0) continue;
      double* o = out.v.data() + static_cast<std::size_t>(i) * m;
      for (int j = 0; j < m; ++j) o[j] += aip * br[j];
    }
  }
  return out;
}

}  // namespace grbe
