#pragma once

// Dense LU factorization with partial pivoting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace adcfaultlab {

/// Row-major square matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  explicit DenseMatrix(size_t n) : n_(n), a_(n * n, 0.0) {}

  [[nodiscard]] size_t size() const { return n_; }
  double& operator()(size_t r, size_t c) { return a_[r * n_ + c]; }
  double operator()(size_t r, size_t c) const { return a_[r * n_ + c]; }
  void clear() { std::fill(a_.begin(), a_.end(), 0.0); }
  double* row(size_t r) { return a_.data() + r * n_; }

 private:
  size_t n_ = 0;
  std::vector<double> a_;
};

/// Solves A x = b in place (A is destroyed, b becomes x). Returns the column
/// index of the first pivot that is zero to within 4 * eps of its column's
/// original magnitude, or nullopt on success. Structurally singular systems
/// (source loops, nodes touching only gates) cancel to exact zeros, so the
/// bound only has to sit above the rounding of a single cancellation; a
/// looser bound rejects stiff but regular systems such as a milliohm open
/// beside nanosiemens of load.
inline std::optional<size_t> lu_solve_in_place(DenseMatrix& a, std::span<double> b,
                                               std::vector<double>& scratch) {
  const size_t n = a.size();
  scratch.assign(n, 0.0);
  for (size_t r = 0; r < n; ++r) {
    const double* row = a.row(r);
    for (size_t c = 0; c < n; ++c) scratch[c] = std::max(scratch[c], std::abs(row[c]));
  }
  const double rel_pivot = 4.0 * std::numeric_limits<double>::epsilon();

  for (size_t k = 0; k < n; ++k) {
    size_t piv = k;
    double best = std::abs(a(k, k));
    for (size_t r = k + 1; r < n; ++r) {
      const double v = std::abs(a(r, k));
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (best == 0.0 || best <= rel_pivot * scratch[k]) return k;
    if (piv != k) {
      double* rk = a.row(k);
      double* rp = a.row(piv);
      for (size_t c = k; c < n; ++c) std::swap(rk[c], rp[c]);
      std::swap(b[k], b[piv]);
    }
    const double* rk = a.row(k);
    const double inv = 1.0 / rk[k];
    for (size_t r = k + 1; r < n; ++r) {
      double* rr = a.row(r);
      const double f = rr[k] * inv;
      if (f == 0.0) continue;
      rr[k] = 0.0;
      for (size_t c = k + 1; c < n; ++c) rr[c] -= f * rk[c];
      b[r] -= f * b[k];
    }
  }
  for (size_t k = n; k-- > 0;) {
    const double* rk = a.row(k);
    double s = b[k];
    for (size_t c = k + 1; c < n; ++c) s -= rk[c] * b[c];
    b[k] = s / rk[k];
  }
  return std::nullopt;
}

}  // namespace adcfaultlab
