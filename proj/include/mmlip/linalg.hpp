#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mmlip/errors.hpp"

namespace mmlip {

using Vector = std::vector<double>;

/// Dense row-major real matrix with value semantics.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    }
  }

  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::span<double> row(std::size_t r) noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  Vector col(std::size_t c) const {
    Vector out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) noexcept {
    for (double& x : data_) x *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  bool operator==(const Matrix&) const = default;

 private:
  void require_same_shape(const Matrix& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) {
      throw ShapeError("matrix shape mismatch");
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Vector helpers

inline bool all_finite(std::span<const double> xs) noexcept {
  return std::all_of(xs.begin(), xs.end(),
                     [](double x) { return std::isfinite(x); });
}

inline void require_finite(std::span<const double> xs, const char* what) {
  if (!all_finite(xs)) {
    throw InvalidInputError(std::string(what) + " contains non-finite entries");
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline Vector add(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("add: length mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline Vector subtract(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("subtract: length mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline Vector scaled(std::span<const double> a, double s) {
  Vector out(a.begin(), a.end());
  for (double& x : out) x *= s;
  return out;
}

/// y += s * x
inline void axpy(double s, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

// ---------------------------------------------------------------------------
// Matrix products

inline Vector matvec(const Matrix& m, std::span<const double> x) {
  if (m.cols() != x.size()) throw ShapeError("matvec: inner dimension mismatch");
  Vector y(m.rows(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < row.size(); ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

/// mᵀ x
inline Vector matvec_transposed(const Matrix& m, std::span<const double> x) {
  if (m.rows() != x.size()) {
    throw ShapeError("matvec_transposed: inner dimension mismatch");
  }
  Vector y(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    const double xr = x[r];
    if (xr == 0.0) continue;
    for (std::size_t c = 0; c < row.size(); ++c) y[c] += row[c] * xr;
  }
  return y;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  }
  return t;
}

/// a bᵀ
inline Matrix outer(std::span<const double> a, std::span<const double> b) {
  Matrix m(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * b[j];
  }
  return m;
}

/// m += s · a bᵀ
inline void add_outer(Matrix& m, double s, std::span<const double> a,
                      std::span<const double> b) {
  if (m.rows() != a.size() || m.cols() != b.size()) {
    throw ShapeError("add_outer: shape mismatch");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double sa = s * a[i];
    if (sa == 0.0) continue;
    auto row = m.row(i);
    for (std::size_t j = 0; j < b.size(); ++j) row[j] += sa * b[j];
  }
}

inline double trace(const Matrix& m) {
  if (m.rows() != m.cols()) throw ShapeError("trace: matrix not square");
  double s = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) s += m(i, i);
  return s;
}

inline double max_abs(const Matrix& m) {
  double s = 0.0;
  for (double x : m.data()) s = std::max(s, std::abs(x));
  return s;
}

// ---------------------------------------------------------------------------
// Norms

inline double frobenius_norm(const Matrix& m) {
  if (m.empty()) throw InvalidInputError("frobenius_norm: empty matrix");
  require_finite(m.data(), "frobenius_norm input");
  double s = 0.0;
  for (double x : m.data()) s += x * x;
  return std::sqrt(s);
}

struct SpectralNormResult {
  double value = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  /// Unit top right singular vector (m v = value · u).
  Vector right;
  /// Unit top left singular vector; zero when value == 0.
  Vector left;
};

struct PowerIterationOptions {
  double tol = 1e-9;
  std::size_t max_iter = 1000;
};

/// Largest singular value by power iteration on mᵀm. The start vector is
/// the normalized all-ones vector; if that lies in the null space, the first
/// basis vector is added, and if that still fails the column of largest norm
/// is used.
inline SpectralNormResult spectral_norm_full(const Matrix& m,
                                             PowerIterationOptions opts = {}) {
  if (m.empty()) throw InvalidInputError("spectral_norm: empty matrix");
  if (!(opts.tol > 0.0)) throw InvalidInputError("spectral_norm: tol must be > 0");
  if (opts.max_iter < 1) throw InvalidInputError("spectral_norm: max_iter must be >= 1");
  require_finite(m.data(), "spectral_norm input");

  const std::size_t n = m.cols();
  SpectralNormResult result;
  result.right.assign(n, 0.0);
  result.left.assign(m.rows(), 0.0);

  double fro2 = 0.0;
  for (double x : m.data()) fro2 += x * x;
  if (fro2 == 0.0) {
    result.right[0] = 1.0;
    result.converged = true;
    return result;
  }

  auto normalize = [](Vector& v) {
    const double nv = norm2(v);
    for (double& x : v) x /= nv;
  };

  // Candidate starts, in order of preference.
  Vector x(n, 1.0);
  normalize(x);
  Vector mx = matvec(m, x);
  // Null-space detection: the image is negligible relative to ‖m‖_F.
  const double null_tol = 1e-12 * std::sqrt(fro2);
  if (norm2(mx) <= null_tol) {
    x[0] += 1.0;
    normalize(x);
    mx = matvec(m, x);
  }
  if (norm2(mx) <= null_tol) {
    std::size_t best = 0;
    double best_norm = -1.0;
    for (std::size_t c = 0; c < n; ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < m.rows(); ++r) s += m(r, c) * m(r, c);
      if (s > best_norm) {
        best_norm = s;
        best = c;
      }
    }
    std::fill(x.begin(), x.end(), 0.0);
    x[best] = 1.0;
    mx = matvec(m, x);
  }

  double sigma = norm2(mx);
  for (std::size_t it = 1; it <= opts.max_iter; ++it) {
    Vector y = matvec_transposed(m, mx);
    const double ny = norm2(y);
    if (ny == 0.0) break;
    for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / ny;
    mx = matvec(m, x);
    const double next = norm2(mx);
    result.iterations = it;
    const bool done = std::abs(next - sigma) <= opts.tol * next;
    sigma = next;
    if (done) {
      result.converged = true;
      break;
    }
  }

  result.value = sigma;
  result.right = x;
  if (sigma > 0.0) {
    for (std::size_t r = 0; r < mx.size(); ++r) result.left[r] = mx[r] / sigma;
  }
  return result;
}

/// σ_max(m) within relative tolerance `tol`.
inline double spectral_norm(const Matrix& m, double tol = 1e-9,
                            std::size_t max_iter = 1000) {
  return spectral_norm_full(m, {tol, max_iter}).value;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition

struct SymEigResult {
  /// Descending.
  Vector values;
  /// Column j is the eigenvector of values[j].
  Matrix vectors;
};

inline bool is_symmetric(const Matrix& m, double tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, max_abs(m));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = i + 1; j < m.cols(); ++j) {
      if (std::abs(m(i, j) - m(j, i)) > tol * scale) return false;
    }
  }
  return true;
}

/// Eigendecomposition of a real symmetric matrix.
inline SymEigResult sym_eig(const Matrix& input) {
  if (input.empty()) throw InvalidInputError("sym_eig: empty matrix");
  require_finite(input.data(), "sym_eig input");
  if (!is_symmetric(input)) {
    throw InvalidInputError("sym_eig: matrix is not symmetric");
  }
  const auto n = Eigen::Index(input.rows());
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      // Exactly symmetrized copy.
      a(i, j) = 0.5 * (input(std::size_t(i), std::size_t(j)) + input(std::size_t(j), std::size_t(i)));
    }
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a);
  if (solver.info() != Eigen::Success) throw Error("sym_eig: eigensolver did not converge");

  // Eigen sorts ascending.
  SymEigResult out{Vector(std::size_t(n)), Matrix(std::size_t(n), std::size_t(n))};
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index src = n - 1 - j;
    out.values[std::size_t(j)] = solver.eigenvalues()(src);
    for (Eigen::Index k = 0; k < n; ++k) {
      out.vectors(std::size_t(k), std::size_t(j)) = solver.eigenvectors()(k, src);
    }
  }
  return out;
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
inline Matrix spd_inverse(const Matrix& m) {
  if (m.rows() != m.cols()) throw ShapeError("spd_inverse: matrix not square");
  const std::size_t n = m.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw InvalidInputError("spd_inverse: matrix is not positive definite");
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  // Solve L Lᵀ X = I column by column.
  Matrix inv(n, n);
  Vector y(n);
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = (i == c) ? 1.0 : 0.0;
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
      y[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * inv(k, c);
      inv(ii, c) = s / l(ii, ii);
    }
  }
  return inv;
}

}  // namespace mmlip
