#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace da {

using Vector = std::vector<double>;

class NumericsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by cholesky() when a pivot falls below the positive-definiteness threshold.
class NotPositiveDefinite : public NumericsError {
 public:
  explicit NotPositiveDefinite(std::size_t pivot);
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

/// Row-major dense matrix. Sizes here stay below a few hundred, so there is no
/// attempt at blocking or vectorization.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix diagonal(std::span<const double> diag);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return entries_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return entries_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return entries_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {entries_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {entries_.data() + i * cols_, cols_}; }
  std::span<const double> entries() const noexcept { return entries_; }

  DenseMatrix transposed() const;
  Vector multiply(std::span<const double> x) const;
  Vector multiply_transposed(std::span<const double> x) const;
  double max_abs() const;
  bool is_symmetric(double relative_tolerance = 1e-12) const;

  DenseMatrix& operator+=(const DenseMatrix& other);
  DenseMatrix& operator-=(const DenseMatrix& other);
  DenseMatrix& operator*=(double s);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> entries_;
};

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b);
DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b);
DenseMatrix operator*(double s, DenseMatrix a);

/// Aᵀ·diag(d)·A, the weighted Gram matrix.
DenseMatrix weighted_gram(const DenseMatrix& a, std::span<const double> d);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double norm_inf(std::span<const double> a);
/// y += s·x
void axpy(double s, std::span<const double> x, std::span<double> y);
Vector subtract(std::span<const double> a, std::span<const double> b);

/// Lower-triangular C with C·Cᵀ = A.
///
/// Work is restricted to the row envelope of A (leading zeros of each row stay
/// zero in C), so banded Hessians from long trajectory blocks factor in
/// O(n·b²). A pivot at or below 1e-13·max diag(A) fails with NotPositiveDefinite.
DenseMatrix cholesky(const DenseMatrix& a);

/// Solves C·x = b for lower-triangular C.
Vector solve_lower(const DenseMatrix& c, std::span<const double> b);
/// Solves Cᵀ·x = b for lower-triangular C.
Vector solve_lower_transposed(const DenseMatrix& c, std::span<const double> b);
/// Solves A·x = b given C = cholesky(A).
Vector cholesky_solve(const DenseMatrix& c, std::span<const double> b);
DenseMatrix invert_lower(const DenseMatrix& c);
/// Σ log C_ii, i.e. ½·log det A for C = cholesky(A).
double log_diagonal_sum(const DenseMatrix& c);

/// Determinant via LU with partial pivoting; exactly singular input returns 0.
double determinant(DenseMatrix a);

/// log Σ exp(v_i), stable for arbitrarily negative entries. Throws when every
/// entry is −∞ (no mass left).
double log_sum_exp(std::span<const double> logs);

using VectorMap = std::function<Vector(std::span<const double>)>;

/// |det| of the central-difference Jacobian of `map` at `point`.
double finite_difference_jacobian_det(const VectorMap& map, std::span<const double> point,
                                      double step);

/// Worker count from DA_THREADS, else the hardware concurrency (at least 1).
unsigned worker_count();

/// Calls body(i) for i in [0, n) on up to `workers` threads. Each index is
/// visited exactly once; the first exception thrown is rethrown after all
/// workers finish.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& body);

}  // namespace da
