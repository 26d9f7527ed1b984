#include "da/numerics.hpp"

#include <algorithm>
#include <atomic>
#include <cassert>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace da {

NotPositiveDefinite::NotPositiveDefinite(std::size_t pivot)
    : NumericsError("matrix is not positive definite (pivot " + std::to_string(pivot) + ")"),
      pivot_(pivot) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), entries_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), entries_(std::move(entries)) {
  if (entries_.size() != rows_ * cols_) {
    throw NumericsError("matrix entry count does not match " + std::to_string(rows_) + "x" +
                        std::to_string(cols_));
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::diagonal(std::span<const double> diag) {
  DenseMatrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Vector DenseMatrix::multiply(std::span<const double> x) const {
  assert(x.size() == cols_);
  Vector y(rows_, 0.0);
  for (std::size_t i = 0; i < rows_; ++i) y[i] = dot(row(i), x);
  return y;
}

Vector DenseMatrix::multiply_transposed(std::span<const double> x) const {
  assert(x.size() == rows_);
  Vector y(cols_, 0.0);
  for (std::size_t i = 0; i < rows_; ++i) {
    if (x[i] != 0.0) axpy(x[i], row(i), y);
  }
  return y;
}

double DenseMatrix::max_abs() const {
  double m = 0.0;
  for (double v : entries_) m = std::max(m, std::abs(v));
  return m;
}

bool DenseMatrix::is_symmetric(double relative_tolerance) const {
  if (rows_ != cols_) return false;
  const double tol = relative_tolerance * max_abs();
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs((*this)(i, j) - (*this)(j, i)) > tol) return false;
  return true;
}

DenseMatrix& DenseMatrix::operator+=(const DenseMatrix& other) {
  assert(rows_ == other.rows_ && cols_ == other.cols_);
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i] += other.entries_[i];
  return *this;
}

DenseMatrix& DenseMatrix::operator-=(const DenseMatrix& other) {
  assert(rows_ == other.rows_ && cols_ == other.cols_);
  for (std::size_t i = 0; i < entries_.size(); ++i) entries_[i] -= other.entries_[i];
  return *this;
}

DenseMatrix& DenseMatrix::operator*=(double s) {
  for (double& v : entries_) v *= s;
  return *this;
}

DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b) {
  assert(a.cols() == b.rows());
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik != 0.0) axpy(aik, b.row(k), out);
    }
  }
  return c;
}

DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }

DenseMatrix weighted_gram(const DenseMatrix& a, std::span<const double> d) {
  assert(d.size() == a.rows());
  const std::size_t n = a.cols();
  DenseMatrix g(n, n);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    if (d[r] == 0.0) continue;
    const auto ar = a.row(r);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = d[r] * ar[i];
      if (s == 0.0) continue;
      auto gi = g.row(i);
      for (std::size_t j = 0; j <= i; ++j) gi[j] += s * ar[j];
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) g(j, i) = g(i, j);
  return g;
}

double dot(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double norm_inf(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

void axpy(double s, std::span<const double> x, std::span<double> y) {
  assert(x.size() == y.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

Vector subtract(std::span<const double> a, std::span<const double> b) {
  assert(a.size() == b.size());
  Vector d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

namespace {

// First structurally nonzero column of each row of the lower triangle.
std::vector<std::size_t> row_envelope(const DenseMatrix& a) {
  const std::size_t n = a.rows();
  std::vector<std::size_t> first(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = 0;
    while (j < i && a(i, j) == 0.0) ++j;
    first[i] = j;
  }
  return first;
}

}  // namespace

DenseMatrix cholesky(const DenseMatrix& a) {
  if (a.rows() != a.cols()) throw NumericsError("cholesky requires a square matrix");
  const std::size_t n = a.rows();
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a(i, i)));
  const double threshold = 1e-13 * max_diag;

  const auto first = row_envelope(a);
  DenseMatrix c(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = first[i]; j <= i; ++j) {
      double s = a(i, j);
      for (std::size_t k = std::max(first[i], first[j]); k < j; ++k) s -= c(i, k) * c(j, k);
      if (i == j) {
        if (!(s > threshold)) throw NotPositiveDefinite(i);
        c(i, i) = std::sqrt(s);
      } else {
        c(i, j) = s / c(j, j);
      }
    }
  }
  return c;
}

Vector solve_lower(const DenseMatrix& c, std::span<const double> b) {
  const std::size_t n = c.rows();
  Vector x(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    double s = x[i];
    const auto ci = c.row(i);
    for (std::size_t k = 0; k < i; ++k) s -= ci[k] * x[k];
    x[i] = s / ci[i];
  }
  return x;
}

Vector solve_lower_transposed(const DenseMatrix& c, std::span<const double> b) {
  const std::size_t n = c.rows();
  Vector x(b.begin(), b.end());
  for (std::size_t ii = n; ii-- > 0;) {
    x[ii] /= c(ii, ii);
    const double xi = x[ii];
    if (xi == 0.0) continue;
    const auto ci = c.row(ii);
    for (std::size_t k = 0; k < ii; ++k) x[k] -= ci[k] * xi;
  }
  return x;
}

Vector cholesky_solve(const DenseMatrix& c, std::span<const double> b) {
  return solve_lower_transposed(c, solve_lower(c, b));
}

DenseMatrix invert_lower(const DenseMatrix& c) {
  const std::size_t n = c.rows();
  DenseMatrix inv(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    inv(j, j) = 1.0 / c(j, j);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = j; k < i; ++k) s += c(i, k) * inv(k, j);
      inv(i, j) = -s / c(i, i);
    }
  }
  return inv;
}

double log_diagonal_sum(const DenseMatrix& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < c.rows(); ++i) s += std::log(std::abs(c(i, i)));
  return s;
}

double determinant(DenseMatrix a) {
  if (a.rows() != a.cols()) throw NumericsError("determinant requires a square matrix");
  const std::size_t n = a.rows();
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(p, k))) p = i;
    if (a(p, k) == 0.0) return 0.0;
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(p, j), a(k, j));
      det = -det;
    }
    det *= a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      if (f == 0.0) continue;
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
    }
  }
  return det;
}

double log_sum_exp(std::span<const double> logs) {
  if (logs.empty()) throw NumericsError("log_sum_exp of an empty vector");
  for (double v : logs)
    if (std::isnan(v)) throw NumericsError("log_sum_exp: NaN entry");
  const double max = *std::max_element(logs.begin(), logs.end());
  if (max == -std::numeric_limits<double>::infinity()) {
    throw NumericsError("all weights zero");
  }
  if (max == std::numeric_limits<double>::infinity()) return max;
  double sum = 0.0;
  for (double v : logs) sum += std::exp(v - max);
  return max + std::log(sum);
}

double finite_difference_jacobian_det(const VectorMap& map, std::span<const double> point,
                                      double step) {
  const std::size_t n = point.size();
  Vector probe(point.begin(), point.end());
  DenseMatrix jac;
  for (std::size_t j = 0; j < n; ++j) {
    probe[j] = point[j] + step;
    const Vector plus = map(probe);
    probe[j] = point[j] - step;
    const Vector minus = map(probe);
    probe[j] = point[j];
    if (jac.empty()) jac = DenseMatrix(plus.size(), n);
    for (std::size_t i = 0; i < plus.size(); ++i) jac(i, j) = (plus[i] - minus[i]) / (2.0 * step);
  }
  return std::abs(determinant(std::move(jac)));
}

}  // namespace da

namespace da {

unsigned worker_count() {
  if (const char* env = std::getenv("DA_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& body) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t count = std::min<std::size_t>(workers, n);
  std::vector<std::thread> threads;
  threads.reserve(count - 1);
  for (std::size_t t = 1; t < count; ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace da
