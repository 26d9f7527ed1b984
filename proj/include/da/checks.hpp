#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace da {

struct SuiteReport {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct JacobianCheckOptions {
  std::size_t quadratic_cases = 50;  // dimensions cycle through 2, 3, 6
  std::size_t nonlinear_cases = 50;  // dimensions cycle through 2, 3
  double quadratic_tolerance = 1e-10;
  double nonlinear_relative_tolerance = 1e-3;
  std::uint64_t seed = 1;
};

/// Random-map log-Jacobian against log|det L| on linear-Gaussian posteriors
/// and against a finite-difference determinant on cubic-observation ones.
SuiteReport check_jacobian(const JacobianCheckOptions& options = {});

struct KalmanCheckOptions {
  std::size_t particles = 1000;
  std::size_t steps = 50;
  std::size_t seeds = 20;
  double standard_errors = 3.0;
  double jacobian_tolerance = 1e-10;
  std::uint64_t seed = 1;
};

/// Implicit filter on x' = 0.9x + 0.5ΔW, b = x + 0.3V against the Kalman
/// recursion: the seed-averaged difference of posterior means stays within
/// the pooled Monte Carlo standard error at every step, and log J is the
/// same for every particle.
SuiteReport check_kalman(const KalmanCheckOptions& options = {});

struct ResamplingCheckOptions {
  std::size_t replications = 10000;
  double standard_errors = 3.0;
  std::uint64_t seed = 1;
};

/// Mean offspring counts equal M·w for every scheme.
SuiteReport check_resampling(const ResamplingCheckOptions& options = {});

struct ImportanceCheckOptions {
  std::size_t samples = 100000;
  std::size_t bins = 20;
  double threshold = 43.82;  // χ²₁₉ quantile at 1 − 10⁻³
  std::uint64_t seed = 1;
};

/// Weighted random-map samples of exp(−F) for F(x) = ½x² + ¼x⁴ − 0.8x binned
/// against a quadrature oracle, χ² with delta-method variances.
SuiteReport check_importance(const ImportanceCheckOptions& options = {});

}  // namespace da
