#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>

#include "da/numerics.hpp"
#include "da/rng.hpp"
#include "da/sde_models.hpp"

namespace da {

/// A twice-differentiable function to be minimized and sampled from.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual std::size_t dimension() const = 0;
  virtual double value(std::span<const double> z) const = 0;
  virtual Vector gradient(std::span<const double> z) const = 0;
  virtual DenseMatrix hessian(std::span<const double> z) const = 0;
  /// A positive-definite substitute used when hessian() is not; none by default.
  virtual std::optional<DenseMatrix> fallback_hessian(std::span<const double>) const {
    return std::nullopt;
  }
};

/// Negative log of the transition densities across one observation gap times
/// the likelihood of the observation closing it, normalization omitted.
///
/// The unknown is the stacked block [X^{n+1}, …, X^{n+r}]; for the
/// Klauder–Petersen scheme every step contributes the pair (X^{*}, X), so the
/// block is [X^{*,n+1}, X^{n+1}, …] with both stage residuals weighted by
/// 1/(δg²). Gradients and Hessians are assembled from the drift and
/// observation derivatives; fallback_hessian() drops the second-derivative
/// terms (Gauss–Newton).
class PosteriorFunction final : public Objective {
 public:
  PosteriorFunction(const StochasticModel& model, const ObservationModel& observation,
                    Vector previous_state, Vector observation_value, std::size_t gap);

  std::size_t dimension() const override { return block_dimension_; }
  double value(std::span<const double> z) const override;
  Vector gradient(std::span<const double> z) const override;
  DenseMatrix hessian(std::span<const double> z) const override;
  std::optional<DenseMatrix> fallback_hessian(std::span<const double> z) const override;

  std::size_t gap() const noexcept { return gap_; }
  std::size_t state_dimension() const noexcept { return state_dimension_; }
  bool paired_stages() const noexcept { return paired_; }
  const Vector& previous_state() const noexcept { return previous_; }

  /// Noise-free model run over the gap, laid out as a block.
  Vector model_run_guess() const;
  /// The state at the observation time, i.e. the last m entries of the block.
  Vector final_state(std::span<const double> z) const;

 private:
  struct Evaluation {
    double value = 0.0;
    Vector gradient;
    DenseMatrix hessian;
  };
  enum class Order { value, gradient, hessian, gauss_newton };
  Evaluation evaluate(std::span<const double> z, Order order) const;
  void evaluate_transitions(std::span<const double> z, Order order, Evaluation& out) const;
  void evaluate_paired_stages(std::span<const double> z, Order order, Evaluation& out) const;

  const StochasticModel& model_;
  const ObservationModel& observation_;
  const Drift* drift_ = nullptr;  // set for the KP scheme
  Vector previous_;
  Vector b_;
  std::size_t gap_;
  std::size_t state_dimension_;
  bool paired_;
  std::size_t block_dimension_;
  Vector transition_precision_;
};

class MinimizationError : public std::runtime_error {
 public:
  MinimizationError(const std::string& what, Vector best, double best_value)
      : std::runtime_error(what), best_(std::move(best)), best_value_(best_value) {}
  const Vector& best_iterate() const noexcept { return best_; }
  double best_value() const noexcept { return best_value_; }

 private:
  Vector best_;
  double best_value_;
};

struct MinimizationOptions {
  double gradient_tolerance = 1e-9;  // relative to max(1, |F|), max-norm
  int max_iterations = 100;
  int max_step_halvings = 60;
};

enum class MapFactorChoice { hessian, identity };

/// Minimizer of F together with the map factor L of the random map.
///
/// With the Hessian choice H = C·Cᵀ and L = C⁻¹, so that LᵀL = H⁻¹; Lᵀη is
/// applied by a triangular solve rather than through an explicit inverse.
struct MinimizationResult {
  Vector minimizer;
  double minimum = 0.0;
  Vector gradient;  // residual ∇F at the minimizer
  DenseMatrix hessian;
  DenseMatrix hessian_factor;  // C, lower triangular
  int iterations = 0;
  bool converged = false;
  bool used_fallback = false;  // a substitute Hessian was needed at some point
  MapFactorChoice map_choice = MapFactorChoice::hessian;

  std::size_t dimension() const noexcept { return minimizer.size(); }
  DenseMatrix map_factor() const;
  double log_abs_det_map_factor() const;
  Vector apply_map_transpose(std::span<const double> eta) const;
};

/// Damped Newton iteration with step halving. Stops when ‖∇F‖∞ falls below
/// tolerance·max(1, |F|) or the Newton decrement reaches round-off level.
MinimizationResult minimize_posterior(const Objective& f, Vector init,
                                      const MinimizationOptions& options = {});

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LambdaOptions {
  double tolerance = 1e-8;  // on |F(X) − φ − ρ/2| relative to max(1, ρ/2)
  int max_newton_iterations = 50;
  int max_bisection_iterations = 200;
};

enum class JacobianDerivative { analytic, numerical };

struct RandomMapSample {
  Vector xi;
  double rho = 0.0;
  Vector eta;
  Vector direction;  // Lᵀη
  double lambda = 0.0;
  Vector position;   // μ + λ Lᵀη
  double slope = 0.0;  // ∇F(X)·Lᵀη
  double dlambda_drho = 0.0;
  double log_jacobian = 0.0;
  double log_weight = 0.0;
  int iterations = 0;  // Newton corrections to λ
  bool bisection_used = false;
};

/// Solves F(μ + λLᵀη) − φ = ρ/2 for λ by Newton's method from √ρ, with a
/// doubling/bisection fallback.
RandomMapSample solve_lambda(const Objective& f, const MinimizationResult& min, Vector xi,
                             const LambdaOptions& options = {});

/// dλ/dρ by a one-sided difference with Δλ = 1e-5·√ρ.
double numerical_dlambda_drho(const Objective& f, const MinimizationResult& min,
                              const RandomMapSample& sample);

/// log|det ∂X/∂ξ| of the random map, given dλ/dρ stored in the sample.
double jacobian_log(const RandomMapSample& sample, const MinimizationResult& min,
                    std::size_t block_dimension);

struct SamplerOptions {
  LambdaOptions lambda;
  JacobianDerivative derivative = JacobianDerivative::analytic;
};

/// Draws ξ, solves for λ and returns the sample with log-weight −φ + log J.
RandomMapSample implicit_sample(const Objective& f, const MinimizationResult& min, RngStream& rng,
                                const SamplerOptions& options = {});
/// As implicit_sample() with a given reference draw.
RandomMapSample implicit_sample_from(const Objective& f, const MinimizationResult& min, Vector xi,
                                     const SamplerOptions& options = {});

struct QuadraticSample {
  Vector xi;
  Vector position;
  double model_value = 0.0;  // F⁰(X) = φ + ½ξᵀξ
  double true_value = 0.0;   // F(X)
  double log_weight = 0.0;
};

/// Samples the quadratic approximation F⁰ around μ and reweights by the
/// target-to-proposal ratio: log w = −φ − (F(X) − F⁰(X)) + log|det L|.
QuadraticSample quadratic_approx_sample(const Objective& f, const MinimizationResult& min,
                                        RngStream& rng);
QuadraticSample quadratic_approx_sample_from(const Objective& f, const MinimizationResult& min,
                                             Vector xi);

}  // namespace da
