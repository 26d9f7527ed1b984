#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "da/numerics.hpp"
#include "da/rng.hpp"

namespace da {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Integrator { euler_maruyama, rk4_additive, klauder_petersen, exponential_euler };

std::string_view to_string(Integrator integrator);
Integrator parse_integrator(std::string_view name);

// ---------------------------------------------------------------------------
// Drift functions f(x) with first and second derivatives.

class Drift {
 public:
  virtual ~Drift() = default;
  virtual std::size_t dimension() const = 0;
  virtual Vector value(std::span<const double> x) const = 0;
  virtual DenseMatrix jacobian(std::span<const double> x) const = 0;
  /// Σ_a v_a ∇²f_a(x), an m×m symmetric matrix.
  virtual DenseMatrix curvature(std::span<const double> x, std::span<const double> v) const = 0;
};

struct Lorenz63Params {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
  double g = std::numbers::sqrt2;
  std::array<double, 3> initial = {-5.91652, -5.52332, 24.5723};
};

/// (σ(y−x), x(ρ−z)−y, xy−βz)
Vector lorenz_drift(std::span<const double> state, const Lorenz63Params& params);

class LorenzDrift final : public Drift {
 public:
  explicit LorenzDrift(Lorenz63Params params) : params_(params) {}
  std::size_t dimension() const override { return 3; }
  Vector value(std::span<const double> x) const override { return lorenz_drift(x, params_); }
  DenseMatrix jacobian(std::span<const double> x) const override;
  DenseMatrix curvature(std::span<const double> x, std::span<const double> v) const override;
  const Lorenz63Params& params() const noexcept { return params_; }

 private:
  Lorenz63Params params_;
};

/// f(x) = A·x
class LinearDrift final : public Drift {
 public:
  explicit LinearDrift(DenseMatrix a);
  std::size_t dimension() const override { return a_.rows(); }
  Vector value(std::span<const double> x) const override { return a_.multiply(x); }
  DenseMatrix jacobian(std::span<const double>) const override { return a_; }
  DenseMatrix curvature(std::span<const double>, std::span<const double>) const override {
    return DenseMatrix(a_.rows(), a_.rows());
  }

 private:
  DenseMatrix a_;
};

// ---------------------------------------------------------------------------
// Integrator steps. `normals` are standard normal vectors; the schemes scale
// them by √δ themselves.

struct KpStep {
  Vector predictor;  // x*
  Vector next;       // x'
};

/// Klauder–Petersen predictor/corrector with additive noise g.
KpStep kp_step(const Drift& f, std::span<const double> x, double g, double delta,
               std::span<const double> normals_predictor, std::span<const double> normals_corrector);
KpStep kp_step(const Drift& f, std::span<const double> x, double g, double delta, RngStream& rng);

/// Classical RK4 for the drift followed by g·√δ·ξ.
Vector rk4_additive_step(const Drift& f, std::span<const double> x, double g, double delta,
                         std::span<const double> normals);
Vector rk4_additive_step(const Drift& f, std::span<const double> x, double g, double delta,
                         RngStream& rng);

/// x + δ f(x) + G√δ ΔW with G diagonal (one amplitude per component).
Vector euler_maruyama_step(const Drift& f, std::span<const double> x,
                           std::span<const double> amplitudes, double delta,
                           std::span<const double> normals);
Vector euler_maruyama_step(const Drift& f, std::span<const double> x,
                           std::span<const double> amplitudes, double delta, RngStream& rng);

/// Exponential Euler for dU = (diag(λ)U + N(U))dt + g√D dW with D = diag(q).
///
/// Holds the diagonal propagators e^{λδ}, λ⁻¹(e^{λδ}−1) and the noise standard
/// deviations g·sqrt(q·(e^{2λδ}−1)/(2λ)); entries with |λδ| < 1e-8 use the
/// series limits δ(1 + λδ/2) and δ(1 + λδ).
class ExponentialEuler {
 public:
  ExponentialEuler(std::span<const double> eigenvalues, std::span<const double> spectrum,
                   double g, double delta);

  std::size_t dimension() const noexcept { return propagator_.size(); }
  double delta() const noexcept { return delta_; }
  const Vector& propagator() const noexcept { return propagator_; }
  const Vector& forcing_weight() const noexcept { return forcing_weight_; }
  const Vector& noise_std() const noexcept { return noise_std_; }

  /// e^{λδ}U + λ⁻¹(e^{λδ}−1)·N + σ∘ξ
  Vector step(std::span<const double> u, std::span<const double> nonlinear,
              std::span<const double> normals) const;
  /// Deterministic part only.
  Vector mean(std::span<const double> u, std::span<const double> nonlinear) const;

 private:
  double delta_;
  Vector propagator_;
  Vector forcing_weight_;
  Vector noise_std_;
};

// ---------------------------------------------------------------------------
// Stochastic Kuramoto–Sivashinsky in imaginary-part Fourier coordinates.

enum class NoiseSpectrum { white, smooth };

std::string_view to_string(NoiseSpectrum spectrum);
NoiseSpectrum parse_noise_spectrum(std::string_view name);

struct SksParams {
  double period = 16.0 * std::numbers::pi;
  double viscosity = 0.251;
  std::size_t modes = 128;
  double g = 4.0;
  NoiseSpectrum spectrum = NoiseSpectrum::smooth;

  /// ω_k = 2πk/period, k = 1..modes (index k−1).
  Vector wavenumbers() const;
  /// λ_k = ω_k² − ν ω_k⁴
  Vector eigenvalues() const;
  /// q_k: 1 for white noise, exp(−|ω_k|) for smooth noise.
  Vector noise_spectrum() const;
};

/// Number of k in 1..m with λ_k > 0.
std::size_t sks_unstable_mode_count(const SksParams& params);

/// {N(U)}_k = −(ω_k/2) Σ_{k'} U_{k'} U_{k−k'} with U_{−j} = −U_j, U_0 = 0 and
/// indices outside [−m, m] dropped.
Vector sks_nonlinear(std::span<const double> u, std::span<const double> wavenumbers);
Vector sks_nonlinear(std::span<const double> u, const SksParams& params);
/// ∂N_k/∂U_i = −ω_k (U_{k−i} − U_{k+i}) in the odd extension.
DenseMatrix sks_nonlinear_jacobian(std::span<const double> u, std::span<const double> wavenumbers);
/// Σ_k v_k ∇²N_k (independent of U since N is quadratic).
DenseMatrix sks_nonlinear_curvature(std::span<const double> v, std::span<const double> wavenumbers);

/// u(x_j) = −2 Σ_k U_k sin(ω_k x_j)
Vector sks_physical_values(std::span<const double> u, std::span<const double> locations,
                           const SksParams& params);
/// Matrix mapping U to physical values at the given locations.
DenseMatrix sks_physical_matrix(std::span<const double> locations, const SksParams& params);
/// j·period/count for j = 0..count−1.
Vector sks_equidistant_locations(std::size_t count, const SksParams& params);

// ---------------------------------------------------------------------------
// Discrete-time models x^{n+1} = R(x^n) + G ΔW^{n+1}.

class StochasticModel {
 public:
  virtual ~StochasticModel() = default;

  virtual std::size_t dimension() const = 0;
  virtual double time_step() const = 0;
  virtual Integrator integrator() const = 0;
  virtual Vector initial_state() const = 0;

  /// Standard normals beyond the Brownian increment that one step consumes
  /// (the KP predictor draws m of them).
  virtual std::size_t auxiliary_normals() const { return 0; }

  /// One step. `brownian` holds ΔW/√δ (length m); `auxiliary` holds the
  /// extra draws (length auxiliary_normals()).
  virtual Vector step(std::span<const double> x, std::span<const double> brownian,
                      std::span<const double> auxiliary) const = 0;
  Vector step(std::span<const double> x, RngStream& rng) const;
  Vector deterministic_step(std::span<const double> x) const;

  // Transition structure used to assemble posteriors (not KP).
  virtual Vector transition_mean(std::span<const double> x) const = 0;
  virtual DenseMatrix transition_jacobian(std::span<const double> x) const = 0;
  /// Σ_a v_a ∇²R_a(x)
  virtual DenseMatrix transition_curvature(std::span<const double> x,
                                           std::span<const double> v) const = 0;
  /// Diagonal of G·Gᵀ.
  virtual Vector transition_variance() const = 0;
  /// False when the transition derivatives above are not available.
  virtual bool has_analytic_transition() const { return true; }
};

/// ODE-drift model with diagonal additive noise, integrated by Euler–Maruyama,
/// RK4-additive or Klauder–Petersen.
class DriftModel final : public StochasticModel {
 public:
  DriftModel(std::shared_ptr<const Drift> drift, Vector amplitudes, double delta,
             Integrator integrator, Vector initial);

  std::size_t dimension() const override { return drift_->dimension(); }
  double time_step() const override { return delta_; }
  Integrator integrator() const override { return integrator_; }
  Vector initial_state() const override { return initial_; }
  std::size_t auxiliary_normals() const override;

  Vector step(std::span<const double> x, std::span<const double> brownian,
              std::span<const double> auxiliary) const override;
  using StochasticModel::step;

  Vector transition_mean(std::span<const double> x) const override;
  DenseMatrix transition_jacobian(std::span<const double> x) const override;
  DenseMatrix transition_curvature(std::span<const double> x,
                                   std::span<const double> v) const override;
  Vector transition_variance() const override;
  bool has_analytic_transition() const override;

  const Drift& drift() const noexcept { return *drift_; }
  const Vector& amplitudes() const noexcept { return amplitudes_; }
  /// Scalar noise amplitude; throws unless all amplitudes agree (KP needs that).
  double scalar_amplitude() const;

 private:
  std::shared_ptr<const Drift> drift_;
  Vector amplitudes_;
  double delta_;
  Integrator integrator_;
  Vector initial_;
};

/// Galerkin-truncated SKS advanced by exponential Euler.
class SksModel final : public StochasticModel {
 public:
  SksModel(SksParams params, double delta);

  std::size_t dimension() const override { return params_.modes; }
  double time_step() const override { return scheme_.delta(); }
  Integrator integrator() const override { return Integrator::exponential_euler; }
  Vector initial_state() const override { return Vector(params_.modes, 0.0); }

  Vector step(std::span<const double> x, std::span<const double> brownian,
              std::span<const double> auxiliary) const override;
  using StochasticModel::step;

  Vector transition_mean(std::span<const double> x) const override;
  DenseMatrix transition_jacobian(std::span<const double> x) const override;
  DenseMatrix transition_curvature(std::span<const double> x,
                                   std::span<const double> v) const override;
  Vector transition_variance() const override;

  const SksParams& params() const noexcept { return params_; }
  const Vector& wavenumbers() const noexcept { return wavenumbers_; }
  const ExponentialEuler& scheme() const noexcept { return scheme_; }

 private:
  SksParams params_;
  Vector wavenumbers_;
  ExponentialEuler scheme_;
};

// ---------------------------------------------------------------------------
// Observations b = h(x) + Q·V with h(x) = c(A·x), c the identity or y + y³
// applied componentwise, and Q diagonal.

enum class ObservationNonlinearity { none, cubic };

class ObservationModel {
 public:
  ObservationModel(DenseMatrix a, ObservationNonlinearity nonlinearity, Vector noise_std,
                   std::size_t gap);

  static ObservationModel identity(std::size_t m, double noise_std, std::size_t gap = 1);
  static ObservationModel select(std::size_t m, std::span<const std::size_t> indices,
                                 double noise_std, std::size_t gap = 1);
  static ObservationModel sks_physical(const SksParams& params, std::span<const double> locations,
                                       ObservationNonlinearity nonlinearity, double noise_std,
                                       std::size_t gap = 1);

  std::size_t observed_dimension() const noexcept { return a_.rows(); }
  std::size_t state_dimension() const noexcept { return a_.cols(); }
  std::size_t gap() const noexcept { return gap_; }
  ObservationNonlinearity nonlinearity() const noexcept { return nonlinearity_; }
  const DenseMatrix& linear_part() const noexcept { return a_; }
  const Vector& noise_std() const noexcept { return noise_std_; }
  /// Diagonal of (Q·Qᵀ)⁻¹; +∞ for noise-free components.
  const Vector& precision() const noexcept { return precision_; }
  /// True when some component is observed without noise.
  bool singular() const noexcept { return singular_; }

  Vector apply(std::span<const double> x) const;
  DenseMatrix jacobian(std::span<const double> x) const;

  struct Term {
    double value = 0.0;  // ½ (h(x)−b)ᵀ(QQᵀ)⁻¹(h(x)−b)
    Vector gradient;     // m
    DenseMatrix hessian;  // m×m; Gauss–Newton part plus curvature when requested
  };
  /// Negative log-likelihood term and its derivatives.
  Term likelihood_term(std::span<const double> x, std::span<const double> b, bool with_hessian,
                       bool exact_hessian) const;
  double likelihood_value(std::span<const double> x, std::span<const double> b) const;

  /// h(x) + Q·V
  Vector observe(std::span<const double> x, RngStream& rng) const;

 private:
  DenseMatrix a_;
  ObservationNonlinearity nonlinearity_;
  Vector noise_std_;
  Vector precision_;
  std::size_t gap_;
  bool singular_ = false;
  DenseMatrix linear_gram_;  // AᵀWA, cached when nonlinearity is none
};

}  // namespace da
