#include "da/sde_models.hpp"

#include <cassert>
#include <cmath>
#include <limits>

namespace da {

std::string_view to_string(Integrator integrator) {
  switch (integrator) {
    case Integrator::euler_maruyama: return "euler_maruyama";
    case Integrator::rk4_additive: return "rk4_additive";
    case Integrator::klauder_petersen: return "klauder_petersen";
    case Integrator::exponential_euler: return "exponential_euler";
  }
  return "unknown";
}

Integrator parse_integrator(std::string_view name) {
  if (name == "euler_maruyama") return Integrator::euler_maruyama;
  if (name == "rk4_additive") return Integrator::rk4_additive;
  if (name == "klauder_petersen") return Integrator::klauder_petersen;
  if (name == "exponential_euler") return Integrator::exponential_euler;
  throw ModelError("unknown integrator '" + std::string(name) + "'");
}

std::string_view to_string(NoiseSpectrum spectrum) {
  return spectrum == NoiseSpectrum::white ? "white" : "smooth";
}

NoiseSpectrum parse_noise_spectrum(std::string_view name) {
  if (name == "white") return NoiseSpectrum::white;
  if (name == "smooth") return NoiseSpectrum::smooth;
  throw ModelError("unknown noise spectrum '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------

Vector lorenz_drift(std::span<const double> s, const Lorenz63Params& p) {
  assert(s.size() == 3);
  return {p.sigma * (s[1] - s[0]), s[0] * (p.rho - s[2]) - s[1], s[0] * s[1] - p.beta * s[2]};
}

DenseMatrix LorenzDrift::jacobian(std::span<const double> s) const {
  const auto& p = params_;
  return DenseMatrix(3, 3,
                     {-p.sigma, p.sigma, 0.0,       //
                      p.rho - s[2], -1.0, -s[0],    //
                      s[1], s[0], -p.beta});
}

DenseMatrix LorenzDrift::curvature(std::span<const double>, std::span<const double> v) const {
  // Only ∂²f_y/∂x∂z = −1 and ∂²f_z/∂x∂y = 1 are nonzero.
  return DenseMatrix(3, 3,
                     {0.0, v[2], -v[1],  //
                      v[2], 0.0, 0.0,    //
                      -v[1], 0.0, 0.0});
}

LinearDrift::LinearDrift(DenseMatrix a) : a_(std::move(a)) {
  if (a_.rows() != a_.cols()) throw ModelError("linear drift needs a square matrix");
}

// ---------------------------------------------------------------------------

KpStep kp_step(const Drift& f, std::span<const double> x, double g, double delta,
               std::span<const double> normals_predictor, std::span<const double> normals_corrector) {
  const std::size_t m = x.size();
  const double noise = g * std::sqrt(delta);
  const Vector fx = f.value(x);
  KpStep out{Vector(m), Vector(m)};
  for (std::size_t i = 0; i < m; ++i) {
    out.predictor[i] = x[i] + delta * fx[i] + noise * normals_predictor[i];
  }
  const Vector fstar = f.value(out.predictor);
  for (std::size_t i = 0; i < m; ++i) {
    out.next[i] = x[i] + 0.5 * delta * (fx[i] + fstar[i]) + noise * normals_corrector[i];
  }
  return out;
}

KpStep kp_step(const Drift& f, std::span<const double> x, double g, double delta, RngStream& rng) {
  const Vector w1 = standard_normal_vector(rng, x.size());
  const Vector w2 = standard_normal_vector(rng, x.size());
  return kp_step(f, x, g, delta, w1, w2);
}

namespace {

Vector rk4_deterministic(const Drift& f, std::span<const double> x, double delta) {
  const std::size_t m = x.size();
  Vector tmp(m);
  const Vector k1 = f.value(x);
  for (std::size_t i = 0; i < m; ++i) tmp[i] = x[i] + 0.5 * delta * k1[i];
  const Vector k2 = f.value(tmp);
  for (std::size_t i = 0; i < m; ++i) tmp[i] = x[i] + 0.5 * delta * k2[i];
  const Vector k3 = f.value(tmp);
  for (std::size_t i = 0; i < m; ++i) tmp[i] = x[i] + delta * k3[i];
  const Vector k4 = f.value(tmp);
  Vector out(m);
  for (std::size_t i = 0; i < m; ++i) {
    out[i] = x[i] + delta / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
  return out;
}

}  // namespace

Vector rk4_additive_step(const Drift& f, std::span<const double> x, double g, double delta,
                         std::span<const double> normals) {
  Vector out = rk4_deterministic(f, x, delta);
  axpy(g * std::sqrt(delta), normals, out);
  return out;
}

Vector rk4_additive_step(const Drift& f, std::span<const double> x, double g, double delta,
                         RngStream& rng) {
  return rk4_additive_step(f, x, g, delta, standard_normal_vector(rng, x.size()));
}

Vector euler_maruyama_step(const Drift& f, std::span<const double> x,
                           std::span<const double> amplitudes, double delta,
                           std::span<const double> normals) {
  const Vector fx = f.value(x);
  const double sd = std::sqrt(delta);
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = x[i] + delta * fx[i] + amplitudes[i] * sd * normals[i];
  }
  return out;
}

Vector euler_maruyama_step(const Drift& f, std::span<const double> x,
                           std::span<const double> amplitudes, double delta, RngStream& rng) {
  return euler_maruyama_step(f, x, amplitudes, delta, standard_normal_vector(rng, x.size()));
}

// ---------------------------------------------------------------------------

ExponentialEuler::ExponentialEuler(std::span<const double> eigenvalues,
                                   std::span<const double> spectrum, double g, double delta)
    : delta_(delta),
      propagator_(eigenvalues.size()),
      forcing_weight_(eigenvalues.size()),
      noise_std_(eigenvalues.size()) {
  if (!(delta > 0.0)) throw ModelError("exponential Euler needs a positive time step");
  if (spectrum.size() != eigenvalues.size()) {
    throw ModelError("noise spectrum and eigenvalue counts differ");
  }
  for (std::size_t k = 0; k < eigenvalues.size(); ++k) {
    const double lambda = eigenvalues[k];
    const double z = lambda * delta;
    propagator_[k] = std::exp(z);
    double variance_factor;
    if (std::abs(z) < 1e-8) {
      forcing_weight_[k] = delta * (1.0 + 0.5 * z);
      variance_factor = delta * (1.0 + z);
    } else {
      forcing_weight_[k] = std::expm1(z) / lambda;
      variance_factor = std::expm1(2.0 * z) / (2.0 * lambda);
    }
    if (spectrum[k] < 0.0) throw ModelError("noise spectrum entries must be non-negative");
    noise_std_[k] = g * std::sqrt(spectrum[k] * variance_factor);
  }
}

Vector ExponentialEuler::mean(std::span<const double> u, std::span<const double> nonlinear) const {
  Vector out(u.size());
  for (std::size_t k = 0; k < u.size(); ++k) {
    out[k] = propagator_[k] * u[k] + forcing_weight_[k] * nonlinear[k];
  }
  return out;
}

Vector ExponentialEuler::step(std::span<const double> u, std::span<const double> nonlinear,
                              std::span<const double> normals) const {
  Vector out = mean(u, nonlinear);
  for (std::size_t k = 0; k < u.size(); ++k) out[k] += noise_std_[k] * normals[k];
  return out;
}

// ---------------------------------------------------------------------------

Vector SksParams::wavenumbers() const {
  Vector w(modes);
  for (std::size_t k = 0; k < modes; ++k) {
    w[k] = 2.0 * std::numbers::pi * static_cast<double>(k + 1) / period;
  }
  return w;
}

Vector SksParams::eigenvalues() const {
  Vector lambda = wavenumbers();
  for (double& w : lambda) {
    const double w2 = w * w;
    w = w2 - viscosity * w2 * w2;
  }
  return lambda;
}

Vector SksParams::noise_spectrum() const {
  Vector q(modes, 1.0);
  if (spectrum == NoiseSpectrum::smooth) {
    const Vector w = wavenumbers();
    for (std::size_t k = 0; k < modes; ++k) q[k] = std::exp(-std::abs(w[k]));
  }
  return q;
}

std::size_t sks_unstable_mode_count(const SksParams& params) {
  std::size_t count = 0;
  for (double lambda : params.eigenvalues())
    if (lambda > 0.0) ++count;
  return count;
}

namespace {

// U_j in the odd extension, j in [−m, m]; zero outside and at j = 0.
inline double odd_extension(std::span<const double> u, long j) {
  const long m = static_cast<long>(u.size());
  if (j == 0 || j > m || j < -m) return 0.0;
  return j > 0 ? u[j - 1] : -u[-j - 1];
}

}  // namespace

Vector sks_nonlinear(std::span<const double> u, std::span<const double> wavenumbers) {
  const long m = static_cast<long>(u.size());
  Vector out(u.size(), 0.0);
  for (long k = 1; k <= m; ++k) {
    double sum = 0.0;
    // Only k' with both U_{k'} and U_{k−k'} in range contribute.
    for (long kp = k - m; kp <= m; ++kp) sum += odd_extension(u, kp) * odd_extension(u, k - kp);
    out[k - 1] = -0.5 * wavenumbers[k - 1] * sum;
  }
  return out;
}

Vector sks_nonlinear(std::span<const double> u, const SksParams& params) {
  return sks_nonlinear(u, params.wavenumbers());
}

DenseMatrix sks_nonlinear_jacobian(std::span<const double> u, std::span<const double> wavenumbers) {
  const long m = static_cast<long>(u.size());
  DenseMatrix jac(u.size(), u.size());
  for (long k = 1; k <= m; ++k) {
    const double w = wavenumbers[k - 1];
    for (long i = 1; i <= m; ++i) {
      jac(k - 1, i - 1) = -w * (odd_extension(u, k - i) - odd_extension(u, k + i));
    }
  }
  return jac;
}

DenseMatrix sks_nonlinear_curvature(std::span<const double> v, std::span<const double> wavenumbers) {
  const std::size_t m = v.size();
  DenseMatrix c(m, m);
  // ∂²N_k/∂U_i∂U_j = −ω_k(δ_{i+j,k} − δ_{i−j,k} − δ_{j−i,k})
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      double s = 0.0;
      if (i + j <= m) s -= wavenumbers[i + j - 1] * v[i + j - 1];
      if (i > j) s += wavenumbers[i - j - 1] * v[i - j - 1];
      if (j > i) s += wavenumbers[j - i - 1] * v[j - i - 1];
      c(i - 1, j - 1) = s;
    }
  }
  return c;
}

DenseMatrix sks_physical_matrix(std::span<const double> locations, const SksParams& params) {
  const Vector w = params.wavenumbers();
  DenseMatrix e(locations.size(), params.modes);
  for (std::size_t j = 0; j < locations.size(); ++j)
    for (std::size_t k = 0; k < params.modes; ++k) e(j, k) = -2.0 * std::sin(w[k] * locations[j]);
  return e;
}

Vector sks_physical_values(std::span<const double> u, std::span<const double> locations,
                           const SksParams& params) {
  if (u.size() != params.modes) throw ModelError("coefficient count does not match mode count");
  return sks_physical_matrix(locations, params).multiply(u);
}

Vector sks_equidistant_locations(std::size_t count, const SksParams& params) {
  Vector x(count);
  for (std::size_t j = 0; j < count; ++j) {
    x[j] = static_cast<double>(j) * params.period / static_cast<double>(count);
  }
  return x;
}

// ---------------------------------------------------------------------------

Vector StochasticModel::step(std::span<const double> x, RngStream& rng) const {
  const Vector brownian = standard_normal_vector(rng, dimension());
  Vector aux;
  if (auxiliary_normals() > 0) aux = standard_normal_vector(rng, auxiliary_normals());
  return step(x, brownian, aux);
}

Vector StochasticModel::deterministic_step(std::span<const double> x) const {
  const Vector zeros(dimension(), 0.0);
  const Vector aux(auxiliary_normals(), 0.0);
  return step(x, zeros, aux);
}

DriftModel::DriftModel(std::shared_ptr<const Drift> drift, Vector amplitudes, double delta,
                       Integrator integrator, Vector initial)
    : drift_(std::move(drift)),
      amplitudes_(std::move(amplitudes)),
      delta_(delta),
      integrator_(integrator),
      initial_(std::move(initial)) {
  if (!drift_) throw ModelError("drift model needs a drift");
  const std::size_t m = drift_->dimension();
  if (amplitudes_.size() == 1 && m > 1) amplitudes_.assign(m, amplitudes_[0]);
  if (amplitudes_.size() != m) throw ModelError("noise amplitude count does not match dimension");
  for (double a : amplitudes_)
    if (a < 0.0) throw ModelError("noise amplitudes must be non-negative");
  if (!(delta_ > 0.0)) throw ModelError("time step must be positive");
  if (initial_.size() != m) throw ModelError("initial state has the wrong dimension");
  if (integrator_ == Integrator::exponential_euler) {
    throw ModelError("exponential Euler applies only to the SKS model");
  }
  if (integrator_ == Integrator::klauder_petersen || integrator_ == Integrator::rk4_additive) {
    scalar_amplitude();
  }
}

double DriftModel::scalar_amplitude() const {
  for (double a : amplitudes_)
    if (a != amplitudes_[0]) throw ModelError("scheme requires a scalar noise amplitude");
  return amplitudes_[0];
}

std::size_t DriftModel::auxiliary_normals() const {
  return integrator_ == Integrator::klauder_petersen ? dimension() : 0;
}

Vector DriftModel::step(std::span<const double> x, std::span<const double> brownian,
                        std::span<const double> auxiliary) const {
  switch (integrator_) {
    case Integrator::euler_maruyama:
      return euler_maruyama_step(*drift_, x, amplitudes_, delta_, brownian);
    case Integrator::rk4_additive:
      return rk4_additive_step(*drift_, x, amplitudes_[0], delta_, brownian);
    case Integrator::klauder_petersen:
      return kp_step(*drift_, x, amplitudes_[0], delta_, auxiliary, brownian).next;
    case Integrator::exponential_euler:
      break;
  }
  throw ModelError("unsupported integrator for drift model");
}

bool DriftModel::has_analytic_transition() const {
  return integrator_ == Integrator::euler_maruyama;
}

Vector DriftModel::transition_mean(std::span<const double> x) const {
  if (integrator_ != Integrator::euler_maruyama) return deterministic_step(x);
  Vector out(x.begin(), x.end());
  axpy(delta_, drift_->value(x), out);
  return out;
}

DenseMatrix DriftModel::transition_jacobian(std::span<const double> x) const {
  if (integrator_ != Integrator::euler_maruyama) {
    throw ModelError(std::string("no transition Jacobian for ") +
                     std::string(to_string(integrator_)));
  }
  DenseMatrix j = delta_ * drift_->jacobian(x);
  for (std::size_t i = 0; i < j.rows(); ++i) j(i, i) += 1.0;
  return j;
}

DenseMatrix DriftModel::transition_curvature(std::span<const double> x,
                                             std::span<const double> v) const {
  if (integrator_ != Integrator::euler_maruyama) {
    throw ModelError(std::string("no transition curvature for ") +
                     std::string(to_string(integrator_)));
  }
  return delta_ * drift_->curvature(x, v);
}

Vector DriftModel::transition_variance() const {
  Vector var(amplitudes_.size());
  for (std::size_t i = 0; i < var.size(); ++i) var[i] = amplitudes_[i] * amplitudes_[i] * delta_;
  return var;
}

SksModel::SksModel(SksParams params, double delta)
    : params_(params),
      wavenumbers_(params.wavenumbers()),
      scheme_(params.eigenvalues(), params.noise_spectrum(), params.g, delta) {
  if (params_.modes == 0) throw ModelError("SKS model needs at least one mode");
  if (!(params_.period > 0.0) || !(params_.viscosity > 0.0)) {
    throw ModelError("SKS period and viscosity must be positive");
  }
}

Vector SksModel::step(std::span<const double> x, std::span<const double> brownian,
                      std::span<const double>) const {
  return scheme_.step(x, sks_nonlinear(x, wavenumbers_), brownian);
}

Vector SksModel::transition_mean(std::span<const double> x) const {
  return scheme_.mean(x, sks_nonlinear(x, wavenumbers_));
}

DenseMatrix SksModel::transition_jacobian(std::span<const double> x) const {
  DenseMatrix j = sks_nonlinear_jacobian(x, wavenumbers_);
  const auto& w = scheme_.forcing_weight();
  const auto& e = scheme_.propagator();
  for (std::size_t k = 0; k < j.rows(); ++k) {
    for (double& v : j.row(k)) v *= w[k];
    j(k, k) += e[k];
  }
  return j;
}

DenseMatrix SksModel::transition_curvature(std::span<const double>, std::span<const double> v) const {
  Vector weighted(v.begin(), v.end());
  const auto& w = scheme_.forcing_weight();
  for (std::size_t k = 0; k < weighted.size(); ++k) weighted[k] *= w[k];
  return sks_nonlinear_curvature(weighted, wavenumbers_);
}

Vector SksModel::transition_variance() const {
  Vector var = scheme_.noise_std();
  for (double& s : var) s *= s;
  return var;
}

// ---------------------------------------------------------------------------

ObservationModel::ObservationModel(DenseMatrix a, ObservationNonlinearity nonlinearity,
                                   Vector noise_std, std::size_t gap)
    : a_(std::move(a)),
      nonlinearity_(nonlinearity),
      noise_std_(std::move(noise_std)),
      gap_(gap) {
  if (gap_ < 1) throw ModelError("observation gap must be at least one step");
  if (noise_std_.size() == 1 && a_.rows() > 1) noise_std_.assign(a_.rows(), noise_std_[0]);
  if (noise_std_.size() != a_.rows()) throw ModelError("noise size does not match observations");
  precision_.resize(noise_std_.size());
  for (std::size_t i = 0; i < noise_std_.size(); ++i) {
    if (!(noise_std_[i] >= 0.0)) throw ModelError("observation noise must be non-negative");
    if (noise_std_[i] == 0.0) {
      singular_ = true;
      precision_[i] = std::numeric_limits<double>::infinity();
    } else {
      precision_[i] = 1.0 / (noise_std_[i] * noise_std_[i]);
    }
  }
  if (nonlinearity_ == ObservationNonlinearity::none && !singular_) {
    linear_gram_ = weighted_gram(a_, precision_);
  }
}

ObservationModel ObservationModel::identity(std::size_t m, double noise_std, std::size_t gap) {
  return ObservationModel(DenseMatrix::identity(m), ObservationNonlinearity::none, {noise_std},
                          gap);
}

ObservationModel ObservationModel::select(std::size_t m, std::span<const std::size_t> indices,
                                          double noise_std, std::size_t gap) {
  DenseMatrix a(indices.size(), m);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= m) throw ModelError("observed index out of range");
    a(r, indices[r]) = 1.0;
  }
  return ObservationModel(std::move(a), ObservationNonlinearity::none, {noise_std}, gap);
}

ObservationModel ObservationModel::sks_physical(const SksParams& params,
                                                std::span<const double> locations,
                                                ObservationNonlinearity nonlinearity,
                                                double noise_std, std::size_t gap) {
  return ObservationModel(sks_physical_matrix(locations, params), nonlinearity, {noise_std}, gap);
}

Vector ObservationModel::apply(std::span<const double> x) const {
  Vector y = a_.multiply(x);
  if (nonlinearity_ == ObservationNonlinearity::cubic) {
    for (double& v : y) v += v * v * v;
  }
  return y;
}

DenseMatrix ObservationModel::jacobian(std::span<const double> x) const {
  if (nonlinearity_ == ObservationNonlinearity::none) return a_;
  const Vector y = a_.multiply(x);
  DenseMatrix j = a_;
  for (std::size_t r = 0; r < j.rows(); ++r) {
    const double slope = 1.0 + 3.0 * y[r] * y[r];
    for (double& v : j.row(r)) v *= slope;
  }
  return j;
}

double ObservationModel::likelihood_value(std::span<const double> x,
                                          std::span<const double> b) const {
  const Vector hx = apply(x);
  double s = 0.0;
  for (std::size_t i = 0; i < hx.size(); ++i) {
    const double r = hx[i] - b[i];
    if (r == 0.0) continue;  // exact match under zero noise contributes nothing
    s += precision_[i] * r * r;
  }
  return 0.5 * s;
}

ObservationModel::Term ObservationModel::likelihood_term(std::span<const double> x,
                                                         std::span<const double> b,
                                                         bool with_hessian,
                                                         bool exact_hessian) const {
  if (singular_) throw ModelError("observation noise covariance is singular");
  Term term;
  const Vector y = a_.multiply(x);
  const std::size_t k = y.size();
  Vector weighted_residual(k);  // W (h − b)
  Vector slope(k, 1.0);         // c'(y)
  for (std::size_t i = 0; i < k; ++i) {
    double h = y[i];
    if (nonlinearity_ == ObservationNonlinearity::cubic) {
      h += y[i] * y[i] * y[i];
      slope[i] = 1.0 + 3.0 * y[i] * y[i];
    }
    const double r = h - b[i];
    term.value += 0.5 * precision_[i] * r * r;
    weighted_residual[i] = precision_[i] * r;
  }
  Vector chain(k);
  for (std::size_t i = 0; i < k; ++i) chain[i] = slope[i] * weighted_residual[i];
  term.gradient = a_.multiply_transposed(chain);

  if (with_hessian) {
    if (nonlinearity_ == ObservationNonlinearity::none) {
      term.hessian = linear_gram_;
    } else {
      Vector d(k);
      for (std::size_t i = 0; i < k; ++i) {
        d[i] = precision_[i] * slope[i] * slope[i];
        if (exact_hessian) d[i] += weighted_residual[i] * 6.0 * y[i];
      }
      term.hessian = weighted_gram(a_, d);
    }
  }
  return term;
}

Vector ObservationModel::observe(std::span<const double> x, RngStream& rng) const {
  Vector b = apply(x);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] += noise_std_[i] * rng.standard_normal();
  return b;
}

}  // namespace da
