#include "da/implicit_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace da {

namespace {

// H[ro.., co..] += s·M
void add_block(DenseMatrix& h, std::size_t ro, std::size_t co, const DenseMatrix& m,
               double s = 1.0) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto src = m.row(i);
    auto dst = h.row(ro + i).subspan(co, m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) dst[j] += s * src[j];
  }
}

// H[o.., o..] += s·diag(w)
void add_diagonal(DenseMatrix& h, std::size_t o, std::span<const double> w, double s = 1.0) {
  for (std::size_t i = 0; i < w.size(); ++i) h(o + i, o + i) += s * w[i];
}

// diag(w)·M
DenseMatrix scale_rows(std::span<const double> w, DenseMatrix m) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (double& v : m.row(i)) v *= w[i];
  return m;
}

void add_to(std::span<double> g, std::size_t offset, std::span<const double> v, double s = 1.0) {
  for (std::size_t i = 0; i < v.size(); ++i) g[offset + i] += s * v[i];
}

}  // namespace

PosteriorFunction::PosteriorFunction(const StochasticModel& model,
                                     const ObservationModel& observation, Vector previous_state,
                                     Vector observation_value, std::size_t gap)
    : model_(model),
      observation_(observation),
      previous_(std::move(previous_state)),
      b_(std::move(observation_value)),
      gap_(gap),
      state_dimension_(model.dimension()),
      paired_(model.integrator() == Integrator::klauder_petersen) {
  if (gap_ < 1) throw ModelError("observation gap must be at least one step");
  if (previous_.size() != state_dimension_) throw ModelError("previous state has wrong dimension");
  if (observation_.state_dimension() != state_dimension_) {
    throw ModelError("observation operator does not match the model dimension");
  }
  if (b_.size() != observation_.observed_dimension()) {
    throw ModelError("observation vector has wrong dimension");
  }
  if (observation_.singular()) throw ModelError("observation noise covariance is singular");

  block_dimension_ = gap_ * state_dimension_ * (paired_ ? 2 : 1);
  if (paired_) {
    const auto* drift_model = dynamic_cast<const DriftModel*>(&model_);
    if (drift_model == nullptr) throw ModelError("Klauder-Petersen posterior needs a drift model");
    drift_ = &drift_model->drift();
    const double g = drift_model->scalar_amplitude();
    const double variance = g * g * model_.time_step();
    if (!(variance > 0.0)) throw ModelError("model noise covariance is singular");
    transition_precision_.assign(state_dimension_, 1.0 / variance);
  } else {
    if (!model_.has_analytic_transition()) {
      throw ModelError(std::string("posterior derivatives are not available for ") +
                       std::string(to_string(model_.integrator())));
    }
    const Vector variance = model_.transition_variance();
    transition_precision_.resize(variance.size());
    for (std::size_t i = 0; i < variance.size(); ++i) {
      if (!(variance[i] > 0.0)) throw ModelError("model noise covariance is singular");
      transition_precision_[i] = 1.0 / variance[i];
    }
  }
}

Vector PosteriorFunction::model_run_guess() const {
  const std::size_t m = state_dimension_;
  Vector z(block_dimension_);
  Vector x = previous_;
  for (std::size_t i = 0; i < gap_; ++i) {
    if (paired_) {
      const auto* drift_model = static_cast<const DriftModel*>(&model_);
      const Vector zeros(m, 0.0);
      const KpStep s = kp_step(*drift_, x, drift_model->scalar_amplitude(), model_.time_step(),
                               zeros, zeros);
      std::copy(s.predictor.begin(), s.predictor.end(), z.begin() + 2 * i * m);
      std::copy(s.next.begin(), s.next.end(), z.begin() + (2 * i + 1) * m);
      x = s.next;
    } else {
      x = model_.transition_mean(x);
      std::copy(x.begin(), x.end(), z.begin() + i * m);
    }
  }
  return z;
}

Vector PosteriorFunction::final_state(std::span<const double> z) const {
  return Vector(z.end() - static_cast<std::ptrdiff_t>(state_dimension_), z.end());
}

void PosteriorFunction::evaluate_transitions(std::span<const double> z, Order order,
                                             Evaluation& out) const {
  const std::size_t m = state_dimension_;
  const auto& w = transition_precision_;
  const bool want_gradient = order != Order::value;
  const bool want_hessian = order == Order::hessian || order == Order::gauss_newton;

  for (std::size_t i = 0; i < gap_; ++i) {
    const std::size_t xo = i * m;
    const auto x = z.subspan(xo, m);
    const auto prev = i == 0 ? std::span<const double>(previous_) : z.subspan(xo - m, m);
    const Vector mean = model_.transition_mean(prev);
    Vector e(m);
    for (std::size_t k = 0; k < m; ++k) {
      const double r = x[k] - mean[k];
      out.value += 0.5 * w[k] * r * r;
      e[k] = w[k] * r;
    }
    if (!want_gradient) continue;
    add_to(out.gradient, xo, e);
    if (want_hessian) add_diagonal(out.hessian, xo, w);
    if (i == 0) continue;

    const std::size_t po = xo - m;
    const DenseMatrix jac = model_.transition_jacobian(prev);
    add_to(out.gradient, po, jac.multiply_transposed(e), -1.0);
    if (!want_hessian) continue;
    const DenseMatrix wj = scale_rows(w, jac);  // W·J
    add_block(out.hessian, po, po, jac.transposed() * wj);
    if (order == Order::hessian) add_block(out.hessian, po, po, model_.transition_curvature(prev, e), -1.0);
    add_block(out.hessian, xo, po, wj, -1.0);
    add_block(out.hessian, po, xo, wj.transposed(), -1.0);
  }
}

void PosteriorFunction::evaluate_paired_stages(std::span<const double> z, Order order,
                                               Evaluation& out) const {
  const std::size_t m = state_dimension_;
  const double delta = model_.time_step();
  const auto& w = transition_precision_;
  const bool want_gradient = order != Order::value;
  const bool want_hessian = order == Order::hessian || order == Order::gauss_newton;
  const DenseMatrix eye = DenseMatrix::identity(m);

  for (std::size_t i = 0; i < gap_; ++i) {
    const std::size_t so = 2 * i * m;  // predictor X*
    const std::size_t xo = so + m;     // corrector X
    const bool prev_free = i > 0;
    const std::size_t po = prev_free ? so - m : 0;
    const auto a = prev_free ? z.subspan(po, m) : std::span<const double>(previous_);
    const auto s = z.subspan(so, m);
    const auto x = z.subspan(xo, m);

    const Vector fa = drift_->value(a);
    const Vector fs = drift_->value(s);
    Vector e1(m), e2(m);
    for (std::size_t k = 0; k < m; ++k) {
      const double r1 = s[k] - a[k] - delta * fa[k];
      const double r2 = x[k] - a[k] - 0.5 * delta * (fa[k] + fs[k]);
      out.value += 0.5 * w[k] * (r1 * r1 + r2 * r2);
      e1[k] = w[k] * r1;
      e2[k] = w[k] * r2;
    }
    if (!want_gradient) continue;

    const DenseMatrix js = drift_->jacobian(s);
    // ∂r2/∂X* = −(δ/2) J(X*)
    const DenseMatrix d2s = (-0.5 * delta) * js;
    add_to(out.gradient, so, e1);
    add_to(out.gradient, so, d2s.multiply_transposed(e2));
    add_to(out.gradient, xo, e2);

    DenseMatrix d1a, d2a;
    if (prev_free) {
      const DenseMatrix ja = drift_->jacobian(a);
      d1a = (-1.0) * (eye + delta * ja);
      d2a = (-1.0) * (eye + (0.5 * delta) * ja);
      add_to(out.gradient, po, d1a.multiply_transposed(e1));
      add_to(out.gradient, po, d2a.multiply_transposed(e2));
    }
    if (!want_hessian) continue;

    const DenseMatrix wd2s = scale_rows(w, d2s);
    add_diagonal(out.hessian, so, w);
    add_block(out.hessian, so, so, d2s.transposed() * wd2s);
    add_diagonal(out.hessian, xo, w);
    add_block(out.hessian, so, xo, scale_rows(w, d2s).transposed());
    add_block(out.hessian, xo, so, wd2s);
    if (order == Order::hessian) {
      add_block(out.hessian, so, so, drift_->curvature(s, e2), -0.5 * delta);
    }

    if (prev_free) {
      const DenseMatrix wd1a = scale_rows(w, d1a);
      const DenseMatrix wd2a = scale_rows(w, d2a);
      add_block(out.hessian, po, po, d1a.transposed() * wd1a);
      add_block(out.hessian, po, po, d2a.transposed() * wd2a);
      // a–X*: r1 contributes D1aᵀW, r2 contributes D2aᵀW·D2s
      DenseMatrix cross = wd1a.transposed();
      cross += d2a.transposed() * wd2s;
      add_block(out.hessian, po, so, cross);
      add_block(out.hessian, so, po, cross.transposed());
      add_block(out.hessian, po, xo, wd2a.transposed());
      add_block(out.hessian, xo, po, wd2a);
      if (order == Order::hessian) {
        add_block(out.hessian, po, po, drift_->curvature(a, e1), -delta);
        add_block(out.hessian, po, po, drift_->curvature(a, e2), -0.5 * delta);
      }
    }
  }
}

PosteriorFunction::Evaluation PosteriorFunction::evaluate(std::span<const double> z,
                                                          Order order) const {
  if (z.size() != block_dimension_) throw ModelError("block has wrong dimension");
  Evaluation out;
  if (order != Order::value) out.gradient.assign(block_dimension_, 0.0);
  const bool want_hessian = order == Order::hessian || order == Order::gauss_newton;
  if (want_hessian) out.hessian = DenseMatrix(block_dimension_, block_dimension_);

  if (paired_) {
    evaluate_paired_stages(z, order, out);
  } else {
    evaluate_transitions(z, order, out);
  }

  const std::size_t m = state_dimension_;
  const std::size_t fo = block_dimension_ - m;
  const auto final = z.subspan(fo, m);
  if (order == Order::value) {
    out.value += observation_.likelihood_value(final, b_);
    return out;
  }
  const auto term =
      observation_.likelihood_term(final, b_, want_hessian, order == Order::hessian);
  out.value += term.value;
  add_to(out.gradient, fo, term.gradient);
  if (want_hessian) add_block(out.hessian, fo, fo, term.hessian);
  return out;
}

double PosteriorFunction::value(std::span<const double> z) const {
  return evaluate(z, Order::value).value;
}

Vector PosteriorFunction::gradient(std::span<const double> z) const {
  return evaluate(z, Order::gradient).gradient;
}

DenseMatrix PosteriorFunction::hessian(std::span<const double> z) const {
  return evaluate(z, Order::hessian).hessian;
}

std::optional<DenseMatrix> PosteriorFunction::fallback_hessian(std::span<const double> z) const {
  return evaluate(z, Order::gauss_newton).hessian;
}

// ---------------------------------------------------------------------------

DenseMatrix MinimizationResult::map_factor() const {
  if (map_choice == MapFactorChoice::identity) return DenseMatrix::identity(dimension());
  return invert_lower(hessian_factor);
}

double MinimizationResult::log_abs_det_map_factor() const {
  if (map_choice == MapFactorChoice::identity) return 0.0;
  return -log_diagonal_sum(hessian_factor);
}

Vector MinimizationResult::apply_map_transpose(std::span<const double> eta) const {
  if (map_choice == MapFactorChoice::identity) return Vector(eta.begin(), eta.end());
  // Lᵀη = C⁻ᵀη
  return solve_lower_transposed(hessian_factor, eta);
}

namespace {

struct Factorization {
  DenseMatrix hessian;
  DenseMatrix factor;
  bool fallback = false;
};

std::optional<Factorization> factor_hessian(const Objective& f, std::span<const double> z) {
  Factorization out;
  out.hessian = f.hessian(z);
  try {
    out.factor = cholesky(out.hessian);
    return out;
  } catch (const NotPositiveDefinite&) {
  }
  auto substitute = f.fallback_hessian(z);
  if (!substitute) return std::nullopt;
  try {
    out.factor = cholesky(*substitute);
    out.hessian = std::move(*substitute);
    out.fallback = true;
    return out;
  } catch (const NotPositiveDefinite&) {
    return std::nullopt;
  }
}

}  // namespace

MinimizationResult minimize_posterior(const Objective& f, Vector init,
                                      const MinimizationOptions& options) {
  if (init.size() != f.dimension()) throw ModelError("initial guess has wrong dimension");
  MinimizationResult result;
  Vector z = std::move(init);
  double fz = f.value(z);
  if (!std::isfinite(fz)) throw MinimizationError("objective is not finite at the initial guess", z, fz);

  bool converged = false;
  int iteration = 0;
  Vector g;
  for (; iteration <= options.max_iterations; ++iteration) {
    g = f.gradient(z);
    const double scale = std::max(1.0, std::abs(fz));
    if (norm_inf(g) < options.gradient_tolerance * scale) {
      converged = true;
      break;
    }
    if (iteration == options.max_iterations) break;

    Vector step(g.size());
    auto fact = factor_hessian(f, z);
    if (fact) {
      result.used_fallback |= fact->fallback;
      step = cholesky_solve(fact->factor, g);
      for (double& v : step) v = -v;
    } else {
      result.used_fallback = true;
      for (std::size_t i = 0; i < g.size(); ++i) step[i] = -g[i];
    }
    const double slope = dot(g, step);  // negative for a descent direction
    if (!(slope < 0.0)) break;
    // Newton decrement at round-off level: F cannot be reduced further.
    if (fact && -slope < 1e-13 * scale) {
      converged = true;
      break;
    }

    double t = 1.0;
    Vector trial(z.size());
    bool accepted = false;
    for (int halving = 0; halving <= options.max_step_halvings; ++halving, t *= 0.5) {
      for (std::size_t i = 0; i < z.size(); ++i) trial[i] = z[i] + t * step[i];
      const double ft = f.value(trial);
      if (std::isfinite(ft) && ft <= fz + 1e-4 * t * slope) {
        z.swap(trial);
        fz = ft;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }

  if (!converged) {
    throw MinimizationError("Newton iteration did not converge after " +
                                std::to_string(iteration) + " iterations",
                            z, fz);
  }

  auto fact = factor_hessian(f, z);
  if (!fact) throw MinimizationError("Hessian at the minimum is not positive definite", z, fz);
  result.used_fallback |= fact->fallback;
  result.minimizer = std::move(z);
  result.minimum = fz;
  result.gradient = std::move(g);
  result.hessian = std::move(fact->hessian);
  result.hessian_factor = std::move(fact->factor);
  result.iterations = iteration;
  result.converged = true;
  return result;
}

// ---------------------------------------------------------------------------

namespace {

Vector along(const MinimizationResult& min, std::span<const double> direction, double lambda) {
  Vector x = min.minimizer;
  axpy(lambda, direction, x);
  return x;
}

}  // namespace

RandomMapSample solve_lambda(const Objective& f, const MinimizationResult& min, Vector xi,
                             const LambdaOptions& options) {
  RandomMapSample s;
  s.xi = std::move(xi);
  if (s.xi.size() != min.dimension()) throw SamplingError("reference draw has wrong dimension");
  s.rho = dot(s.xi, s.xi);
  if (!(s.rho > 0.0)) throw SamplingError("reference draw has zero norm");
  const double root = std::sqrt(s.rho);
  s.eta = s.xi;
  for (double& v : s.eta) v /= root;
  s.direction = min.apply_map_transpose(s.eta);

  const double target = 0.5 * s.rho;
  const double tol = options.tolerance * std::max(1.0, target);
  auto residual = [&](double lambda) {
    return f.value(along(min, s.direction, lambda)) - min.minimum - target;
  };

  double lambda = root;
  bool solved = false;
  for (int it = 0; it <= options.max_newton_iterations; ++it) {
    const Vector x = along(min, s.direction, lambda);
    const double r = f.value(x) - min.minimum - target;
    if (std::abs(r) < tol) {
      solved = true;
      break;
    }
    if (it == options.max_newton_iterations) break;
    const double slope = dot(f.gradient(x), s.direction);
    if (!(slope > 0.0) || !std::isfinite(r)) break;
    double next = lambda - r / slope;
    if (!(next > 0.0)) next = 0.5 * lambda;
    lambda = next;
    ++s.iterations;
  }

  if (!solved) {
    // ϕ(0) = −ρ/2 < 0; grow the upper end until ϕ changes sign.
    s.bisection_used = true;
    double lo = 0.0;
    double hi = root;
    int doublings = 0;
    while (!(residual(hi) > 0.0)) {
      hi *= 2.0;
      if (++doublings > 200) throw SamplingError("no bracket for the random-map equation");
    }
    for (int it = 0; it < options.max_bisection_iterations; ++it) {
      lambda = 0.5 * (lo + hi);
      const double r = residual(lambda);
      if (std::abs(r) < tol) {
        solved = true;
        break;
      }
      (r < 0.0 ? lo : hi) = lambda;
    }
    if (!solved) throw SamplingError("random-map equation could not be solved");
  }

  s.lambda = lambda;
  s.position = along(min, s.direction, lambda);
  s.slope = dot(f.gradient(s.position), s.direction);
  if (lambda < 1e-5) {
    // ∇F(X)·d is round-off here; midpoint rule on ∫ dᵀH d with ∇F(μ) = 0
    const DenseMatrix h = f.hessian(along(min, s.direction, 0.5 * lambda));
    s.slope = lambda * dot(s.direction, h.multiply(s.direction));
  }
  return s;
}

double numerical_dlambda_drho(const Objective& f, const MinimizationResult& min,
                              const RandomMapSample& sample) {
  const double step = 1e-5 * std::sqrt(sample.rho);
  const double rho0 = 2.0 * (f.value(sample.position) - min.minimum);
  const double rho1 =
      2.0 * (f.value(along(min, sample.direction, sample.lambda + step)) - min.minimum);
  return step / (rho1 - rho0);
}

double jacobian_log(const RandomMapSample& sample, const MinimizationResult& min,
                    std::size_t block_dimension) {
  if (!(sample.lambda > 0.0) || !(sample.rho > 0.0)) {
    throw SamplingError("Jacobian needs positive lambda and rho");
  }
  if (sample.dlambda_drho == 0.0 || !std::isfinite(sample.dlambda_drho)) {
    throw SamplingError("degenerate direction");
  }
  const double n = static_cast<double>(block_dimension);
  return std::log(2.0) + min.log_abs_det_map_factor() + (1.0 - 0.5 * n) * std::log(sample.rho) +
         (n - 1.0) * std::log(sample.lambda) + std::log(std::abs(sample.dlambda_drho));
}

RandomMapSample implicit_sample_from(const Objective& f, const MinimizationResult& min, Vector xi,
                                     const SamplerOptions& options) {
  RandomMapSample s = solve_lambda(f, min, std::move(xi), options.lambda);
  if (options.derivative == JacobianDerivative::analytic) {
    if (s.slope == 0.0) throw SamplingError("degenerate direction");
    s.dlambda_drho = 1.0 / (2.0 * s.slope);
  } else {
    s.dlambda_drho = numerical_dlambda_drho(f, min, s);
  }
  s.log_jacobian = jacobian_log(s, min, min.dimension());
  s.log_weight = -min.minimum + s.log_jacobian;
  return s;
}

RandomMapSample implicit_sample(const Objective& f, const MinimizationResult& min, RngStream& rng,
                                const SamplerOptions& options) {
  return implicit_sample_from(f, min, standard_normal_vector(rng, min.dimension()), options);
}

QuadraticSample quadratic_approx_sample_from(const Objective& f, const MinimizationResult& min,
                                             Vector xi) {
  QuadraticSample s;
  s.xi = std::move(xi);
  if (s.xi.size() != min.dimension()) throw SamplingError("reference draw has wrong dimension");
  s.position = along(min, min.apply_map_transpose(s.xi), 1.0);
  s.model_value = min.minimum + 0.5 * dot(s.xi, s.xi);
  s.true_value = f.value(s.position);
  s.log_weight = -min.minimum - (s.true_value - s.model_value) + min.log_abs_det_map_factor();
  if (!std::isfinite(s.log_weight)) s.log_weight = -std::numeric_limits<double>::infinity();
  return s;
}

QuadraticSample quadratic_approx_sample(const Objective& f, const MinimizationResult& min,
                                        RngStream& rng) {
  return quadratic_approx_sample_from(f, min, standard_normal_vector(rng, min.dimension()));
}

}  // namespace da
