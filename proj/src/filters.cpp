#include "da/filters.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <string>

namespace da {

namespace {
constexpr double kMinusInfinity = -std::numeric_limits<double>::infinity();
}

std::string_view to_string(FilterKind kind) {
  switch (kind) {
    case FilterKind::implicit: return "implicit";
    case FilterKind::implicit_quadratic: return "implicit_quadratic";
    case FilterKind::sir: return "sir";
  }
  return "?";
}

FilterKind parse_filter_kind(std::string_view name) {
  if (name == "implicit") return FilterKind::implicit;
  if (name == "implicit_quadratic") return FilterKind::implicit_quadratic;
  if (name == "sir") return FilterKind::sir;
  throw std::invalid_argument("unknown filter kind '" + std::string(name) + "'");
}

std::string_view to_string(ResamplingScheme scheme) {
  switch (scheme) {
    case ResamplingScheme::systematic: return "systematic";
    case ResamplingScheme::multinomial: return "multinomial";
    case ResamplingScheme::residual: return "residual";
  }
  return "?";
}

ResamplingScheme parse_resampling_scheme(std::string_view name) {
  if (name == "systematic") return ResamplingScheme::systematic;
  if (name == "multinomial") return ResamplingScheme::multinomial;
  if (name == "residual") return ResamplingScheme::residual;
  throw std::invalid_argument("unknown resampling scheme '" + std::string(name) + "'");
}

void FilterConfig::validate() const {
  if (particles < 1) throw std::invalid_argument("particle count must be at least 1");
  if (ess_threshold && !(*ess_threshold > 0.0 && *ess_threshold <= 1.0)) {
    throw std::invalid_argument("ESS threshold must lie in (0, 1]");
  }
}

ParticleEnsemble ParticleEnsemble::uniform(const Vector& state, std::size_t particles,
                                           std::size_t step) {
  if (particles < 1) throw std::invalid_argument("ensemble needs at least one particle");
  ParticleEnsemble e;
  e.positions.assign(particles, state);
  e.log_weights.assign(particles, -std::log(static_cast<double>(particles)));
  e.step = step;
  return e;
}

Vector ParticleEnsemble::weights() const {
  Vector w(log_weights.size());
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = std::exp(log_weights[j]);
  return w;
}

FilterCollapse::FilterCollapse(std::size_t step, std::size_t surviving, std::size_t particles)
    : std::runtime_error("filter collapse at step " + std::to_string(step) + ": " +
                         std::to_string(surviving) + " of " + std::to_string(particles) +
                         " particles carry non-negligible weight"),
      step_(step),
      surviving_(surviving) {}

void normalize(ParticleEnsemble& ensemble) {
  const std::size_t m = ensemble.size();
  double total;
  try {
    total = log_sum_exp(ensemble.log_weights);
  } catch (const NumericsError&) {
    std::size_t nan_count = 0;
    for (double v : ensemble.log_weights) nan_count += std::isnan(v);
    if (nan_count > 0) throw;
    throw FilterCollapse(ensemble.step, 0, m);
  }
  std::size_t surviving = 0;
  for (double& v : ensemble.log_weights) {
    v -= total;
    if (std::exp(v) >= DBL_EPSILON) ++surviving;
  }
  if (m >= 2 && surviving < 2) throw FilterCollapse(ensemble.step, surviving, m);
}

double effective_sample_size(const ParticleEnsemble& ensemble) {
  double sum = 0.0;
  for (double v : ensemble.log_weights) sum += std::exp(2.0 * v);
  return 1.0 / sum;
}

Vector estimate_state(const ParticleEnsemble& ensemble) {
  Vector mean(ensemble.positions.front().size(), 0.0);
  for (std::size_t j = 0; j < ensemble.size(); ++j) {
    const double w = std::exp(ensemble.log_weights[j]);
    if (w == 0.0) continue;
    axpy(w, ensemble.positions[j], mean);
  }
  return mean;
}

namespace {

void check_weights(std::span<const double> weights) {
  if (weights.empty()) throw std::invalid_argument("no weights to resample");
  for (double w : weights) {
    if (std::isnan(w)) throw std::invalid_argument("NaN weight in resampling");
    if (w < 0.0) throw std::invalid_argument("negative weight in resampling");
  }
}

// Normalized cumulative sums with the last entry pinned to 1.
Vector cumulative(std::span<const double> weights) {
  Vector c(weights.size());
  double s = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) c[j] = (s += weights[j]);
  if (!(s > 0.0)) throw std::invalid_argument("weights sum to zero");
  for (double& v : c) v /= s;
  c.back() = 1.0;
  return c;
}

std::size_t pick(const Vector& cdf, double u) {
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

void multinomial_into(std::span<const double> weights, std::size_t m, RngStream& rng,
                      std::vector<std::size_t>& counts) {
  const Vector cdf = cumulative(weights);
  for (std::size_t i = 0; i < m; ++i) ++counts[pick(cdf, rng.uniform())];
}

}  // namespace

std::vector<std::size_t> systematic_offspring(std::span<const double> weights, std::size_t m,
                                              double u) {
  check_weights(weights);
  const Vector cdf = cumulative(weights);
  std::vector<std::size_t> counts(weights.size(), 0);
  std::size_t j = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double point = (static_cast<double>(i) + u) / static_cast<double>(m);
    while (j + 1 < cdf.size() && cdf[j] <= point) ++j;
    ++counts[j];
  }
  return counts;
}

std::vector<std::size_t> offspring_counts(std::span<const double> weights, std::size_t m,
                                          ResamplingScheme scheme, RngStream& rng) {
  check_weights(weights);
  switch (scheme) {
    case ResamplingScheme::systematic:
      return systematic_offspring(weights, m, rng.uniform());
    case ResamplingScheme::multinomial: {
      std::vector<std::size_t> counts(weights.size(), 0);
      multinomial_into(weights, m, rng, counts);
      return counts;
    }
    case ResamplingScheme::residual: {
      double total = 0.0;
      for (double w : weights) total += w;
      std::vector<std::size_t> counts(weights.size(), 0);
      Vector residual(weights.size());
      std::size_t assigned = 0;
      for (std::size_t j = 0; j < weights.size(); ++j) {
        const double expected = static_cast<double>(m) * weights[j] / total;
        counts[j] = static_cast<std::size_t>(std::floor(expected));
        residual[j] = expected - static_cast<double>(counts[j]);
        assigned += counts[j];
      }
      if (assigned < m) multinomial_into(residual, m - assigned, rng, counts);
      return counts;
    }
  }
  return {};
}

ParticleEnsemble resample(const ParticleEnsemble& ensemble, RngStream& rng,
                          ResamplingScheme scheme) {
  const std::size_t m = ensemble.size();
  const auto counts = offspring_counts(ensemble.weights(), m, scheme, rng);
  ParticleEnsemble out;
  out.step = ensemble.step;
  out.positions.reserve(m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t c = 0; c < counts[j]; ++c) out.positions.push_back(ensemble.positions[j]);
  out.log_weights.assign(m, -std::log(static_cast<double>(m)));
  return out;
}

RngStream StreamKey::stream(std::uint64_t step, std::uint64_t particle,
                            std::uint64_t purpose) const {
  return RngStream(seed, derive_stream_id({experiment, step, particle, purpose}));
}

namespace {

// Normalizes, estimates, and resamples per policy.
StepOutcome finish_step(ParticleEnsemble next, StepDiagnostics diagnostics,
                        const FilterConfig& config, const StreamKey& key) {
  normalize(next);
  StepOutcome out;
  out.estimate = estimate_state(next);
  out.estimate_variance.assign(out.estimate.size(), 0.0);
  for (std::size_t j = 0; j < next.size(); ++j) {
    const double w = std::exp(next.log_weights[j]);
    for (std::size_t c = 0; c < out.estimate.size(); ++c) {
      const double d = next.positions[j][c] - out.estimate[c];
      out.estimate_variance[c] += w * w * d * d;
    }
  }
  diagnostics.ess = effective_sample_size(next);
  const double m = static_cast<double>(next.size());
  const bool due = !config.ess_threshold || diagnostics.ess < *config.ess_threshold * m;
  if (due) {
    RngStream rng = key.stream(next.step, 0, stream_purpose::resampling);
    next = resample(next, rng, config.scheme);
    diagnostics.resampled = true;
  }
  out.ensemble = std::move(next);
  out.diagnostics = std::move(diagnostics);
  return out;
}

}  // namespace

StepOutcome implicit_filter_step(const ParticleEnsemble& ensemble, std::span<const double> b,
                                 const StochasticModel& model, const ObservationModel& observation,
                                 const FilterConfig& config, const StreamKey& key,
                                 unsigned workers) {
  config.validate();
  const std::size_t m = ensemble.size();
  const std::size_t gap = observation.gap();
  const Vector observed(b.begin(), b.end());

  ParticleEnsemble next;
  next.step = ensemble.step + gap;
  next.positions.resize(m);
  next.log_weights.resize(m);
  std::vector<int> lambda_its(m, 0), newton_its(m, 0), fallback(m, 0);
  Vector log_jac(m, 0.0);

  SamplerOptions sampler;
  sampler.lambda = config.lambda;
  sampler.derivative = config.derivative;

  parallel_for(m, workers, [&](std::size_t j) {
    const PosteriorFunction f(model, observation, ensemble.positions[j], observed, gap);
    RngStream rng = key.stream(ensemble.step, j, stream_purpose::reference_draw);
    const Vector guess = f.model_run_guess();
    double increment = kMinusInfinity;
    Vector block = guess;
    try {
      MinimizationResult min = minimize_posterior(f, guess, config.minimization);
      min.map_choice = config.map;
      newton_its[j] = min.iterations;
      fallback[j] = min.used_fallback;
      if (config.kind == FilterKind::implicit_quadratic) {
        QuadraticSample s = quadratic_approx_sample(f, min, rng);
        block = std::move(s.position);
        increment = s.log_weight;
        log_jac[j] = min.log_abs_det_map_factor();
      } else {
        RandomMapSample s = implicit_sample(f, min, rng, sampler);
        block = std::move(s.position);
        increment = s.log_weight;
        lambda_its[j] = s.iterations;
        log_jac[j] = s.log_jacobian;
      }
    } catch (const MinimizationError& e) {
      block = e.best_iterate();
    } catch (const SamplingError&) {
    } catch (const NumericsError&) {
    }
    if (!std::isfinite(increment)) increment = kMinusInfinity;
    next.positions[j] = f.final_state(block);
    next.log_weights[j] = ensemble.log_weights[j] + increment;
  });

  StepDiagnostics d;
  for (std::size_t j = 0; j < m; ++j) {
    if (next.log_weights[j] == kMinusInfinity) ++d.failures;
    d.fallbacks += static_cast<std::size_t>(fallback[j]);
  }
  d.lambda_iterations = std::move(lambda_its);
  d.newton_iterations = std::move(newton_its);
  d.log_jacobians = std::move(log_jac);
  return finish_step(std::move(next), std::move(d), config, key);
}

StepOutcome sir_filter_step(const ParticleEnsemble& ensemble, std::span<const double> b,
                            const StochasticModel& model, const ObservationModel& observation,
                            const FilterConfig& config, const StreamKey& key, unsigned workers) {
  config.validate();
  const std::size_t m = ensemble.size();
  const std::size_t gap = observation.gap();

  ParticleEnsemble next;
  next.step = ensemble.step + gap;
  next.positions.resize(m);
  next.log_weights.resize(m);

  parallel_for(m, workers, [&](std::size_t j) {
    RngStream rng = key.stream(ensemble.step, j, stream_purpose::propagation);
    Vector x = ensemble.positions[j];
    for (std::size_t i = 0; i < gap; ++i) x = model.step(x, rng);
    double log_likelihood = -observation.likelihood_value(x, b);
    if (std::isnan(log_likelihood)) log_likelihood = kMinusInfinity;
    next.positions[j] = std::move(x);
    next.log_weights[j] = ensemble.log_weights[j] + log_likelihood;
  });

  StepDiagnostics d;
  for (double v : next.log_weights) d.failures += (v == kMinusInfinity);
  return finish_step(std::move(next), std::move(d), config, key);
}

StepOutcome filter_step(const ParticleEnsemble& ensemble, std::span<const double> b,
                        const StochasticModel& model, const ObservationModel& observation,
                        const FilterConfig& config, const StreamKey& key, unsigned workers) {
  if (config.kind == FilterKind::sir) {
    return sir_filter_step(ensemble, b, model, observation, config, key, workers);
  }
  return implicit_filter_step(ensemble, b, model, observation, config, key, workers);
}

}  // namespace da
