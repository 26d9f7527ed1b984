#include "da/harness.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace da {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

void TwinExperimentSpec::validate() const {
  if (!model || !observation) throw std::invalid_argument("twin experiment needs a model and observations");
  if (filters.empty()) throw std::invalid_argument("twin experiment needs at least one filter");
  if (experiments < 1) throw std::invalid_argument("number of experiments must be at least 1");
  if (steps < 1) throw std::invalid_argument("number of steps must be at least 1");
  if (observation->state_dimension() != model->dimension()) {
    throw std::invalid_argument("observation operator does not match the model dimension");
  }
  const std::size_t gap = observation->gap();
  for (std::size_t c : check_steps) {
    if (c > steps) throw std::invalid_argument("check time beyond the experiment duration");
    if (c == 0 || c % gap != 0) {
      throw std::invalid_argument("check step " + std::to_string(c) +
                                  " is not an observation time (gap " + std::to_string(gap) + ")");
    }
  }
  for (const auto& f : filters) f.validate();
}

ErrorStats aggregate_errors(std::span<const double> errors, std::size_t collapses) {
  if (errors.empty()) throw std::invalid_argument("no successful experiments to aggregate");
  ErrorStats s;
  s.successes = errors.size();
  s.collapses = collapses;
  double sum = 0.0;
  for (double e : errors) sum += e;
  s.mean_error = sum / static_cast<double>(errors.size());
  if (errors.size() > 1) {
    double sq = 0.0;
    for (double e : errors) sq += (e - s.mean_error) * (e - s.mean_error);
    s.error_variance = sq / static_cast<double>(errors.size() - 1);
    s.variance_defined = true;
  }
  return s;
}

TwinData generate_twin_data(const StochasticModel& model, const ObservationModel& observation,
                            std::size_t steps, const StreamKey& key) {
  TwinData d;
  d.truth.reserve(steps + 1);
  d.truth.push_back(model.initial_state());
  d.observations.resize(steps + 1);
  RngStream rng = key.stream(0, 0, stream_purpose::truth);
  const std::size_t gap = observation.gap();
  for (std::size_t n = 1; n <= steps; ++n) {
    d.truth.push_back(model.step(d.truth.back(), rng));
    if (n % gap == 0) {
      RngStream noise = key.stream(n, 0, stream_purpose::observation_noise);
      d.observations[n] = observation.observe(d.truth.back(), noise);
    }
  }
  return d;
}

RunRecord run_filter(const TwinData& data, const StochasticModel& model,
                     const ObservationModel& observation, const FilterConfig& config,
                     std::span<const std::size_t> check_steps, const StreamKey& key,
                     unsigned workers) {
  RunRecord r;
  r.experiment = key.experiment;
  r.errors.assign(check_steps.size(), kNaN);
  const std::size_t gap = observation.gap();
  const std::size_t last = check_steps.empty()
                               ? data.truth.size() - 1
                               : *std::max_element(check_steps.begin(), check_steps.end());
  ParticleEnsemble ensemble = ParticleEnsemble::uniform(data.truth.front(), config.particles);
  double ess_sum = 0.0;
  try {
    for (std::size_t n = gap; n <= last; n += gap) {
      StepOutcome out = filter_step(ensemble, data.observations[n], model, observation, config,
                                    key, workers);
      ess_sum += out.diagnostics.ess;
      ++r.observations;
      r.failed_samples += out.diagnostics.failures;
      r.fallbacks += out.diagnostics.fallbacks;
      if (config.kind == FilterKind::implicit) {
        for (int it : out.diagnostics.lambda_iterations) {
          ++r.lambda_samples;
          r.lambda_within_20 += it <= 20;
          r.lambda_max_iterations = std::max(r.lambda_max_iterations, it);
        }
      }
      for (std::size_t c = 0; c < check_steps.size(); ++c) {
        if (check_steps[c] == n) r.errors[c] = norm(subtract(data.truth[n], out.estimate));
      }
      ensemble = std::move(out.ensemble);
    }
  } catch (const FilterCollapse& e) {
    r.collapsed = true;
    r.collapse_step = e.step();
    std::fill(r.errors.begin(), r.errors.end(), kNaN);
  }
  if (r.observations > 0) r.mean_ess = ess_sum / static_cast<double>(r.observations);
  return r;
}

TwinExperimentResult run_twin_experiment(const TwinExperimentSpec& spec, unsigned workers) {
  spec.validate();
  const std::size_t nf = spec.filters.size();
  TwinExperimentResult result;
  result.runs.resize(spec.experiments * nf);

  parallel_for(spec.experiments, workers, [&](std::size_t e) {
    const StreamKey key{spec.seed, e};
    const TwinData data = generate_twin_data(*spec.model, *spec.observation, spec.steps, key);
    for (std::size_t f = 0; f < nf; ++f) {
      RunRecord r = run_filter(data, *spec.model, *spec.observation, spec.filters[f],
                               spec.check_steps, key);
      r.filter = f;
      result.runs[e * nf + f] = std::move(r);
    }
  });

  for (std::size_t f = 0; f < nf; ++f) {
    FilterSummary s;
    s.config = spec.filters[f];
    double ess = 0.0;
    std::size_t ess_runs = 0;
    for (std::size_t e = 0; e < spec.experiments; ++e) {
      const RunRecord& r = result.runs[e * nf + f];
      if (r.collapsed) {
        ++s.collapses;
      } else {
        ess += r.mean_ess;
        ++ess_runs;
      }
      s.lambda_samples += r.lambda_samples;
      s.lambda_within_20 += r.lambda_within_20;
      s.lambda_max_iterations = std::max(s.lambda_max_iterations, r.lambda_max_iterations);
    }
    s.mean_ess = ess_runs > 0 ? ess / static_cast<double>(ess_runs) : kNaN;
    for (std::size_t c = 0; c < spec.check_steps.size(); ++c) {
      std::vector<double> errors;
      for (std::size_t e = 0; e < spec.experiments; ++e) {
        const RunRecord& r = result.runs[e * nf + f];
        if (!r.collapsed) errors.push_back(r.errors[c]);
      }
      if (errors.empty()) {
        ErrorStats none;
        none.mean_error = kNaN;
        none.error_variance = kNaN;
        none.collapses = s.collapses;
        s.stats.push_back(none);
      } else {
        s.stats.push_back(aggregate_errors(errors, s.collapses));
      }
    }
    result.filters.push_back(std::move(s));
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t exact_ratio(double a, double b, const char* what) {
  const double q = a / b;
  const double r = std::round(q);
  if (r < 1.0 || std::abs(q - r) > 1e-9 * r) {
    throw std::invalid_argument(std::string(what) + " is not an integer multiple");
  }
  return static_cast<std::size_t>(r);
}

bool blown_up(std::span<const double> x, double threshold) {
  const double n = norm(x);
  return !std::isfinite(n) || n > threshold;
}

}  // namespace

void ConvergenceSpec::validate() const {
  if (series.empty()) throw std::invalid_argument("convergence study needs at least one series");
  if (deltas.empty()) throw std::invalid_argument("convergence study needs time steps");
  if (!(delta_ref > 0.0)) throw std::invalid_argument("reference time step must be positive");
  if (realizations < 1) throw std::invalid_argument("need at least one realization");
  exact_ratio(horizon, delta_ref, "horizon over the reference step");
  for (double d : deltas) {
    exact_ratio(d, delta_ref, "time step over the reference step");
    exact_ratio(horizon, d, "horizon over the time step");
  }
}

double fit_log_slope(std::span<const double> x, std::span<const double> y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(y[i] > 0.0) || !std::isfinite(y[i]) || !(x[i] > 0.0)) continue;
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (n < 2) return kNaN;
  const double dn = static_cast<double>(n);
  const double denom = sxx - sx * sx / dn;
  if (denom == 0.0) return kNaN;
  return (sxy - sx * sy / dn) / denom;
}

std::vector<ConvergenceResult> run_convergence_study(const ConvergenceSpec& spec,
                                                     unsigned workers) {
  spec.validate();
  const std::size_t nd = spec.deltas.size();
  const std::size_t fine_steps = exact_ratio(spec.horizon, spec.delta_ref, "horizon");

  struct SeriesModels {
    std::shared_ptr<const StochasticModel> reference;
    std::vector<std::shared_ptr<const StochasticModel>> coarse;
  };
  std::vector<SeriesModels> models;
  std::size_t m = 0;
  for (const auto& s : spec.series) {
    SeriesModels sm;
    sm.reference = s.make_model(spec.delta_ref);
    for (double d : spec.deltas) sm.coarse.push_back(s.make_model(d));
    if (m == 0) m = sm.reference->dimension();
    if (sm.reference->dimension() != m) {
      throw std::invalid_argument("convergence series differ in state dimension");
    }
    models.push_back(std::move(sm));
  }

  const std::size_t ns = spec.series.size();
  // errors[(realization·ns + series)·nd + delta]; NaN marks a discarded realization.
  std::vector<double> errors(spec.realizations * ns * nd, kNaN);

  parallel_for(spec.realizations, workers, [&](std::size_t k) {
    const StreamKey key{spec.seed, k};
    RngStream brownian = key.stream(0, 0, stream_purpose::propagation);
    std::vector<double> fine(fine_steps * m);
    for (double& v : fine) v = brownian.standard_normal();

    for (std::size_t s = 0; s < ns; ++s) {
      // Auxiliary normals (the KP predictor noise) form a second Brownian
      // path, coarsened the same way as the first.
      const std::size_t aux_count = models[s].reference->auxiliary_normals();
      RngStream aux_rng = key.stream(s, 0, stream_purpose::reference_draw);
      std::vector<double> fine_aux(fine_steps * aux_count);
      for (double& v : fine_aux) v = aux_rng.standard_normal();

      auto run = [&](const StochasticModel& model, std::size_t ratio) {
        if (model.auxiliary_normals() != aux_count) {
          throw std::invalid_argument("convergence series mixes auxiliary noise layouts");
        }
        Vector aux(aux_count), dw(m);
        const double scale = 1.0 / std::sqrt(static_cast<double>(ratio));
        Vector x = model.initial_state();
        for (std::size_t n = 0; n < fine_steps / ratio; ++n) {
          std::fill(dw.begin(), dw.end(), 0.0);
          std::fill(aux.begin(), aux.end(), 0.0);
          for (std::size_t i = n * ratio; i < (n + 1) * ratio; ++i) {
            for (std::size_t c = 0; c < m; ++c) dw[c] += fine[i * m + c];
            for (std::size_t c = 0; c < aux_count; ++c) aux[c] += fine_aux[i * aux_count + c];
          }
          for (double& v : dw) v *= scale;
          for (double& v : aux) v *= scale;
          x = model.step(x, dw, aux);
          if (blown_up(x, spec.blow_up)) return Vector{};
        }
        return x;
      };
      const Vector reference = run(*models[s].reference, 1);
      if (reference.empty()) continue;
      for (std::size_t d = 0; d < nd; ++d) {
        const std::size_t ratio = exact_ratio(spec.deltas[d], spec.delta_ref, "time step");
        const Vector coarse = run(*models[s].coarse[d], ratio);
        if (coarse.empty()) continue;
        errors[(k * ns + s) * nd + d] = norm(subtract(coarse, reference));
      }
    }
  });

  std::vector<ConvergenceResult> results;
  for (std::size_t s = 0; s < ns; ++s) {
    ConvergenceResult r;
    r.name = spec.series[s].name;
    Vector xs, ys;
    for (std::size_t d = 0; d < nd; ++d) {
      ConvergencePoint p;
      p.delta = spec.deltas[d];
      double sum = 0.0;
      for (std::size_t k = 0; k < spec.realizations; ++k) {
        const double e = errors[(k * ns + s) * nd + d];
        if (std::isnan(e)) {
          ++p.discarded;
        } else {
          sum += e;
          ++p.realizations;
        }
      }
      if (p.realizations > 0) p.mean_error = sum / static_cast<double>(p.realizations);
      xs.push_back(p.delta);
      ys.push_back(p.mean_error);
      r.points.push_back(p);
    }
    r.slope = fit_log_slope(xs, ys);
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace da
