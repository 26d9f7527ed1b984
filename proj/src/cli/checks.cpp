#include "da/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>

#include "da/filters.hpp"
#include "da/implicit_core.hpp"

namespace da {

namespace {

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string format(const char* fmt, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, a, b, c);
  return buf;
}

// Random one-step posterior for x' = x + δAx + g√δ ΔW observed through the
// identity (optionally cubic).
struct RandomPosterior {
  std::unique_ptr<DriftModel> model;
  std::unique_ptr<ObservationModel> observation;
  std::unique_ptr<PosteriorFunction> f;
};

RandomPosterior random_posterior(std::size_t n, bool cubic, RngStream& rng) {
  DenseMatrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * rng.standard_normal();
  const double g = 0.3 + 0.7 * rng.uniform();
  const double q = 0.2 + 0.6 * rng.uniform();
  RandomPosterior p;
  Vector prev = standard_normal_vector(rng, n);
  p.model = std::make_unique<DriftModel>(std::make_shared<LinearDrift>(a), Vector{g}, 0.1,
                                         Integrator::euler_maruyama, prev);
  ObservationModel id = ObservationModel::identity(n, q);
  p.observation = std::make_unique<ObservationModel>(
      cubic ? ObservationModel(id.linear_part(), ObservationNonlinearity::cubic, id.noise_std(), 1) : id);
  Vector b = standard_normal_vector(rng, n);
  p.f = std::make_unique<PosteriorFunction>(*p.model, *p.observation, prev, b, 1);
  return p;
}

// F(x) = ½x² + ¼x⁴ − 0.8x
class ScalarQuartic final : public Objective {
 public:
  std::size_t dimension() const override { return 1; }
  double value(std::span<const double> x) const override {
    return 0.5 * x[0] * x[0] + 0.25 * std::pow(x[0], 4) - 0.8 * x[0];
  }
  Vector gradient(std::span<const double> x) const override {
    return {x[0] + std::pow(x[0], 3) - 0.8};
  }
  DenseMatrix hessian(std::span<const double> x) const override {
    return DenseMatrix(1, 1, {1.0 + 3.0 * x[0] * x[0]});
  }
};

}  // namespace

SuiteReport check_jacobian(const JacobianCheckOptions& options) {
  const Timer timer;
  SuiteReport r{"jacobian", true, "", 0.0};
  RngStream rng(options.seed, 0x1ac0b1);
  const std::size_t quadratic_dims[] = {2, 3, 6};
  double worst_quadratic = 0.0;
  for (std::size_t i = 0; i < options.quadratic_cases; ++i) {
    const RandomPosterior p = random_posterior(quadratic_dims[i % 3], false, rng);
    const MinimizationResult min = minimize_posterior(*p.f, p.f->model_run_guess());
    const RandomMapSample s = implicit_sample(*p.f, min, rng);
    worst_quadratic = std::max(worst_quadratic, std::abs(s.log_jacobian - min.log_abs_det_map_factor()));
  }
  SamplerOptions tight;
  tight.lambda.tolerance = 1e-13;
  double worst_nonlinear = 0.0;
  for (std::size_t i = 0; i < options.nonlinear_cases; ++i) {
    const RandomPosterior p = random_posterior(2 + i % 2, true, rng);
    const MinimizationResult min = minimize_posterior(*p.f, p.f->model_run_guess());
    const Vector xi = standard_normal_vector(rng, p.f->dimension());
    const RandomMapSample s = implicit_sample_from(*p.f, min, xi, tight);
    const VectorMap map = [&](std::span<const double> z) {
      return implicit_sample_from(*p.f, min, Vector(z.begin(), z.end()), tight).position;
    };
    const double det = std::abs(finite_difference_jacobian_det(map, xi, 1e-4));
    worst_nonlinear = std::max(worst_nonlinear, std::abs(std::exp(s.log_jacobian) - det) / det);
  }
  r.passed = worst_quadratic <= options.quadratic_tolerance &&
             worst_nonlinear <= options.nonlinear_relative_tolerance;
  r.detail = format("quadratic max |log J - log|det L|| = %.2e, nonlinear max rel. error = %.2e",
                    worst_quadratic, worst_nonlinear);
  r.seconds = timer.seconds();
  return r;
}

SuiteReport check_kalman(const KalmanCheckOptions& options) {
  const Timer timer;
  SuiteReport r{"kalman", true, "", 0.0};
  const DriftModel model(std::make_shared<LinearDrift>(DenseMatrix(1, 1, {-0.1})), Vector{0.5}, 1.0,
                         Integrator::euler_maruyama, Vector{0.0});
  const ObservationModel obs = ObservationModel::identity(1, 0.3);
  FilterConfig cfg;
  cfg.particles = options.particles;
  Vector diff(options.steps, 0.0), var(options.steps, 0.0);
  double worst_jacobian = 0.0;
  for (std::size_t s = 0; s < options.seeds; ++s) {
    const StreamKey key{options.seed, s};
    RngStream truth = key.stream(0, 0, stream_purpose::truth);
    double x = 0.0, mean = 0.0, p = 0.0;
    ParticleEnsemble e = ParticleEnsemble::uniform(Vector{0.0}, cfg.particles);
    for (std::size_t n = 0; n < options.steps; ++n) {
      x = 0.9 * x + 0.5 * truth.standard_normal();
      const double b = x + 0.3 * truth.standard_normal();
      const double mf = 0.9 * mean, pf = 0.81 * p + 0.25;
      const double k = pf / (pf + 0.09);
      mean = mf + k * (b - mf);
      p = (1 - k) * pf;
      StepOutcome out = implicit_filter_step(e, Vector{b}, model, obs, cfg, key);
      const auto& lj = out.diagnostics.log_jacobians;
      for (double v : lj) worst_jacobian = std::max(worst_jacobian, std::abs(v - lj.front()));
      diff[n] += out.estimate[0] - mean;
      var[n] += out.estimate_variance[0];
      e = std::move(out.ensemble);
    }
  }
  const double ns = static_cast<double>(options.seeds);
  double worst_ratio = 0.0;
  std::size_t outside = 0;
  for (std::size_t n = 0; n < options.steps; ++n) {
    const double ratio = std::abs(diff[n] / ns) / (std::sqrt(var[n]) / ns);
    worst_ratio = std::max(worst_ratio, ratio);
    outside += ratio > options.standard_errors;
  }
  r.passed = outside == 0 && worst_jacobian <= options.jacobian_tolerance;
  r.detail = format("max |mean - Kalman| = %.2f SE over %.0f steps, log J spread = %.1e",
                    worst_ratio, static_cast<double>(options.steps), worst_jacobian);
  r.seconds = timer.seconds();
  return r;
}

SuiteReport check_resampling(const ResamplingCheckOptions& options) {
  const Timer timer;
  SuiteReport r{"resampling", true, "", 0.0};
  const Vector w{0.05, 0.4, 0.13, 0.22, 0.2};
  const std::size_t m = 7;
  const double reps = static_cast<double>(options.replications);
  double worst = 0.0;
  for (auto scheme : {ResamplingScheme::systematic, ResamplingScheme::multinomial,
                      ResamplingScheme::residual}) {
    RngStream rng(options.seed, 0x5e5a + static_cast<std::uint64_t>(scheme));
    Vector total(w.size(), 0.0);
    for (std::size_t k = 0; k < options.replications; ++k) {
      const auto counts = offspring_counts(w, m, scheme, rng);
      std::size_t sum = 0;
      for (std::size_t j = 0; j < w.size(); ++j) {
        total[j] += static_cast<double>(counts[j]);
        sum += counts[j];
      }
      if (sum != m) r.passed = false;
    }
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double sigma = std::sqrt(m * w[j] * (1 - w[j]) / reps);  // multinomial bound
      worst = std::max(worst, std::abs(total[j] / reps - m * w[j]) / sigma);
    }
  }
  r.passed = r.passed && worst <= options.standard_errors;
  r.detail = format("max |mean count - M w| = %.2f sigma (3 schemes)", worst);
  r.seconds = timer.seconds();
  return r;
}

SuiteReport check_importance(const ImportanceCheckOptions& options) {
  const Timer timer;
  SuiteReport r{"importance", true, "", 0.0};
  const ScalarQuartic f;
  const MinimizationResult min = minimize_posterior(f, Vector{0.0});
  const int bins = static_cast<int>(options.bins);
  const double lo = -1.5, hi = 2.0, width = (hi - lo) / bins;
  auto bin_of = [&](double x) {
    return std::clamp(static_cast<int>(std::floor((x - lo) / width)), 0, bins - 1);
  };
  Vector expected(bins, 0.0);
  const int grid = 400000;
  const double a = -8.0, b = 8.0, h = (b - a) / grid;
  double total = 0.0;
  for (int i = 0; i < grid; ++i) {
    const double x = a + (i + 0.5) * h;
    const double p = std::exp(-(f.value(Vector{x}) - min.minimum)) * h;
    expected[bin_of(x)] += p;
    total += p;
  }
  for (double& e : expected) e /= total;

  RngStream rng(options.seed, 0x1a4);
  const std::size_t n = options.samples;
  Vector xs(n), lw(n);
  for (std::size_t i = 0; i < n; ++i) {
    const RandomMapSample s = implicit_sample(f, min, rng);
    xs[i] = s.position[0];
    lw[i] = s.log_weight;
  }
  const double lse = log_sum_exp(lw);
  Vector observed(bins, 0.0), w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = std::exp(lw[i] - lse);
    observed[bin_of(xs[i])] += w[i];
  }
  double chi2 = 0.0;
  for (int k = 0; k < bins; ++k) {
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = (bin_of(xs[i]) == k ? 1.0 : 0.0) - expected[k];
      v += w[i] * w[i] * d * d;
    }
    chi2 += (observed[k] - expected[k]) * (observed[k] - expected[k]) * (1.0 - expected[k]) / v;
  }
  r.passed = chi2 < options.threshold;
  r.detail = format("chi2 = %.2f over %.0f bins (threshold %.2f)", chi2, bins, options.threshold);
  r.seconds = timer.seconds();
  return r;
}

}  // namespace da
