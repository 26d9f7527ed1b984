#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "da/implicit_core.hpp"
#include "da/numerics.hpp"
#include "da/rng.hpp"
#include "da/sde_models.hpp"

namespace da {

enum class FilterKind { implicit, implicit_quadratic, sir };
enum class ResamplingScheme { systematic, multinomial, residual };

std::string_view to_string(FilterKind kind);
FilterKind parse_filter_kind(std::string_view name);
std::string_view to_string(ResamplingScheme scheme);
ResamplingScheme parse_resampling_scheme(std::string_view name);

struct FilterConfig {
  FilterKind kind = FilterKind::implicit;
  std::size_t particles = 20;
  ResamplingScheme scheme = ResamplingScheme::systematic;
  // Unset: resample at every observation. Otherwise resample when
  // ESS < threshold·M.
  std::optional<double> ess_threshold;
  MapFactorChoice map = MapFactorChoice::hessian;
  JacobianDerivative derivative = JacobianDerivative::analytic;
  MinimizationOptions minimization;
  LambdaOptions lambda;

  void validate() const;
};

struct ParticleEnsemble {
  std::vector<Vector> positions;
  Vector log_weights;
  std::size_t step = 0;

  std::size_t size() const noexcept { return positions.size(); }
  /// M copies of `state` with equal weights.
  static ParticleEnsemble uniform(const Vector& state, std::size_t particles,
                                  std::size_t step = 0);
  /// Normalized weights exp(log w_j).
  Vector weights() const;
};

/// Thrown when the normalized weights leave fewer than two particles with
/// non-negligible mass (or none at all).
class FilterCollapse : public std::runtime_error {
 public:
  FilterCollapse(std::size_t step, std::size_t surviving, std::size_t particles);
  std::size_t step() const noexcept { return step_; }
  std::size_t surviving() const noexcept { return surviving_; }

 private:
  std::size_t step_;
  std::size_t surviving_;
};

/// Shifts log-weights so that log Σ w_j = 0. Throws FilterCollapse.
void normalize(ParticleEnsemble& ensemble);

double effective_sample_size(const ParticleEnsemble& ensemble);
Vector estimate_state(const ParticleEnsemble& ensemble);

/// Offspring counts for systematic resampling with the single uniform u in [0, 1).
std::vector<std::size_t> systematic_offspring(std::span<const double> weights, std::size_t m,
                                              double u);
std::vector<std::size_t> offspring_counts(std::span<const double> weights, std::size_t m,
                                          ResamplingScheme scheme, RngStream& rng);
/// Equal-weight ensemble drawn according to the normalized weights.
ParticleEnsemble resample(const ParticleEnsemble& ensemble, RngStream& rng,
                          ResamplingScheme scheme);

/// Where per-particle random streams come from: stream ids hash
/// (experiment, step, particle, purpose) under the master seed.
struct StreamKey {
  std::uint64_t seed = 0;
  std::uint64_t experiment = 0;

  RngStream stream(std::uint64_t step, std::uint64_t particle, std::uint64_t purpose) const;
};

namespace stream_purpose {
inline constexpr std::uint64_t reference_draw = 1;
inline constexpr std::uint64_t propagation = 2;
inline constexpr std::uint64_t resampling = 3;
inline constexpr std::uint64_t truth = 10;
inline constexpr std::uint64_t observation_noise = 11;
}  // namespace stream_purpose

struct StepDiagnostics {
  double ess = 0.0;  // before resampling
  bool resampled = false;
  std::size_t failures = 0;   // particles given −∞ log-weight
  std::size_t fallbacks = 0;  // minimizations that needed a substitute Hessian
  std::vector<int> lambda_iterations;
  std::vector<int> newton_iterations;
  std::vector<double> log_jacobians;
};

struct StepOutcome {
  ParticleEnsemble ensemble;
  Vector estimate;  // weighted mean before resampling
  /// Σ w_j²(X_j − estimate)², componentwise: the Monte Carlo variance of the
  /// self-normalized estimate to first order.
  Vector estimate_variance;
  StepDiagnostics diagnostics;
};

/// Advances the ensemble across one observation gap and assimilates b.
StepOutcome implicit_filter_step(const ParticleEnsemble& ensemble, std::span<const double> b,
                                 const StochasticModel& model, const ObservationModel& observation,
                                 const FilterConfig& config, const StreamKey& key,
                                 unsigned workers = 1);
StepOutcome sir_filter_step(const ParticleEnsemble& ensemble, std::span<const double> b,
                            const StochasticModel& model, const ObservationModel& observation,
                            const FilterConfig& config, const StreamKey& key, unsigned workers = 1);
/// Dispatches on config.kind.
StepOutcome filter_step(const ParticleEnsemble& ensemble, std::span<const double> b,
                        const StochasticModel& model, const ObservationModel& observation,
                        const FilterConfig& config, const StreamKey& key, unsigned workers = 1);

}  // namespace da
