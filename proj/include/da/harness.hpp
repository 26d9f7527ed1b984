#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "da/filters.hpp"
#include "da/sde_models.hpp"

namespace da {

struct TwinExperimentSpec {
  std::string scenario;
  std::shared_ptr<const StochasticModel> model;
  std::shared_ptr<const ObservationModel> observation;
  std::vector<FilterConfig> filters;
  std::size_t steps = 0;
  std::vector<std::size_t> check_steps;  // multiples of the observation gap
  std::size_t experiments = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One filter run inside one experiment.
struct RunRecord {
  std::size_t experiment = 0;
  std::size_t filter = 0;  // index into spec.filters
  bool collapsed = false;
  std::size_t collapse_step = 0;
  std::vector<double> errors;  // per check step; NaN when collapsed
  double mean_ess = 0.0;       // averaged over observation times reached
  std::size_t observations = 0;
  std::size_t failed_samples = 0;
  std::size_t fallbacks = 0;
  std::size_t lambda_samples = 0;
  std::size_t lambda_within_20 = 0;  // samples whose λ solve took ≤ 20 iterations
  int lambda_max_iterations = 0;
};

struct ErrorStats {
  double mean_error = 0.0;
  double error_variance = 0.0;
  bool variance_defined = false;  // false with a single successful run
  std::size_t successes = 0;
  std::size_t collapses = 0;
};

/// Mean and sample variance (N−1) of the error norms. Throws with no successes.
ErrorStats aggregate_errors(std::span<const double> errors, std::size_t collapses = 0);

struct FilterSummary {
  FilterConfig config;
  std::vector<ErrorStats> stats;  // per check step; successes = 0 when all runs collapsed
  std::size_t collapses = 0;
  double mean_ess = 0.0;          // over runs that did not collapse
  std::size_t lambda_samples = 0;
  std::size_t lambda_within_20 = 0;
  int lambda_max_iterations = 0;
};

struct TwinExperimentResult {
  std::vector<RunRecord> runs;  // experiment-major, filter-minor
  std::vector<FilterSummary> filters;
};

/// Reference trajectory and observations for one experiment.
struct TwinData {
  std::vector<Vector> truth;         // steps+1 states
  std::vector<Vector> observations;  // indexed by step; empty where nothing is observed
};
TwinData generate_twin_data(const StochasticModel& model, const ObservationModel& observation,
                            std::size_t steps, const StreamKey& key);

/// Runs one filter against prepared data.
RunRecord run_filter(const TwinData& data, const StochasticModel& model,
                     const ObservationModel& observation, const FilterConfig& config,
                     std::span<const std::size_t> check_steps, const StreamKey& key,
                     unsigned workers = 1);

/// All experiments and filters; experiments run on `workers` threads and are
/// reduced in index order, so results do not depend on the worker count.
TwinExperimentResult run_twin_experiment(const TwinExperimentSpec& spec, unsigned workers = 1);

// ---------------------------------------------------------------------------

struct ConvergenceSeries {
  std::string name;
  /// Model for a given time step; every series member shares the state dimension.
  std::function<std::shared_ptr<const StochasticModel>(double delta)> make_model;
};

struct ConvergenceSpec {
  std::string scenario;
  std::vector<ConvergenceSeries> series;
  std::vector<double> deltas;
  double delta_ref = 0.0;
  std::size_t realizations = 1;
  double horizon = 1.0;
  std::uint64_t seed = 0;
  double blow_up = 1e10;

  void validate() const;
};

struct ConvergencePoint {
  double delta = 0.0;
  double mean_error = std::numeric_limits<double>::quiet_NaN();
  std::size_t realizations = 0;
  std::size_t discarded = 0;
};

struct ConvergenceResult {
  std::string name;
  std::vector<ConvergencePoint> points;
  double slope = std::numeric_limits<double>::quiet_NaN();
};

/// Least-squares slope of log y against log x over pairs with finite positive y.
double fit_log_slope(std::span<const double> x, std::span<const double> y);

/// Strong errors ‖x_δ(T) − x_ref(T)‖ with coarse Brownian increments formed by
/// summing the fine ones.
std::vector<ConvergenceResult> run_convergence_study(const ConvergenceSpec& spec,
                                                     unsigned workers = 1);

}  // namespace da
