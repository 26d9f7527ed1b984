#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "da/config.hpp"
#include "da/harness.hpp"

namespace da {

/// Exit statuses of the `da` tool.
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int failure = 1;
inline constexpr int invalid_input = 2;
inline constexpr int collapse_dominated = 3;  // --strict only
}  // namespace exit_code

std::string_view code_version();

/// Shortest round-trip decimal form, independent of the locale; "nan" for NaN.
std::string format_number(double value);

inline constexpr std::string_view kTwinCsvHeader =
    "scenario,filter,particles,time,mean_error,error_variance,collapses,n_exp,seed";
inline constexpr std::string_view kConvergenceCsvHeader =
    "scenario,series,delta,mean_error,realizations,discarded,seed";

/// One row per (filter, M, check time).
std::string twin_results_csv(const Scenario& scenario, const TwinExperimentResult& result);
/// One row per (series, δ) followed by a row per series whose delta field is
/// "slope" and whose mean_error field holds the fitted slope.
std::string convergence_results_csv(const Scenario& scenario,
                                    const std::vector<ConvergenceResult>& result);

struct RunOptions {
  bool strict = false;
  std::string out_dir = ".";
  unsigned workers = 1;
};

int cmd_run(const std::string& config_path, const RunOptions& options, std::ostream& out,
            std::ostream& err);
/// suite: empty for all of jacobian, kalman, resampling, importance.
int cmd_check(const std::string& suite, std::ostream& out, std::ostream& err);
/// kind: convergence or error_bars.
int cmd_plotdata(const std::string& csv_path, const std::string& kind, const std::string& out_dir,
                 bool svg, std::ostream& out, std::ostream& err);
int cmd_preset(const std::string& name, const std::string& scale, std::ostream& out,
               std::ostream& err);

/// Entry point of the `da` executable.
int run_cli(int argc, char** argv);

}  // namespace da
