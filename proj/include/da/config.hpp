#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "da/harness.hpp"
#include "json.hpp"

namespace da {

inline constexpr int kSchemaVersion = 1;

/// Invalid configuration. line() is 0 when the position is unknown.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

enum class Scale { desk, paper };
std::string_view to_string(Scale scale);
Scale parse_scale(std::string_view name);

/// Names accepted by preset_config().
const std::vector<std::string>& preset_names();
/// Complete configuration document of a named preset.
nlohmann::json preset_config(std::string_view name, Scale scale = Scale::desk);

/// Parses config text. A document with a "preset" key (and optionally
/// "scale") starts from that preset and deep-merges the remaining keys over it.
nlohmann::json load_config(std::string_view text);

struct Scenario {
  std::string name;
  std::string scale;
  std::uint64_t seed = 0;
  std::optional<TwinExperimentSpec> twin;
  std::optional<ConvergenceSpec> convergence;
};

/// Validates the document against the schema and builds the experiment.
/// `text` is only used to attach line numbers to diagnostics.
Scenario build_scenario(const nlohmann::json& config, std::string_view text = {});

}  // namespace da
