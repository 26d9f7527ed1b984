#include "da/config.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace da {

using nlohmann::json;

ConfigError::ConfigError(const std::string& what, std::size_t line)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
      line_(line) {}

std::string_view to_string(Scale scale) { return scale == Scale::desk ? "desk" : "paper"; }

Scale parse_scale(std::string_view name) {
  if (name == "desk") return Scale::desk;
  if (name == "paper") return Scale::paper;
  throw ConfigError("unknown scale '" + std::string(name) + "' (expected desk or paper)");
}

// ---------------------------------------------------------------------------
// Presets

namespace {

json lorenz_model() {
  return {{"type", "lorenz63"},
          {"g", std::numbers::sqrt2},
          {"delta", 0.01},
          {"integrator", "klauder_petersen"}};
}

json sks_model(std::size_t modes, double g, const char* noise) {
  return {{"type", "sks"},
          {"modes", modes},
          {"g", g},
          {"noise", noise},
          {"delta", std::ldexp(1.0, -10)},
          {"integrator", "exponential_euler"}};
}

json filters(std::vector<int> implicit, std::vector<int> sir) {
  return json::array({{{"kind", "implicit"}, {"particles", implicit}},
                      {{"kind", "sir"}, {"particles", sir}}});
}

json twin(const char* name, Scale scale, json model, json observation, int steps,
          std::vector<int> checks, int experiments, json filter_list) {
  return {{"schema_version", kSchemaVersion},
          {"scenario", name},
          {"scale", to_string(scale)},
          {"study", "twin"},
          {"seed", 1},
          {"model", std::move(model)},
          {"observation", std::move(observation)},
          {"steps", steps},
          {"check_steps", checks},
          {"experiments", experiments},
          {"filters", std::move(filter_list)}};
}

json lorenz_observation(std::size_t gap, bool x_only) {
  json o = {{"operator", x_only ? "components" : "identity"}, {"noise_variance", 0.1}, {"gap", gap}};
  if (x_only) o["components"] = {0};
  return o;
}

json grid_observation(std::size_t points, bool cubic, std::size_t gap) {
  return {{"operator", "grid"},
          {"points", points},
          {"nonlinearity", cubic ? "cubic" : "none"},
          {"noise_variance", 1.0},
          {"gap", gap}};
}

json convergence(const char* name, Scale scale, json model, json series, std::vector<int> deltas,
                 int ref, int realizations, double horizon) {
  return {{"schema_version", kSchemaVersion},
          {"scenario", name},
          {"scale", to_string(scale)},
          {"study", "convergence"},
          {"seed", 1},
          {"model", std::move(model)},
          {"series", std::move(series)},
          {"deltas_log2", deltas},
          {"delta_ref_log2", ref},
          {"realizations", realizations},
          {"horizon", horizon}};
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"table1", "table2", "table3",       "table4",
                                              "table4_white", "table5", "table5_white", "table6",
                                              "fig3",   "fig6"};
  return names;
}

json preset_config(std::string_view name, Scale scale) {
  const bool paper = scale == Scale::paper;
  const int lorenz_n = paper ? 1000 : 100;
  if (name == "table1" || name == "table2") {
    return twin(name == "table1" ? "table1" : "table2", scale, lorenz_model(),
                lorenz_observation(1, name == "table2"), 1200, {500, 1000, 1200}, lorenz_n,
                filters({5, 10, 20, 30}, {5, 10, 20, 30, 50}));
  }
  if (name == "table3") {
    return twin("table3", scale, lorenz_model(), lorenz_observation(48, false), 960, {480, 960},
                paper ? 1000 : 50, filters({5, 10, 20}, {10, 20, 50, 100}));
  }
  const int sks_n = paper ? 500 : 20;
  if (name == "table4" || name == "table4_white") {
    const bool white = name == "table4_white";
    const std::size_t m = white && paper ? 512 : 128;
    return twin(white ? "table4_white" : "table4", scale, sks_model(m, 4.0, white ? "white" : "smooth"),
                grid_observation(m / 2, false, 1), 100, {100}, sks_n,
                filters({10, 20, 50, 100, 200, 300}, {50, 100, 500, 1000}));
  }
  if (name == "table5") {
    return twin("table5", scale, sks_model(128, 4.0, "smooth"), grid_observation(64, true, 1), 100,
                {100}, sks_n, filters({10, 20, 50, 100}, {50, 100, 500, 5000}));
  }
  if (name == "table5_white") {
    const std::size_t m = paper ? 512 : 128;
    return twin("table5_white", scale, sks_model(m, 4.0, "white"), grid_observation(m / 2, true, 1),
                100, {100}, sks_n, filters({10, 20}, {50, 100, 500, 5000}));
  }
  if (name == "table6") {
    return twin("table6", scale, sks_model(128, 1.0, "smooth"), grid_observation(64, false, 2), 100,
                {100}, sks_n, filters({10, 20}, {500, 1000}));
  }
  if (name == "fig3") {
    json model = {{"type", "lorenz63"}, {"g", std::numbers::sqrt2}};
    json series = json::array({{{"name", "kp"}, {"integrator", "klauder_petersen"}},
                               {{"name", "rk4"}, {"integrator", "rk4_additive"}}});
    return convergence("fig3", scale, model, series, {-5, -6, -7, -8, -9}, -12, paper ? 1000 : 200,
                       1.0);
  }
  if (name == "fig6") {
    json model = {{"type", "sks"}, {"g", 4.0}, {"modes", paper ? 512 : 64}};
    json white = {{"name", "white"}, {"noise", "white"}};
    if (paper) white["modes"] = 1024;
    json series = json::array({{{"name", "smooth"}, {"noise", "smooth"}}, white});
    return convergence("fig6", scale, model, series, {-4, -5, -6, -7, -8}, -12, paper ? 2000 : 200,
                       3.0);
  }
  throw ConfigError("unknown preset '" + std::string(name) + "'");
}

json load_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    const std::size_t offset = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    const std::size_t line = 1 + std::count(text.begin(), text.begin() + offset, '\n');
    std::string msg = e.what();
    if (const auto p = msg.find("parse error"); p != std::string::npos) msg = msg.substr(p);
    throw ConfigError(msg, line);
  }
  if (!doc.is_object()) throw ConfigError("configuration must be a JSON object", 1);
  if (doc.contains("preset")) {
    if (!doc["preset"].is_string()) throw ConfigError("'preset' must be a string");
    Scale scale = Scale::desk;
    if (doc.contains("scale")) {
      if (!doc["scale"].is_string()) throw ConfigError("'scale' must be a string");
      scale = parse_scale(doc["scale"].get<std::string>());
    }
    json merged = preset_config(doc["preset"].get<std::string>(), scale);
    doc.erase("preset");
    merged.merge_patch(doc);
    return merged;
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Schema validation and construction

namespace {

class Reader {
 public:
  explicit Reader(std::string_view text) : text_(text) {}

  std::size_t line_of(const std::string& key) const {
    if (text_.empty()) return 0;
    const std::string quoted = "\"" + key + "\"";
    const auto pos = text_.find(quoted);
    if (pos == std::string_view::npos) return 0;
    return 1 + std::count(text_.begin(), text_.begin() + pos, '\n');
  }

  [[noreturn]] void fail(const std::string& path, const std::string& key,
                         const std::string& what) const {
    throw ConfigError(what + " (" + join(path, key) + ")", line_of(key));
  }

  void keys(const json& obj, const std::string& path, std::initializer_list<const char*> required,
            std::initializer_list<const char*> optional) const {
    if (!obj.is_object()) throw ConfigError("'" + path + "' must be an object", line_of(last(path)));
    for (const char* k : required) {
      if (!obj.contains(k)) {
        throw ConfigError("missing required key '" + std::string(k) + "'" +
                          (path.empty() ? "" : " in '" + path + "'"));
      }
    }
    for (const auto& [k, v] : obj.items()) {
      const bool known = std::any_of(required.begin(), required.end(), [&](const char* r) { return k == r; }) ||
                         std::any_of(optional.begin(), optional.end(), [&](const char* o) { return k == o; });
      if (!known) fail(path, k, "unknown key '" + k + "'");
    }
  }

  double number(const json& obj, const std::string& path, const char* key) const {
    const json& v = obj.at(key);
    if (!v.is_number()) fail(path, key, std::string("'") + key + "' must be a number");
    return v.get<double>();
  }
  double positive(const json& obj, const std::string& path, const char* key) const {
    const double v = number(obj, path, key);
    if (!(v > 0.0) || !std::isfinite(v)) fail(path, key, std::string("'") + key + "' must be positive");
    return v;
  }
  std::int64_t integer(const json& obj, const std::string& path, const char* key) const {
    const json& v = obj.at(key);
    if (!v.is_number_integer()) fail(path, key, std::string("'") + key + "' must be an integer");
    return v.get<std::int64_t>();
  }
  std::size_t count(const json& obj, const std::string& path, const char* key) const {
    const std::int64_t v = integer(obj, path, key);
    if (v < 1) fail(path, key, std::string("'") + key + "' must be at least 1");
    return static_cast<std::size_t>(v);
  }
  std::string string(const json& obj, const std::string& path, const char* key) const {
    const json& v = obj.at(key);
    if (!v.is_string()) fail(path, key, std::string("'") + key + "' must be a string");
    return v.get<std::string>();
  }
  std::vector<std::int64_t> integers(const json& obj, const std::string& path, const char* key) const {
    const json& v = obj.at(key);
    if (!v.is_array() || v.empty()) fail(path, key, std::string("'") + key + "' must be a non-empty array");
    std::vector<std::int64_t> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) fail(path, key, std::string("'") + key + "' must hold integers");
      out.push_back(e.get<std::int64_t>());
    }
    return out;
  }
  std::vector<std::size_t> counts(const json& obj, const std::string& path, const char* key) const {
    std::vector<std::size_t> out;
    for (auto v : integers(obj, path, key)) {
      if (v < 1) fail(path, key, std::string("'") + key + "' entries must be at least 1");
      out.push_back(static_cast<std::size_t>(v));
    }
    return out;
  }

  template <class F>
  auto parsed(const json& obj, const std::string& path, const char* key, F parse) const {
    const std::string s = string(obj, path, key);
    try {
      return parse(s);
    } catch (const std::exception& e) {
      fail(path, key, e.what());
    }
  }

 private:
  static std::string join(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
  }
  static std::string last(const std::string& path) {
    const auto p = path.rfind('.');
    std::string tail = p == std::string::npos ? path : path.substr(p + 1);
    if (const auto b = tail.find('['); b != std::string::npos) tail = tail.substr(0, b);
    return tail;
  }

  std::string_view text_;
};

Integrator parse_integrator(const std::string& s) {
  if (s == "euler_maruyama") return Integrator::euler_maruyama;
  if (s == "rk4_additive") return Integrator::rk4_additive;
  if (s == "klauder_petersen") return Integrator::klauder_petersen;
  if (s == "exponential_euler") return Integrator::exponential_euler;
  throw std::invalid_argument("unknown integrator '" + s + "'");
}

// `timed`: delta and integrator are part of the model (twin studies) rather
// than set per convergence step.
std::shared_ptr<const StochasticModel> build_model(const Reader& rd, const json& m,
                                                   const std::string& path, bool timed,
                                                   std::optional<double> delta_override) {
  if (!m.is_object()) throw ConfigError("'" + path + "' must be an object");
  if (!m.contains("type")) throw ConfigError("missing required key 'type' in '" + path + "'");
  const std::string type = rd.string(m, path, "type");
  const double delta = delta_override ? *delta_override : 0.0;
  if (type == "lorenz63") {
    if (timed) {
      rd.keys(m, path, {"type", "g", "delta", "integrator"}, {"sigma", "rho", "beta", "initial_state"});
    } else {
      rd.keys(m, path, {"type", "g", "integrator"}, {"sigma", "rho", "beta", "initial_state", "delta"});
    }
    Lorenz63Params p;
    p.g = rd.number(m, path, "g");
    if (p.g < 0.0) rd.fail(path, "g", "'g' must be non-negative");
    if (m.contains("sigma")) p.sigma = rd.number(m, path, "sigma");
    if (m.contains("rho")) p.rho = rd.number(m, path, "rho");
    if (m.contains("beta")) p.beta = rd.number(m, path, "beta");
    Vector init(p.initial.begin(), p.initial.end());
    if (m.contains("initial_state")) {
      const json& v = m["initial_state"];
      if (!v.is_array() || v.size() != 3) rd.fail(path, "initial_state", "'initial_state' must hold 3 numbers");
      for (std::size_t i = 0; i < 3; ++i) {
        if (!v[i].is_number()) rd.fail(path, "initial_state", "'initial_state' must hold 3 numbers");
        init[i] = v[i].get<double>();
      }
    }
    const Integrator integ = rd.parsed(m, path, "integrator", parse_integrator);
    if (integ == Integrator::exponential_euler) {
      rd.fail(path, "integrator", "exponential_euler applies to the sks model only");
    }
    const double d = timed ? rd.positive(m, path, "delta") : delta;
    return std::make_shared<DriftModel>(std::make_shared<LorenzDrift>(p), Vector{p.g}, d, integ, init);
  }
  if (type == "sks") {
    if (timed) {
      rd.keys(m, path, {"type", "g", "delta", "modes", "noise"}, {"integrator", "period", "viscosity"});
    } else {
      rd.keys(m, path, {"type", "g", "modes", "noise"}, {"integrator", "period", "viscosity", "delta"});
    }
    SksParams p;
    p.g = rd.number(m, path, "g");
    if (p.g < 0.0) rd.fail(path, "g", "'g' must be non-negative");
    p.modes = rd.count(m, path, "modes");
    p.spectrum = rd.parsed(m, path, "noise", [](const std::string& s) { return parse_noise_spectrum(s); });
    if (m.contains("period")) p.period = rd.positive(m, path, "period");
    if (m.contains("viscosity")) p.viscosity = rd.positive(m, path, "viscosity");
    if (m.contains("integrator") &&
        rd.parsed(m, path, "integrator", parse_integrator) != Integrator::exponential_euler) {
      rd.fail(path, "integrator", "the sks model supports exponential_euler only");
    }
    const double d = timed ? rd.positive(m, path, "delta") : delta;
    return std::make_shared<SksModel>(p, d);
  }
  rd.fail(path, "type", "unknown model type '" + type + "' (expected lorenz63 or sks)");
}

std::shared_ptr<const ObservationModel> build_observation(const Reader& rd, const json& o,
                                                          const json& model) {
  const std::string path = "observation";
  rd.keys(o, path, {"operator", "noise_variance"}, {"gap", "components", "points", "nonlinearity"});
  const std::string op = rd.string(o, path, "operator");
  const double variance = rd.number(o, path, "noise_variance");
  if (variance < 0.0) rd.fail(path, "noise_variance", "'noise_variance' must be non-negative");
  const double sd = std::sqrt(variance);
  const std::size_t gap = o.contains("gap") ? rd.count(o, path, "gap") : 1;
  auto nonlinearity = ObservationNonlinearity::none;
  if (o.contains("nonlinearity")) {
    nonlinearity = rd.parsed(o, path, "nonlinearity", [](const std::string& s) {
      if (s == "none") return ObservationNonlinearity::none;
      if (s == "cubic") return ObservationNonlinearity::cubic;
      throw std::invalid_argument("unknown nonlinearity '" + s + "' (expected none or cubic)");
    });
  }
  const std::string type = model.at("type").get<std::string>();
  const std::size_t m = type == "lorenz63" ? 3 : model.at("modes").get<std::size_t>();

  std::optional<ObservationModel> base;
  if (op == "identity") {
    base = ObservationModel::identity(m, sd, gap);
  } else if (op == "components") {
    if (!o.contains("components")) throw ConfigError("missing required key 'components' in 'observation'");
    std::vector<std::size_t> idx;
    for (auto v : rd.integers(o, path, "components")) {
      if (v < 0 || static_cast<std::size_t>(v) >= m) rd.fail(path, "components", "component index out of range");
      idx.push_back(static_cast<std::size_t>(v));
    }
    base = ObservationModel::select(m, idx, sd, gap);
  } else if (op == "grid") {
    if (type != "sks") rd.fail(path, "operator", "the grid operator needs the sks model");
    if (!o.contains("points")) throw ConfigError("missing required key 'points' in 'observation'");
    SksParams p;
    p.modes = m;
    if (model.contains("period")) p.period = model["period"].get<double>();
    const Vector loc = sks_equidistant_locations(rd.count(o, path, "points"), p);
    return std::make_shared<ObservationModel>(
        ObservationModel::sks_physical(p, loc, nonlinearity, sd, gap));
  } else {
    rd.fail(path, "operator", "unknown operator '" + op + "' (expected identity, components or grid)");
  }
  if (nonlinearity == ObservationNonlinearity::none) return std::make_shared<ObservationModel>(*base);
  return std::make_shared<ObservationModel>(base->linear_part(), nonlinearity, base->noise_std(), gap);
}

std::vector<FilterConfig> build_filters(const Reader& rd, const json& list) {
  if (!list.is_array() || list.empty()) {
    throw ConfigError("'filters' must be a non-empty array", rd.line_of("filters"));
  }
  std::vector<FilterConfig> out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string path = "filters[" + std::to_string(i) + "]";
    const json& f = list[i];
    rd.keys(f, path, {"kind", "particles"},
            {"resampling", "ess_threshold", "map_factor", "jacobian_derivative"});
    FilterConfig base;
    base.kind = rd.parsed(f, path, "kind", [](const std::string& s) { return parse_filter_kind(s); });
    if (f.contains("resampling")) {
      base.scheme = rd.parsed(f, path, "resampling",
                              [](const std::string& s) { return parse_resampling_scheme(s); });
    }
    if (f.contains("ess_threshold") && !f["ess_threshold"].is_null()) {
      base.ess_threshold = rd.number(f, path, "ess_threshold");
    }
    if (f.contains("map_factor")) {
      base.map = rd.parsed(f, path, "map_factor", [](const std::string& s) {
        if (s == "hessian") return MapFactorChoice::hessian;
        if (s == "identity") return MapFactorChoice::identity;
        throw std::invalid_argument("unknown map factor '" + s + "' (expected hessian or identity)");
      });
    }
    if (f.contains("jacobian_derivative")) {
      base.derivative = rd.parsed(f, path, "jacobian_derivative", [](const std::string& s) {
        if (s == "analytic") return JacobianDerivative::analytic;
        if (s == "numerical") return JacobianDerivative::numerical;
        throw std::invalid_argument("unknown derivative '" + s + "' (expected analytic or numerical)");
      });
    }
    std::vector<std::size_t> particles;
    if (f["particles"].is_array()) {
      particles = rd.counts(f, path, "particles");
    } else {
      particles.push_back(rd.count(f, path, "particles"));
    }
    for (std::size_t m : particles) {
      FilterConfig c = base;
      c.particles = m;
      try {
        c.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string(e.what()) + " (" + path + ")", rd.line_of("kind"));
      }
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace

Scenario build_scenario(const json& config, std::string_view text) {
  const Reader rd(text);
  if (!config.is_object()) throw ConfigError("configuration must be a JSON object", 1);
  for (const char* k : {"schema_version", "scenario", "study", "seed", "model"}) {
    if (!config.contains(k)) throw ConfigError("missing required key '" + std::string(k) + "'");
  }
  if (rd.integer(config, "", "schema_version") != kSchemaVersion) {
    rd.fail("", "schema_version",
            "unsupported schema_version (this build reads version " + std::to_string(kSchemaVersion) + ")");
  }
  Scenario s;
  s.name = rd.string(config, "", "scenario");
  const std::string study = rd.string(config, "", "study");
  const std::int64_t seed = rd.integer(config, "", "seed");
  if (seed < 0) rd.fail("", "seed", "'seed' must be non-negative");
  s.seed = static_cast<std::uint64_t>(seed);
  s.scale = config.contains("scale") ? rd.string(config, "", "scale") : "custom";
  const json& model = config["model"];

  if (study == "twin") {
    rd.keys(config, "",
            {"schema_version", "scenario", "study", "seed", "model", "observation", "steps",
             "check_steps", "experiments", "filters"},
            {"scale", "description"});
    TwinExperimentSpec t;
    t.scenario = s.name;
    t.seed = s.seed;
    t.model = build_model(rd, model, "model", true, std::nullopt);
    t.observation = build_observation(rd, config["observation"], model);
    t.steps = rd.count(config, "", "steps");
    t.check_steps = rd.counts(config, "", "check_steps");
    t.experiments = rd.count(config, "", "experiments");
    t.filters = build_filters(rd, config["filters"]);
    try {
      t.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), rd.line_of("check_steps"));
    }
    s.twin = std::move(t);
  } else if (study == "convergence") {
    rd.keys(config, "",
            {"schema_version", "scenario", "study", "seed", "model", "series", "deltas_log2",
             "delta_ref_log2", "realizations", "horizon"},
            {"scale", "description", "blow_up"});
    ConvergenceSpec c;
    c.scenario = s.name;
    c.seed = s.seed;
    for (auto k : rd.integers(config, "", "deltas_log2")) c.deltas.push_back(std::ldexp(1.0, static_cast<int>(k)));
    c.delta_ref = std::ldexp(1.0, static_cast<int>(rd.integer(config, "", "delta_ref_log2")));
    c.realizations = rd.count(config, "", "realizations");
    c.horizon = rd.positive(config, "", "horizon");
    if (config.contains("blow_up")) c.blow_up = rd.positive(config, "", "blow_up");
    const json& series = config["series"];
    if (!series.is_array() || series.empty()) {
      throw ConfigError("'series' must be a non-empty array", rd.line_of("series"));
    }
    for (std::size_t i = 0; i < series.size(); ++i) {
      const std::string path = "series[" + std::to_string(i) + "]";
      if (!series[i].is_object() || !series[i].contains("name")) {
        throw ConfigError("missing required key 'name' in '" + path + "'");
      }
      json merged = model;
      for (const auto& [k, v] : series[i].items()) {
        if (k != "name") merged[k] = v;
      }
      build_model(rd, merged, path, false, 1.0);  // schema check
      c.series.push_back({rd.string(series[i], path, "name"),
                          [merged, path](double delta) {
                            return build_model(Reader({}), merged, path, false, delta);
                          }});
    }
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what(), rd.line_of("deltas_log2"));
    }
    s.convergence = std::move(c);
  } else {
    rd.fail("", "study", "unknown study '" + study + "' (expected twin or convergence)");
  }
  return s;
}

}  // namespace da
