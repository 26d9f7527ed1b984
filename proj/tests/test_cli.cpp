#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "da/cli.hpp"
#include "doctest.h"

using namespace da;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("da_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(path / name) << text;
    return (path / name).string();
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

const char* kSmallLorenz = R"({
  "preset": "table1",
  "steps": 20,
  "check_steps": [10, 20],
  "experiments": 3,
  "filters": [
    {"kind": "implicit", "particles": [3, 4]},
    {"kind": "sir", "particles": 5}
  ]
})";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("numbers are written independently of the locale") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(-2.5e-12) == "-2.5e-12");
  CHECK(format_number(std::nan("")) == "nan");
  CHECK(format_number(3.0) == "3");
}

TEST_CASE("every preset builds at both scales") {
  CHECK(preset_names().size() >= 8);
  for (const auto& name : preset_names()) {
    for (Scale scale : {Scale::desk, Scale::paper}) {
      const nlohmann::json cfg = preset_config(name, scale);
      CHECK(cfg.at("schema_version") == kSchemaVersion);
      const Scenario s = build_scenario(cfg);
      CHECK(s.name == name);
      CHECK(s.twin.has_value() != s.convergence.has_value());
    }
  }
}

TEST_CASE("table1 desk preset covers the particle counts of the table") {
  const Scenario s = build_scenario(preset_config("table1"));
  std::vector<std::size_t> implicit, sir;
  for (const auto& f : s.twin->filters) (f.kind == FilterKind::sir ? sir : implicit).push_back(f.particles);
  CHECK(implicit == std::vector<std::size_t>{5, 10, 20, 30});
  CHECK(sir == std::vector<std::size_t>{5, 10, 20, 30, 50});
  CHECK(s.twin->check_steps == std::vector<std::size_t>{500, 1000, 1200});
}

TEST_CASE("preset overrides are deep-merged") {
  const auto cfg = load_config(R"({"preset": "table3", "model": {"g": 0.5}, "experiments": 4})");
  CHECK(cfg["model"]["g"] == 0.5);
  CHECK(cfg["model"]["integrator"] == "klauder_petersen");
  CHECK(cfg["experiments"] == 4);
  CHECK(cfg["observation"]["gap"] == 48);
}

TEST_CASE("schema violations are reported with the key and line") {
  const std::string text = "{\n  \"preset\": \"table1\",\n  \"modle\": {}\n}\n";
  try {
    build_scenario(load_config(text), text);
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("unknown key 'modle'") != std::string::npos);
    CHECK(e.line() == 3);
  }
  const std::string broken = "{\n  \"scenario\": \"x\",\n  \"seed\": 1,,\n}\n";
  try {
    load_config(broken);
    FAIL("parse error not reported");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 3);
  }
  auto cfg = preset_config("table1");
  cfg["check_steps"] = {5, 7};
  cfg["observation"]["gap"] = 5;
  CHECK_THROWS_AS(build_scenario(cfg), ConfigError);
  cfg = preset_config("table1");
  cfg["filters"][0]["kind"] = "enkf";
  CHECK_THROWS_AS(build_scenario(cfg), ConfigError);
  cfg = preset_config("table1");
  cfg["schema_version"] = 99;
  CHECK_THROWS_AS(build_scenario(cfg), ConfigError);
}

TEST_CASE("a config without a model exits 2 naming the key") {
  TempDir dir;
  auto cfg = preset_config("table1");
  cfg.erase("model");
  const std::string path = dir.write("bad.json", cfg.dump(2));
  std::ostringstream out, err;
  CHECK(cmd_run(path, {}, out, err) == exit_code::invalid_input);
  CHECK(err.str().find("'model'") != std::string::npos);
  CHECK(cmd_run((dir.path / "missing.json").string(), {}, out, err) == exit_code::invalid_input);
}

TEST_CASE("twin run writes deterministic results that plotdata accepts") {
  TempDir dir;
  const std::string path = dir.write("small.json", kSmallLorenz);
  std::ostringstream out, err;
  RunOptions opt;
  opt.out_dir = (dir.path / "a").string();
  opt.workers = 1;
  REQUIRE(cmd_run(path, opt, out, err) == exit_code::ok);
  opt.out_dir = (dir.path / "b").string();
  opt.workers = 3;
  REQUIRE(cmd_run(path, opt, out, err) == exit_code::ok);
  const std::string a = slurp(dir.path / "a" / "results.csv");
  CHECK(a == slurp(dir.path / "b" / "results.csv"));
  CHECK(a.rfind(std::string(kTwinCsvHeader) + "\n", 0) == 0);
  CHECK(count_lines(a) == 1 + 3 * 2);
  CHECK(a.find("table1,implicit,3,0.1,") != std::string::npos);
  CHECK(a.find("table1,sir,5,0.2,") != std::string::npos);
  CHECK(slurp(dir.path / "a" / "summary.txt").find(std::string(code_version())) != std::string::npos);

  std::ostringstream pout, perr;
  CHECK(cmd_plotdata((dir.path / "a" / "results.csv").string(), "error_bars", "", true, pout, perr) ==
        exit_code::ok);
  CHECK(perr.str().empty());
  CHECK(fs::exists(dir.path / "a" / "table1_t0.2_implicit.dat"));
  CHECK(fs::exists(dir.path / "a" / "table1_t0.2_error_bars.svg"));
  CHECK(count_lines(slurp(dir.path / "a" / "table1_t0.2_implicit.dat")) == 3);
  CHECK(cmd_plotdata((dir.path / "a" / "results.csv").string(), "convergence", "", false, pout, perr) ==
        exit_code::invalid_input);
}

TEST_CASE("convergence run writes series and slope rows") {
  TempDir dir;
  const std::string path = dir.write(
      "fig3.json",
      R"({"preset": "fig3", "realizations": 3, "deltas_log2": [-3, -4], "delta_ref_log2": -6})");
  std::ostringstream out, err;
  RunOptions opt;
  opt.out_dir = dir.path.string();
  REQUIRE(cmd_run(path, opt, out, err) == exit_code::ok);
  const std::string csv = slurp(dir.path / "results.csv");
  CHECK(csv.rfind(std::string(kConvergenceCsvHeader) + "\n", 0) == 0);
  CHECK(csv.find("fig3,kp,0.125,") != std::string::npos);
  CHECK(csv.find("fig3,kp,slope,") != std::string::npos);
  CHECK(csv.find("fig3,rk4,slope,") != std::string::npos);
  CHECK(count_lines(csv) == 1 + 2 * 2 + 2);
  std::ostringstream pout, perr;
  REQUIRE(cmd_plotdata((dir.path / "results.csv").string(), "convergence", "", true, pout, perr) ==
          exit_code::ok);
  CHECK(perr.str().empty());
  CHECK(count_lines(slurp(dir.path / "fig3_kp.dat")) == 2 + 2);
  CHECK(fs::exists(dir.path / "fig3_rk4.dat"));
  CHECK(fs::exists(dir.path / "fig3_convergence.svg"));
}

TEST_CASE("strict mode fails a collapse-dominated scenario") {
  TempDir dir;
  const std::string path = dir.write("collapse.json", R"({
    "preset": "table1", "steps": 10, "check_steps": [10], "experiments": 3,
    "observation": {"noise_variance": 1e-10},
    "filters": [{"kind": "sir", "particles": 3}]
  })");
  std::ostringstream out, err;
  RunOptions opt;
  opt.out_dir = dir.path.string();
  CHECK(cmd_run(path, opt, out, err) == exit_code::ok);
  CHECK(slurp(dir.path / "results.csv").find(",nan,nan,3,3,1") != std::string::npos);
  opt.strict = true;
  CHECK(cmd_run(path, opt, out, err) == exit_code::collapse_dominated);
}

TEST_CASE("plotdata rejects empty and foreign files") {
  TempDir dir;
  std::ostringstream out, err;
  CHECK(cmd_plotdata(dir.write("empty.csv", ""), "error_bars", "", false, out, err) ==
        exit_code::invalid_input);
  CHECK(cmd_plotdata(dir.write("header.csv", std::string(kTwinCsvHeader) + "\n"), "error_bars", "",
                     false, out, err) == exit_code::invalid_input);
  CHECK(cmd_plotdata(dir.write("other.csv", "a,b\n1,2\n"), "error_bars", "", false, out, err) ==
        exit_code::invalid_input);
  CHECK(cmd_plotdata(dir.write("x.csv", std::string(kTwinCsvHeader) + "\n"), "histogram", "", false,
                     out, err) == exit_code::invalid_input);
}

TEST_CASE("check and preset commands") {
  std::ostringstream out, err;
  CHECK(cmd_check("resampling", out, err) == exit_code::ok);
  CHECK(out.str().find("suite resampling: PASS") != std::string::npos);
  CHECK(cmd_check("nonsense", out, err) == exit_code::invalid_input);
  std::ostringstream json_out;
  CHECK(cmd_preset("fig6", "paper", json_out, err) == exit_code::ok);
  CHECK(nlohmann::json::parse(json_out.str())["series"][1]["modes"] == 1024);
  CHECK(cmd_preset("table9", "desk", out, err) == exit_code::invalid_input);
}

}  // TEST_SUITE
