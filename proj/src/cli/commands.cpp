#include "da/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "da/checks.hpp"

#ifndef DA_VERSION
#define DA_VERSION "unknown"
#endif

namespace da {

namespace fs = std::filesystem;

std::string_view code_version() { return DA_VERSION; }

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

namespace {

// Check times are multiples of δ; twelve significant digits hide the
// representation error of n·δ.
std::string format_time(double t) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, t, std::chars_format::general, 12);
  return std::string(buf, res.ptr);
}

std::string printf_string(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

bool read_file(const std::string& path, std::string& text) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::ostringstream ss;
  ss << in.rdbuf();
  text = ss.str();
  return true;
}

bool write_file(const fs::path& path, const std::string& text, std::ostream& err) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    err << "error: cannot write " << path.string() << "\n";
    return false;
  }
  return true;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

bool parse_double(const std::string& s, double& v) {
  if (s == "nan") {
    v = std::nan("");
    return true;
  }
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace

std::string twin_results_csv(const Scenario& scenario, const TwinExperimentResult& result) {
  const TwinExperimentSpec& spec = *scenario.twin;
  std::string csv(kTwinCsvHeader);
  csv += '\n';
  const double delta = spec.model->time_step();
  for (const FilterSummary& f : result.filters) {
    for (std::size_t c = 0; c < spec.check_steps.size(); ++c) {
      const ErrorStats& s = f.stats[c];
      csv += scenario.name + ',' + std::string(to_string(f.config.kind)) + ',' +
             std::to_string(f.config.particles) + ',' +
             format_time(static_cast<double>(spec.check_steps[c]) * delta) + ',' +
             format_number(s.mean_error) + ',' + format_number(s.error_variance) + ',' +
             std::to_string(f.collapses) + ',' + std::to_string(spec.experiments) + ',' +
             std::to_string(scenario.seed) + '\n';
    }
  }
  return csv;
}

std::string convergence_results_csv(const Scenario& scenario,
                                    const std::vector<ConvergenceResult>& result) {
  std::string csv(kConvergenceCsvHeader);
  csv += '\n';
  const std::string seed = std::to_string(scenario.seed);
  for (const ConvergenceResult& r : result) {
    for (const ConvergencePoint& p : r.points) {
      csv += scenario.name + ',' + r.name + ',' + format_number(p.delta) + ',' +
             format_number(p.mean_error) + ',' + std::to_string(p.realizations) + ',' +
             std::to_string(p.discarded) + ',' + seed + '\n';
    }
  }
  for (const ConvergenceResult& r : result) {
    csv += scenario.name + ',' + r.name + ",slope," + format_number(r.slope) + ",,," + seed + '\n';
  }
  return csv;
}

// ---------------------------------------------------------------------------

namespace {

std::string twin_summary(const Scenario& sc, const TwinExperimentResult& r, double seconds,
                         unsigned workers) {
  const TwinExperimentSpec& spec = *sc.twin;
  std::string s;
  s += "scenario      " + sc.name + "\n";
  s += "scale         " + sc.scale + "\n";
  s += "seed          " + std::to_string(sc.seed) + "\n";
  s += "experiments   " + std::to_string(spec.experiments) + "\n";
  s += "code version  " + std::string(code_version()) + "\n";
  s += printf_string("runtime       %.1f s on %u worker(s)\n\n", seconds, workers);
  s += "Mean error / variance of the error (collapsed runs excluded)\n";
  s += printf_string("%-18s %6s %8s %12s %12s %9s %8s %7s\n", "filter", "M", "time", "mean_error",
                     "variance", "collapses", "ESS", "max_it");
  const double delta = spec.model->time_step();
  for (const FilterSummary& f : r.filters) {
    for (std::size_t c = 0; c < spec.check_steps.size(); ++c) {
      const ErrorStats& e = f.stats[c];
      const bool none = e.successes == 0;
      s += printf_string("%-18s %6zu %8.3g ", std::string(to_string(f.config.kind)).c_str(),
                         f.config.particles, static_cast<double>(spec.check_steps[c]) * delta);
      s += none ? printf_string("%12s %12s ", "-", "-")
                : printf_string("%12.6f %12.6f ", e.mean_error, e.error_variance);
      s += printf_string("%9zu %8.2f ", f.collapses, f.mean_ess);
      s += f.lambda_samples > 0 ? printf_string("%7d\n", f.lambda_max_iterations)
                                : printf_string("%7s\n", "-");
    }
  }
  return s;
}

std::string convergence_summary(const Scenario& sc, const std::vector<ConvergenceResult>& r,
                                double seconds, unsigned workers) {
  const ConvergenceSpec& spec = *sc.convergence;
  std::string s;
  s += "scenario      " + sc.name + "\n";
  s += "scale         " + sc.scale + "\n";
  s += "seed          " + std::to_string(sc.seed) + "\n";
  s += "realizations  " + std::to_string(spec.realizations) + "\n";
  s += "code version  " + std::string(code_version()) + "\n";
  s += printf_string("runtime       %.1f s on %u worker(s)\n\n", seconds, workers);
  for (const ConvergenceResult& c : r) {
    s += "series " + c.name + printf_string("  fitted slope %.4f\n", c.slope);
    s += printf_string("  %12s %14s %10s\n", "delta", "mean_error", "discarded");
    for (const ConvergencePoint& p : c.points) {
      s += printf_string("  %12.6g %14.6e %10zu\n", p.delta, p.mean_error, p.discarded);
    }
  }
  return s;
}

}  // namespace

int cmd_run(const std::string& config_path, const RunOptions& options, std::ostream& out,
            std::ostream& err) {
  std::string text;
  if (!read_file(config_path, text)) {
    err << "error: cannot read " << config_path << "\n";
    return exit_code::invalid_input;
  }
  Scenario sc;
  try {
    sc = build_scenario(load_config(text), text);
  } catch (const ConfigError& e) {
    err << config_path << ": " << e.what() << "\n";
    return exit_code::invalid_input;
  } catch (const nlohmann::json::exception& e) {
    err << config_path << ": " << e.what() << "\n";
    return exit_code::invalid_input;
  }

  const fs::path dir(options.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    err << "error: cannot create " << dir.string() << ": " << ec.message() << "\n";
    return exit_code::failure;
  }
  const unsigned workers = std::max(1u, options.workers);
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  try {
    if (sc.twin) {
      const TwinExperimentResult r = run_twin_experiment(*sc.twin, workers);
      const std::string summary = twin_summary(sc, r, elapsed(), workers);
      if (!write_file(dir / "results.csv", twin_results_csv(sc, r), err) ||
          !write_file(dir / "summary.txt", summary, err)) {
        return exit_code::failure;
      }
      out << summary;
      if (options.strict) {
        for (const FilterSummary& f : r.filters) {
          if (2 * f.collapses > sc.twin->experiments) {
            err << "strict: " << to_string(f.config.kind) << " with M=" << f.config.particles
                << " collapsed in " << f.collapses << " of " << sc.twin->experiments << " runs\n";
            return exit_code::collapse_dominated;
          }
        }
      }
    } else {
      const auto r = run_convergence_study(*sc.convergence, workers);
      const std::string summary = convergence_summary(sc, r, elapsed(), workers);
      if (!write_file(dir / "results.csv", convergence_results_csv(sc, r), err) ||
          !write_file(dir / "summary.txt", summary, err)) {
        return exit_code::failure;
      }
      out << summary;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::failure;
  }
  return exit_code::ok;
}

int cmd_check(const std::string& suite, std::ostream& out, std::ostream& err) {
  const std::vector<std::string> all{"jacobian", "kalman", "resampling", "importance"};
  if (!suite.empty() && std::find(all.begin(), all.end(), suite) == all.end()) {
    err << "error: unknown suite '" << suite << "'\n";
    return exit_code::invalid_input;
  }
  bool ok = true;
  for (const std::string& name : all) {
    if (!suite.empty() && name != suite) continue;
    SuiteReport r;
    if (name == "jacobian") r = check_jacobian();
    if (name == "kalman") r = check_kalman();
    if (name == "resampling") r = check_resampling();
    if (name == "importance") r = check_importance();
    out << "suite " << r.name << ": " << (r.passed ? "PASS" : "FAIL") << "  " << r.detail
        << printf_string("  (%.1f s)\n", r.seconds);
    ok = ok && r.passed;
  }
  return ok ? exit_code::ok : exit_code::failure;
}

int cmd_preset(const std::string& name, const std::string& scale, std::ostream& out,
               std::ostream& err) {
  try {
    out << preset_config(name, parse_scale(scale)).dump(2) << "\n";
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::invalid_input;
  }
  return exit_code::ok;
}

// ---------------------------------------------------------------------------
// Plot data

namespace {

struct Table {
  std::string header;
  std::vector<std::vector<std::string>> rows;
};

struct Series {
  std::string name;
  std::vector<std::array<double, 3>> points;
  double slope = std::nan("");
};

std::string svg_header(int w, int h) {
  return printf_string(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%%\" height=\"100%%\" "
      "fill=\"white\"/>\n",
      w, h);
}

const char* kColors[] = {"#222222", "#999999", "#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

std::string convergence_svg(const std::string& title, const std::vector<Series>& series) {
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series)
    for (const auto& p : s.points) {
      if (!(p[1] > 0)) continue;
      xmin = std::min(xmin, std::log10(p[0]));
      xmax = std::max(xmax, std::log10(p[0]));
      ymin = std::min(ymin, std::log10(p[1]));
      ymax = std::max(ymax, std::log10(p[1]));
    }
  if (!(xmax > xmin)) xmax = xmin + 1;
  if (!(ymax > ymin)) ymax = ymin + 1;
  const int w = 520, h = 400, l = 70, r = 150, t = 40, b = 50;
  auto px = [&](double x) { return l + (std::log10(x) - xmin) / (xmax - xmin) * (w - l - r); };
  auto py = [&](double y) { return h - b - (std::log10(y) - ymin) / (ymax - ymin) * (h - t - b); };
  std::string s = svg_header(w, h);
  s += printf_string("<text x=\"%d\" y=\"24\">%s</text>\n", l, title.c_str());
  s += printf_string("<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", l, h - b, w - r, h - b);
  s += printf_string("<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", l, t, l, h - b);
  s += printf_string("<text x=\"%d\" y=\"%d\">log10 delta [%.2f, %.2f]</text>\n", l, h - 15, xmin, xmax);
  s += printf_string("<text x=\"5\" y=\"%d\">log10 err [%.2f, %.2f]</text>\n", t - 8, ymin, ymax);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kColors[i % 6];
    std::string pts;
    for (const auto& p : series[i].points) {
      if (!(p[1] > 0)) continue;
      pts += printf_string("%.1f,%.1f ", px(p[0]), py(p[1]));
      s += printf_string("<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"%s\"/>\n", px(p[0]), py(p[1]), color);
    }
    s += printf_string("<polyline points=\"%s\" fill=\"none\" stroke=\"%s\"/>\n", pts.c_str(), color);
    s += printf_string("<text x=\"%d\" y=\"%d\" fill=\"%s\">%s (slope %.2f)</text>\n", w - r + 10,
                       t + 20 * static_cast<int>(i + 1), color, series[i].name.c_str(), series[i].slope);
  }
  return s + "</svg>\n";
}

std::string bars_svg(const std::string& title, const std::vector<Series>& series) {
  std::set<double> ms;
  double ymax = 0.0;
  for (const auto& s : series)
    for (const auto& p : s.points) {
      ms.insert(p[0]);
      ymax = std::max(ymax, p[1]);
    }
  if (!(ymax > 0)) ymax = 1;
  const std::vector<double> cats(ms.begin(), ms.end());
  const int w = 80 + 60 * static_cast<int>(std::max<std::size_t>(cats.size(), 1)) + 140, h = 360;
  const int l = 60, t = 40, b = 50;
  const double slot = 60.0, bar = 40.0 / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  std::string s = svg_header(w, h);
  s += printf_string("<text x=\"%d\" y=\"24\">%s</text>\n", l, title.c_str());
  s += printf_string("<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", l, h - b,
                     l + static_cast<int>(slot * cats.size()), h - b);
  s += printf_string("<text x=\"5\" y=\"%d\">mean error (max %.3g)</text>\n", t - 8, ymax);
  for (std::size_t c = 0; c < cats.size(); ++c) {
    s += printf_string("<text x=\"%.1f\" y=\"%d\">%g</text>\n", l + slot * c + 10, h - b + 18, cats[c]);
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kColors[i % 6];
    for (const auto& p : series[i].points) {
      const auto c = std::find(cats.begin(), cats.end(), p[0]) - cats.begin();
      const double height = p[1] / ymax * (h - t - b);
      s += printf_string("<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"%s\"/>\n",
                         l + slot * c + 10 + bar * i, h - b - height, bar, height, color);
    }
    s += printf_string("<text x=\"%d\" y=\"%d\" fill=\"%s\">%s</text>\n", w - 130,
                       t + 20 * static_cast<int>(i + 1), color, series[i].name.c_str());
  }
  return s + "</svg>\n";
}

}  // namespace

int cmd_plotdata(const std::string& csv_path, const std::string& kind, const std::string& out_dir,
                 bool svg, std::ostream& out, std::ostream& err) {
  if (kind != "convergence" && kind != "error_bars") {
    err << "error: unknown kind '" << kind << "' (expected convergence or error_bars)\n";
    return exit_code::invalid_input;
  }
  std::string text;
  if (!read_file(csv_path, text)) {
    err << "error: cannot read " << csv_path << "\n";
    return exit_code::invalid_input;
  }
  Table table;
  {
    std::istringstream in(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      if (table.header.empty()) {
        table.header = line;
        continue;
      }
      table.rows.push_back(split(line, ','));
      if (table.rows.back().size() != 7 && table.rows.back().size() != 9) {
        err << csv_path << ": line " << n << ": unexpected number of fields\n";
        return exit_code::invalid_input;
      }
    }
  }
  const std::string_view expected = kind == "convergence" ? kConvergenceCsvHeader : kTwinCsvHeader;
  if (table.header.empty()) {
    err << csv_path << ": empty file\n";
    return exit_code::invalid_input;
  }
  if (table.header != expected) {
    err << csv_path << ": header does not match a " << kind << " results file\n";
    return exit_code::invalid_input;
  }
  if (table.rows.empty()) {
    err << csv_path << ": no data rows\n";
    return exit_code::invalid_input;
  }
  const std::size_t fields = kind == "convergence" ? 7 : 9;
  const fs::path dir = out_dir.empty() ? fs::path(csv_path).parent_path() : fs::path(out_dir);
  std::error_code ec;
  if (!dir.empty()) fs::create_directories(dir, ec);
  const std::string scenario = table.rows.front()[0];
  std::vector<std::string> written;

  if (kind == "convergence") {
    std::vector<Series> series;
    auto find = [&](const std::string& name) -> Series& {
      for (auto& s : series)
        if (s.name == name) return s;
      series.push_back({name, {}, std::nan("")});
      return series.back();
    };
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto& row = table.rows[i];
      double d = 0, e = 0;
      if (row.size() != fields || !parse_double(row[3], e) ||
          (row[2] != "slope" && !parse_double(row[2], d))) {
        err << csv_path << ": line " << i + 2 << ": malformed row\n";
        return exit_code::invalid_input;
      }
      Series& s = find(row[1]);
      if (row[2] == "slope") {
        s.slope = e;
      } else {
        double discarded = 0;
        parse_double(row[5], discarded);
        s.points.push_back({d, e, discarded});
      }
    }
    for (const Series& s : series) {
      std::string dat = "# " + scenario + " series " + s.name + ": delta mean_error (log-log axes)\n";
      dat += "# fitted slope " + format_number(s.slope) + "\n";
      for (const auto& p : s.points) {
        if (std::isnan(p[1])) continue;
        dat += format_number(p[0]) + ' ' + format_number(p[1]) + '\n';
      }
      const fs::path file = dir / (scenario + "_" + s.name + ".dat");
      if (!write_file(file, dat, err)) return exit_code::failure;
      written.push_back(file.string());
    }
    if (svg) {
      const fs::path file = dir / (scenario + "_convergence.svg");
      if (!write_file(file, convergence_svg(scenario + ": mean strong error", series), err)) {
        return exit_code::failure;
      }
      written.push_back(file.string());
    }
  } else {
    // time → filter → (M, mean, variance)
    std::map<double, std::vector<Series>> by_time;
    std::map<double, std::string> time_label;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto& row = table.rows[i];
      double m = 0, t = 0, e = 0, v = 0;
      if (row.size() != fields || !parse_double(row[2], m) || !parse_double(row[3], t) ||
          !parse_double(row[4], e) || !parse_double(row[5], v)) {
        err << csv_path << ": line " << i + 2 << ": malformed row\n";
        return exit_code::invalid_input;
      }
      time_label[t] = row[3];
      auto& list = by_time[t];
      auto it = std::find_if(list.begin(), list.end(), [&](const Series& s) { return s.name == row[1]; });
      if (it == list.end()) {
        list.push_back({row[1], {}, std::nan("")});
        it = list.end() - 1;
      }
      if (!std::isnan(e)) it->points.push_back({m, e, v});  // all runs collapsed: no bar
    }
    for (const auto& [t, list] : by_time) {
      for (const Series& s : list) {
        std::string dat = "# " + scenario + " " + s.name + " at t=" + time_label[t] +
                          ": particles mean_error error_variance\n";
        for (const auto& p : s.points) {
          dat += format_number(p[0]) + ' ' + format_number(p[1]) + ' ' + format_number(p[2]) + '\n';
        }
        const fs::path file = dir / (scenario + "_t" + time_label[t] + "_" + s.name + ".dat");
        if (!write_file(file, dat, err)) return exit_code::failure;
        written.push_back(file.string());
      }
      if (svg) {
        const fs::path file = dir / (scenario + "_t" + time_label[t] + "_error_bars.svg");
        if (!write_file(file, bars_svg(scenario + ": mean error at t=" + time_label[t], list), err)) {
          return exit_code::failure;
        }
        written.push_back(file.string());
      }
    }
  }
  for (const auto& f : written) out << f << "\n";
  return exit_code::ok;
}

// ---------------------------------------------------------------------------

int run_cli(int argc, char** argv) {
  CLI::App app{"Implicit and SIR particle filter experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(code_version()));

  std::string config_path, out_dir = ".";
  bool strict = false;
  unsigned threads = 0;
  auto* run = app.add_subcommand("run", "Run the experiment described by a configuration file");
  run->add_option("config", config_path, "JSON configuration")->required();
  run->add_flag("--strict", strict, "Exit 3 when a filter collapses in more than half the runs");
  run->add_option("--out", out_dir, "Output directory for results.csv and summary.txt");
  run->add_option("--threads", threads, "Worker threads (default: DA_THREADS or all cores)");

  std::string suite;
  auto* check = app.add_subcommand("check", "Run the fast property suites");
  check->add_option("--suite", suite, "Run one suite only")
      ->check(CLI::IsMember({"jacobian", "kalman", "resampling", "importance"}));

  std::string csv_path, kind, plot_out;
  bool svg = false;
  auto* plot = app.add_subcommand("plotdata", "Turn results.csv into plot-ready series");
  plot->add_option("csv", csv_path, "results.csv written by 'da run'")->required();
  plot->add_option("--kind", kind, "convergence or error_bars")
      ->required()
      ->check(CLI::IsMember({"convergence", "error_bars"}));
  plot->add_option("--out", plot_out, "Output directory (default: next to the CSV)");
  plot->add_flag("--svg", svg, "Also render a simple SVG chart");

  std::string preset_name, scale = "desk";
  bool list = false;
  auto* preset = app.add_subcommand("preset", "Print a preset configuration");
  preset->add_option("name", preset_name, "Preset name");
  preset->add_option("--scale", scale, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  preset->add_flag("--list", list, "List preset names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_code::invalid_input;
  }

  if (*run) {
    RunOptions options;
    options.strict = strict;
    options.out_dir = out_dir;
    options.workers = threads > 0 ? threads : worker_count();
    return cmd_run(config_path, options, std::cout, std::cerr);
  }
  if (*check) return cmd_check(suite, std::cout, std::cerr);
  if (*plot) return cmd_plotdata(csv_path, kind, plot_out, svg, std::cout, std::cerr);
  if (list) {
    for (const auto& n : preset_names()) std::cout << n << "\n";
    return exit_code::ok;
  }
  if (preset_name.empty()) {
    std::cerr << "error: preset name required (see --list)\n";
    return exit_code::invalid_input;
  }
  return cmd_preset(preset_name, scale, std::cout, std::cerr);
}

}  // namespace da
