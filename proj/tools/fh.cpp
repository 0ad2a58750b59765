// fh: run one synthetic experiment and write <out>/<experiment>-<seed>.csv
// plus <out>/summary.json.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "freehunch/freehunch.hpp"

namespace fs = std::filesystem;
using freehunch::Json;

namespace {

constexpr int kSchemaVersion = 1;

enum Exit { kOk = 0, kOther = 1, kValidation = 2, kNumerical = 3 };

int report_error(const std::string& kind, const std::string& message, const std::vector<std::string>& problems,
                 const std::string& out_dir, int code) {
  Json rec = {{"error", kind}, {"message", message}, {"exit_code", code}};
  if (!problems.empty()) rec["problems"] = problems;
  std::cerr << rec.dump() << "\n";
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream f(fs::path(out_dir) / "error.json");
    if (f) f << rec.dump(2) << "\n";
  }
  return code;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("write failed for '" + p.string() + "'");
}

}  // namespace

int main(int argc, char** argv) {
  freehunch::retain_large_blocks();

  CLI::App app{"Diffusion posterior sampling experiments with tracked denoiser covariance"};
  std::string experiment;
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::int64_t seed = -1;
  bool print_config = false;

  std::string ids;
  for (const auto& id : freehunch::experiment_ids()) ids += (ids.empty() ? "" : ", ") + id;
  app.add_option("experiment", experiment, "one of: " + ids);
  app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "override a config value, key=value (repeatable)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "run a single seed instead of the configured list")->check(CLI::NonNegativeNumber);
  app.add_flag("--print-config", print_config, "print the resolved config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error("usage", e.what(), {}, "", kValidation);
  }

  freehunch::RunConfig cfg;
  try {
    freehunch::ConfigSources src;
    if (!config_path.empty()) src.file = config_path;
    src.overrides = overrides;
    if (!experiment.empty()) src.experiment = experiment;
    if (seed >= 0) src.seed = static_cast<std::uint64_t>(seed);
    if (!out_dir.empty()) src.output_dir = out_dir;
    cfg = freehunch::parse_config(src);
  } catch (const freehunch::ValidationError& e) {
    return report_error(e.kind(), "invalid configuration", e.problems(), out_dir, kValidation);
  } catch (const std::exception& e) {
    return report_error("error", e.what(), {}, out_dir, kOther);
  }

  const Json echo = freehunch::to_json(cfg);
  if (print_config) {
    std::cout << echo.dump(2) << "\n";
    return kOk;
  }

  try {
    fs::create_directories(cfg.output_dir);
    Json runs = Json::array();
    Json warnings = Json::array();
    for (std::uint64_t s : cfg.seeds) {
      const auto report = freehunch::run_experiment(cfg, s);
      std::ostringstream csv;
      report.table.write(csv);
      const std::string name = cfg.experiment + "-" + std::to_string(s) + ".csv";
      write_file(fs::path(cfg.output_dir) / name, csv.str());
      runs.push_back({{"seed", s}, {"csv", name}, {"summary", report.summary}});
      for (const auto& w : report.warnings) warnings.push_back("seed " + std::to_string(s) + ": " + w);
    }
    Json summary = {{"schema_version", kSchemaVersion},
                    {"experiment", cfg.experiment},
                    {"config", echo},
                    {"runs", runs},
                    {"warnings", warnings}};
    write_file(fs::path(cfg.output_dir) / "summary.json", summary.dump(2) + "\n");
    for (const auto& w : warnings) std::cerr << "warning: " << w.get<std::string>() << "\n";
  } catch (const freehunch::ValidationError& e) {
    return report_error(e.kind(), "invalid configuration", e.problems(), cfg.output_dir, kValidation);
  } catch (const freehunch::NumericalError& e) {
    return report_error(e.kind(), e.what(), {}, cfg.output_dir, kNumerical);
  } catch (const freehunch::Error& e) {
    return report_error(e.kind(), e.what(), {}, cfg.output_dir, kOther);
  } catch (const std::exception& e) {
    return report_error("error", e.what(), {}, cfg.output_dir, kOther);
  }
  return kOk;
}
