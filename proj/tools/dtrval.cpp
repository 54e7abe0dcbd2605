// dtrval: simulation studies and rule-value analyses from the command line.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error, 3 data error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "dtrval/analysis.hpp"
#include "dtrval/error.hpp"
#include "dtrval/study.hpp"

namespace fs = std::filesystem;
using dtrval::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dtrval::InvalidConfiguration("cannot open config file " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    // nlohmann reports "at line L, column C" in what().
    throw dtrval::InvalidConfiguration(path + ": " + e.what());
  }
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct SimulateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<int> folds;
};

int cmd_simulate(const SimulateArgs& args) {
  const json root = load_json(args.config);
  std::vector<json> studies;
  if (root.is_object() && root.contains("studies")) {
    if (!root["studies"].is_array() || root.size() != 1) {
      throw dtrval::InvalidConfiguration("'studies' must be the only top-level field and must be a list");
    }
    for (const json& s : root["studies"]) studies.push_back(s);
  } else {
    studies.push_back(root);
  }

  std::vector<dtrval::StudyConfig> configs;
  for (json s : studies) {
    if (!s.is_object()) throw dtrval::InvalidConfiguration("each study must be a JSON object");
    if (args.seed) s["master_seed"] = *args.seed;
    if (args.threads) s["threads"] = *args.threads;
    if (args.folds) s["folds"] = *args.folds;
    configs.push_back(dtrval::StudyConfig::from_json(s));
  }

  ensure_dir(args.out);
  std::vector<dtrval::PerformanceRow> rows;
  json details = json::array();
  for (const auto& cfg : configs) {
    std::cerr << "study " << cfg.name << ": " << cfg.replications << " replications of n = " << cfg.n << "\n";
    const dtrval::StudyResult result = dtrval::run_study(cfg);
    rows.insert(rows.end(), result.rows.begin(), result.rows.end());
    details.push_back({{"config", cfg.to_json()},
                       {"fixed_truth", result.fixed_truth},
                       {"rows", dtrval::performance_json(result.rows)}});
    if (cfg.trace) {
      std::ostringstream trace;
      dtrval::write_trace(trace, result.records);
      write_file(fs::path(args.out) / ("trace_" + cfg.name + ".csv"), trace.str());
    }
  }
  std::ostringstream csv;
  dtrval::write_performance_csv(csv, rows);
  write_file(fs::path(args.out) / "performance.csv", csv.str());
  write_file(fs::path(args.out) / "performance.json",
             json{{"version", dtrval::kVersion}, {"studies", std::move(details)}}.dump(2) + "\n");
  return 0;
}

struct AnalyzeArgs {
  std::string data;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> folds;
};

int cmd_analyze(const AnalyzeArgs& args) {
  json cfg_json = args.config.empty() ? json::object() : load_json(args.config);
  if (!cfg_json.is_object()) throw dtrval::InvalidConfiguration("the analysis configuration must be a JSON object");
  if (args.seed) cfg_json["seed"] = *args.seed;
  if (args.folds) cfg_json["folds"] = *args.folds;
  const dtrval::AnalysisConfig cfg = dtrval::AnalysisConfig::from_json(cfg_json);
  const dtrval::Dataset data = dtrval::read_csv(args.data);

  const dtrval::AnalysisReport report = dtrval::run_analysis(data, cfg);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";

  ensure_dir(args.out);
  write_file(fs::path(args.out) / "report.json", report.to_json().dump(2) + "\n");
  std::ostringstream csv;
  dtrval::write_report_csv(csv, report);
  write_file(fs::path(args.out) / "report.csv", csv.str());

  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Value estimation for dynamic treatment rules"};
  app.require_subcommand(1);
  app.set_version_flag("--version", dtrval::kVersion);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a replicated simulation study");
  simulate->add_option("--config", sim.config, "Study configuration (JSON)")->required();
  simulate->add_option("--out", sim.out, "Output directory")->required();
  simulate->add_option("--seed", sim.seed, "Override the master seed");
  simulate->add_option("--threads", sim.threads, "Worker threads for replications");
  simulate->add_option("--v-folds", sim.folds, "Override the number of folds");

  AnalyzeArgs ana;
  std::optional<int> analyze_threads;
  auto* analyze = app.add_subcommand("analyze", "Estimate and evaluate an optimal rule on a CSV file");
  analyze->add_option("data", ana.data, "CSV with covariates and columns A and Y")->required();
  analyze->add_option("--config", ana.config, "Analysis configuration (JSON)");
  analyze->add_option("--out", ana.out, "Output directory")->required();
  analyze->add_option("--seed", ana.seed, "Override the seed");
  analyze->add_option("--threads", analyze_threads, "Accepted for symmetry; the analysis runs serially");
  analyze->add_option("--v-folds", ana.folds, "Override the number of folds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    return cmd_analyze(ana);
  } catch (const dtrval::InvalidConfiguration& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dtrval::Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
