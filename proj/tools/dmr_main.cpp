#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dmr/runner.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitParse = 4;

void apply_seed_override(dmr::json& raw, long long seed) {
  raw["stream"]["seed"] = seed;
  raw["train"]["seed"] = seed + 1;
}

int run_one(const std::string& config_path, const std::string& out_override,
            long long seed_override, bool quiet) {
  dmr::json raw;
  dmr::parse_config_file(config_path, &raw);
  if (seed_override >= 0) apply_seed_override(raw, seed_override);
  if (!out_override.empty()) raw["out"]["dir"] = out_override;
  const dmr::RunConfig cfg = dmr::parse_config(raw);

  const auto output = dmr::run_experiment(cfg, raw);
  dmr::write_outputs(output, cfg.out_dir);

  if (!quiet) {
    for (const auto& stage : output.report.stages) {
      std::printf("stage %d: accuracy=%.2f%% C_I=%.4f classes=%d footprint=%lld\n",
                  stage.task_id, stage.accuracy, stage.confusion_value, stage.classes_seen,
                  stage.footprint_floats);
    }
    std::printf("A_bar=%.2f A_T=%.2f PD=%.2f C_I_total=%.4f k_bar=%.2f\n",
                output.report.average_accuracy, output.report.final_accuracy,
                output.report.performance_drop, output.report.confusion_total, output.k_bar);
    std::printf("reports written to %s\n", cfg.out_dir.c_str());
  }
  return 0;
}

int run_compare(const std::vector<std::string>& paths) {
  if (paths.size() < 2) {
    throw dmr::ConfigError("reports", "compare needs at least two report files");
  }
  std::vector<dmr::json> reports;
  reports.reserve(paths.size());
  for (const auto& path : paths) reports.push_back(dmr::load_report_file(path));
  std::cout << dmr::compare_reports_csv(reports, paths);
  return 0;
}

int run_inspect(const std::string& bank_path) {
  const auto bank = dmr::load_bank_file(bank_path);
  std::cout << dmr::inspect_bank(bank);
  return 0;
}

std::string format_xi(double xi) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", xi);
  std::string s = buf;
  for (auto& c : s) {
    if (c == '.') c = 'p';
  }
  return s;
}

int run_sweep(const std::string& config_path, const std::vector<std::string>& fidelities,
              const std::vector<double>& xis, const std::string& out_override, bool quiet) {
  dmr::json base_raw;
  dmr::parse_config_file(config_path, &base_raw);
  if (fidelities.empty() && xis.empty()) {
    throw dmr::ConfigError("sweep", "need --fidelities and/or --xi values");
  }
  const std::vector<std::string> fid_list =
      fidelities.empty() ? std::vector<std::string>{base_raw["memory"]["fidelity"].get<std::string>()}
                         : fidelities;
  const std::vector<double> xi_list =
      xis.empty() ? std::vector<double>{base_raw["train"].value("xi", 0.5)} : xis;

  std::string sweep_root = out_override;
  if (sweep_root.empty()) sweep_root = base_raw["out"]["dir"].get<std::string>();

  std::vector<dmr::json> reports;
  std::vector<std::string> names;
  for (const auto& fidelity : fid_list) {
    for (double xi : xi_list) {
      dmr::json raw = base_raw;
      raw["memory"]["fidelity"] = fidelity;
      raw["train"]["xi"] = xi;
      std::string name = fidelity;
      if (xi_list.size() > 1 || !xis.empty()) name += "_xi" + format_xi(xi);
      raw["out"]["dir"] = (std::filesystem::path(sweep_root) / name).string();
      const dmr::RunConfig cfg = dmr::parse_config(raw);
      if (!quiet) std::fprintf(stderr, "sweep: running %s\n", name.c_str());
      const auto output = dmr::run_experiment(cfg, raw);
      dmr::write_outputs(output, cfg.out_dir);
      reports.push_back(output.report_json);
      names.push_back(name);
    }
  }
  const std::string csv = dmr::compare_reports_csv(reports, names);
  std::cout << csv;
  std::ofstream table(std::filesystem::path(sweep_root) / "sweep.csv", std::ios::binary);
  table << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental learning over frozen features with "
               "distribution-level memory replay"};
  app.require_subcommand(1);

  std::string config_path, out_override, bank_path;
  long long seed_override = -1;
  bool quiet = false;
  std::vector<std::string> report_paths, fidelities;
  std::vector<double> xis;

  auto* run_cmd = app.add_subcommand("run", "Execute one experiment from a JSON config");
  run_cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
  run_cmd->add_option("--out", out_override, "override out.dir");
  run_cmd->add_option("--seed-override", seed_override,
                      "set stream.seed to this value and train.seed to value+1");
  run_cmd->add_flag("--quiet", quiet, "suppress progress output");

  auto* compare_cmd =
      app.add_subcommand("compare", "Print a side-by-side summary table (CSV) of run reports");
  compare_cmd->add_option("reports", report_paths, "report.json files")->expected(-1);

  auto* inspect_cmd =
      app.add_subcommand("inspect-memory", "Summarize a stored memory bank per class");
  inspect_cmd->add_option("bank", bank_path, "bank.bin file")->required();

  auto* sweep_cmd = app.add_subcommand(
      "sweep", "Run the same config across fidelities and/or xi values, then compare");
  sweep_cmd->add_option("--config", config_path, "experiment config (JSON)")->required();
  sweep_cmd->add_option("--fidelities", fidelities,
                        "fidelity values (finetune prior d-std dmr-lite dmr)");
  sweep_cmd->add_option("--xi", xis, "xi values for the mixed-loss weight");
  sweep_cmd->add_option("--out", out_override, "root directory for sweep outputs");
  sweep_cmd->add_flag("--quiet", quiet, "suppress progress output");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return run_one(config_path, out_override, seed_override, quiet);
    if (compare_cmd->parsed()) return run_compare(report_paths);
    if (inspect_cmd->parsed()) return run_inspect(bank_path);
    if (sweep_cmd->parsed()) return run_sweep(config_path, fidelities, xis, out_override, quiet);
  } catch (const dmr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dmr::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const dmr::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitParse;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
