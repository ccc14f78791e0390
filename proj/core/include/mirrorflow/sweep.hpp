#pragma once

// Run artifacts on disk, the diagnose report, and parallel hyperparameter sweeps.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mirrorflow/config.hpp"
#include "mirrorflow/flow.hpp"

namespace mirrorflow {

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);
std::string config_hash(const RunConfig& config);

/// Writes config.json, data.csv, params_init.csv, params.csv, metrics.csv and status.txt.
void save_run(const RunConfig& config, const RunResult& result, const std::filesystem::path& dir);

struct LoadedRun {
  RunConfig config;
  Dataset data;
  Params theta;
  Params theta_init;
  std::vector<MetricsRecord> records;
};

LoadedRun load_run(const std::filesystem::path& dir);

struct DiagnoseOptions {
  std::vector<double> prune_fractions = {0.0, 0.5, 0.8, 0.9};
};

/// JSON report {final_margins, kkt, rates, alignment, sparsity, prune_curve}.
std::string diagnose_json(const LoadedRun& run, const DiagnoseOptions& options = {});

/// Expands a grid file against a base config. The grid is a JSON object with
/// optional "variants" (objects merged into the base config) and axes
/// "lambda", "p", "lr", "seed", "init_seed" (lists). A seed sets train, data and
/// teacher seeds; an init_seed sets only the student initialization seed.
std::vector<RunConfig> expand_grid(const std::string& base_config_text, const std::string& grid_text,
                                   const std::filesystem::path& base_dir = {});

struct SweepRow {
  RunConfig config;
  std::string hash;
  std::filesystem::path dir;
  std::string status;
  std::string error;
  MetricsRecord final_record;
  bool ok = false;
};

/// Runs every config with at most `jobs` concurrent runs. A failing run is
/// recorded and the sweep continues.
std::vector<SweepRow> run_sweep(const std::vector<RunConfig>& configs, const std::filesystem::path& out_dir,
                                int jobs);

/// Margin columns compared across potentials in summaries.
const std::vector<std::string>& summary_margins();
double margin_value(const MetricsRecord& rec, const std::string& name);

/// For each margin column, the potential label with the largest mean final value.
std::vector<std::pair<std::string, std::string>> best_per_margin(const std::vector<SweepRow>& rows);

void write_summary_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

struct SummaryTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

SummaryTable read_summary_csv(const std::filesystem::path& path);
/// Mean final margin per potential label, rendered as aligned text.
std::string render_report(const SummaryTable& table);

}  // namespace mirrorflow
