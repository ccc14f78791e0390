// mirrorflow command-line entry point.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "mirrorflow/config.hpp"
#include "mirrorflow/errors.hpp"
#include "mirrorflow/flow.hpp"
#include "mirrorflow/serialize.hpp"
#include "mirrorflow/sweep.hpp"

namespace mf = mirrorflow;

namespace {

enum Exit { kOk = 0, kConfig = 2, kDiverged = 3, kIo = 4 };

// MIRRORFLOW_LOG = error | warn | info | debug (default info).
int log_level() {
  static const int level = [] {
    const char* env = std::getenv("MIRRORFLOW_LOG");
    const std::string v = env ? env : "info";
    if (v == "error") return 0;
    if (v == "warn") return 1;
    if (v == "debug") return 3;
    return 2;
  }();
  return level;
}

void log(int level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level <= log_level()) std::cerr << "[" << names[level] << "] " << msg << '\n';
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw mf::IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw mf::IoError("cannot open '" + path.string() + "' for writing");
  os << text;
}

std::vector<double> parse_fractions(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw mf::ConfigError("--fractions: cannot parse '" + cell + "'");
    }
    if (!(out.back() >= 0.0 && out.back() < 1.0)) throw mf::ConfigError("--fractions values must lie in [0, 1)");
  }
  if (out.empty()) throw mf::ConfigError("--fractions is empty");
  return out;
}

int cmd_gen_data(const std::string& spec, const std::string& out, const std::string& teacher_out) {
  const auto cfg = mf::parse_data_config_text(slurp(spec), std::filesystem::path(spec).parent_path());
  const auto data = mf::make_dataset(cfg);
  mf::write_dataset_csv(data, out);
  if (!teacher_out.empty()) {
    if (!data.provenance.teacher) throw mf::ConfigError("--teacher-out needs a circle (teacher) data source");
    spit(teacher_out, mf::teacher_to_json(*data.provenance.teacher));
  }
  log(2, "wrote " + std::to_string(data.size()) + " points to " + out);
  return kOk;
}

int cmd_train(const std::string& config_path, std::string out) {
  const auto cfg = mf::parse_config(config_path);
  if (out.empty()) out = "runs/" + mf::potential_label(cfg.potential) + "_" + mf::config_hash(cfg);
  log(2, "training " + mf::potential_label(cfg.potential) + " -> " + out);
  const auto observer = [](const mf::MetricsRecord& r, const mf::TrainState&) {
    std::ostringstream os;
    os << "step " << r.step << " time " << r.time << " log_loss " << r.log_loss << " q_min " << r.q_min;
    log(3, os.str());
  };
  const auto result = mf::run(cfg, std::nullopt, observer);
  mf::save_run(cfg, result, out);
  if (cfg.output.csv_path != "metrics.csv") mf::write_metrics_csv(result.records, cfg.output.csv_path);
  log(2, "status " + std::string(mf::to_string(result.status)) + " after " +
             std::to_string(result.final_state.step) + " steps");
  if (result.status == mf::RunStatus::Diverged) {
    log(0, "diverged: " + result.message);
    return kDiverged;
  }
  return kOk;
}

int cmd_sweep(const std::string& config_path, const std::string& grid_path, int jobs, const std::string& out) {
  const auto base_dir = std::filesystem::path(config_path).parent_path();
  const auto configs = mf::expand_grid(slurp(config_path), slurp(grid_path), base_dir);
  log(2, "sweep of " + std::to_string(configs.size()) + " runs with " + std::to_string(jobs) + " jobs");
  const auto rows = mf::run_sweep(configs, out, jobs);
  int failures = 0;
  for (const auto& r : rows) {
    if (!r.ok) {
      ++failures;
      log(1, "run " + r.dir.string() + " " + r.status + ": " + r.error);
    }
  }
  mf::write_summary_csv(rows, std::filesystem::path(out) / "summary.csv");
  log(2, "summary written to " + (std::filesystem::path(out) / "summary.csv").string() + " (" +
             std::to_string(failures) + " failed)");
  return kOk;
}

int cmd_diagnose(const std::string& dir, const std::string& out) {
  const auto run = mf::load_run(dir);
  const std::string report = mf::diagnose_json(run);
  if (out.empty()) {
    std::cout << report << '\n';
  } else {
    spit(out, report + "\n");
  }
  return kOk;
}

int cmd_prune(const std::string& dir, const std::string& fractions) {
  const auto fr = parse_fractions(fractions);
  const auto run = mf::load_run(dir);
  const mf::HomogeneousNet net(run.config.net.widths, run.config.net.activation, run.config.net.input_bias);
  std::cout << "fraction,train_accuracy\n";
  for (const auto& p : mf::prune_eval(net, run.theta, run.data, fr)) {
    std::cout << p.fraction << ',' << p.train_accuracy << '\n';
  }
  return kOk;
}

int cmd_report(const std::string& summary, const std::string& csv_out) {
  const auto table = mf::read_summary_csv(summary);
  std::cout << mf::render_report(table);
  if (!csv_out.empty()) std::filesystem::copy_file(summary, csv_out, std::filesystem::copy_options::overwrite_existing);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mirror-flow training and implicit-bias diagnostics for homogeneous networks"};
  app.require_subcommand(1);

  std::string spec, data_out, teacher_out;
  auto* gen = app.add_subcommand("gen-data", "Generate a dataset CSV from a data spec");
  gen->add_option("--spec", spec, "JSON data section")->required();
  gen->add_option("--out", data_out, "Output CSV")->required();
  gen->add_option("--teacher-out", teacher_out, "Write the teacher as JSON");

  std::string config, out;
  auto* train = app.add_subcommand("train", "Train one configuration");
  train->add_option("--config", config, "Run config (JSON)")->required();
  train->add_option("--out", out, "Run directory");

  std::string grid, sweep_out = "sweep";
  int jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Run a grid of configurations");
  sweep->add_option("--config", config, "Base run config")->required();
  sweep->add_option("--grid", grid, "Grid JSON")->required();
  sweep->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  sweep->add_option("--out", sweep_out, "Output directory");

  std::string run_dir, report_out;
  auto* diagnose = app.add_subcommand("diagnose", "JSON diagnostics of a finished run");
  diagnose->add_option("--run", run_dir, "Run directory")->required();
  diagnose->add_option("--out", report_out, "Write the report here instead of stdout");

  std::string fractions = "0.5,0.8,0.9";
  auto* prune = app.add_subcommand("prune", "Accuracy under layerwise magnitude pruning");
  prune->add_option("--run", run_dir, "Run directory")->required();
  prune->add_option("--fractions", fractions, "Comma-separated fractions in [0, 1)");

  std::string summary, csv_out;
  auto* report = app.add_subcommand("report", "Render a sweep summary as a table");
  report->add_option("--summary", summary, "summary.csv from a sweep")->required();
  report->add_option("--csv", csv_out, "Also copy the summary CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen) return cmd_gen_data(spec, data_out, teacher_out);
    if (*train) return cmd_train(config, out);
    if (*sweep) return cmd_sweep(config, grid, jobs, sweep_out);
    if (*diagnose) return cmd_diagnose(run_dir, report_out);
    if (*prune) return cmd_prune(run_dir, fractions);
    if (*report) return cmd_report(summary, csv_out);
  } catch (const mf::ConfigError& e) {
    log(0, std::string("config error: ") + e.what());
    return kConfig;
  } catch (const mf::DivergenceError& e) {
    log(0, std::string("diverged: ") + e.what());
    return kDiverged;
  } catch (const mf::IoError& e) {
    log(0, std::string("i/o error: ") + e.what());
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    log(0, std::string("i/o error: ") + e.what());
    return kIo;
  } catch (const std::exception& e) {
    log(0, e.what());
    return 1;
  }
  return kOk;
}
