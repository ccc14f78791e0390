#pragma once

// Run configuration: JSON with sections potential, net, data, train, margins
// and output. Unknown keys and inconsistent values raise ConfigError naming
// the key.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mirrorflow/data.hpp"
#include "mirrorflow/diagnostics.hpp"
#include "mirrorflow/network.hpp"
#include "mirrorflow/potentials.hpp"

namespace mirrorflow {

struct PotentialSpec {
  PotentialKind kind = PotentialKind::Euclidean;
  double lambda = 0.0;
  double p = 2.0;
};

struct LayerOverride {
  std::optional<PotentialKind> kind;
  std::optional<double> lambda;
  std::optional<double> p;
};

struct PotentialConfig {
  PotentialSpec base;
  std::vector<LayerOverride> layers;  // empty, or one entry per weight matrix
};

struct NetConfig {
  std::vector<int> widths;
  Activation activation = Activation::Relu;
  bool input_bias = false;
};

enum class DataSource { Circle, Clusters, File };

struct DataConfig {
  DataSource source = DataSource::Circle;
  std::string path;  // DataSource::File
  std::uint64_t seed = 0;
  std::uint64_t teacher_seed = 0;
  int teacher_neurons = 3;
  std::size_t K = 200;
  int dim = 2;
  double mean_norm = 1.0;
  double noise = 0.1;
  double gap = 0.5;
};

struct TrainConfig {
  double lr = 0.0;
  long long max_steps = 1000;
  double max_time = 0.0;  // 0 disables the time limit
  bool rescale = false;
  double rescale_threshold = 0.1;
  double rescale_factor = 0.1;
  InitScheme init_scheme = InitScheme::MeanField;
  double init_scale = 1.0;
  std::uint64_t seed = 0;
  long long log_every = 100;
  double stop_log_loss = 0.0;  // filled with ln(1e-50) by default
};

struct OutputConfig {
  std::string csv_path = "metrics.csv";
};

struct RunConfig {
  PotentialConfig potential;
  NetConfig net;
  DataConfig data;
  TrainConfig train;
  MarginOptions margins;
  double tau = 0.01;
  OutputConfig output;
  std::string name;  // free-form label carried into sweep summaries
};

RunConfig default_run_config();

/// Parses and validates; relative data paths are resolved against `base_dir`.
RunConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig parse_config(const std::filesystem::path& path);

/// Cross-field checks; throws ConfigError.
void validate(const RunConfig& config);

/// Canonical JSON of the resolved configuration (stable key order).
std::string to_json(const RunConfig& config);

/// Per-layer potentials after applying overrides.
PotentialSet resolve_potentials(const RunConfig& config);

MirrorPotential make_potential(const PotentialSpec& spec);

Dataset make_dataset(const DataConfig& config);

/// A standalone data section, as consumed by `gen-data --spec`.
DataConfig parse_data_config_text(const std::string& text, const std::filesystem::path& base_dir = {});

/// Short tag such as "hyperbolic" or "smoothed_p3" for tables.
std::string potential_label(const PotentialConfig& config);

}  // namespace mirrorflow
