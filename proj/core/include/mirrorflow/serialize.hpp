#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "mirrorflow/diagnostics.hpp"
#include "mirrorflow/network.hpp"

namespace mirrorflow {

/// Parameters as CSV: a line "widths,d,h1,...,1", then every layer's rows in
/// forward order, one matrix row per line, 17 significant digits.
void write_params_csv(const Params& theta, const std::vector<int>& widths, const std::filesystem::path& path);
Params read_params_csv(const std::filesystem::path& path, std::vector<int>* widths = nullptr);

void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const MetricsRecord& rec);
void write_metrics_csv(const std::vector<MetricsRecord>& records, const std::filesystem::path& path);
std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path);

}  // namespace mirrorflow
