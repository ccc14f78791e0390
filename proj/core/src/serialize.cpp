#include "mirrorflow/serialize.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "mirrorflow/errors.hpp"

namespace mirrorflow {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

double to_double(const std::string& s, const std::string& context) {
  if (s == "nan" || s == "-nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw IoError(context + ": cannot parse '" + s + "'");
  return v;
}

void put(std::ostream& os, double v) {
  if (std::isnan(v)) {
    os << "nan";
  } else {
    os << v;
  }
}

}  // namespace

void write_params_csv(const Params& theta, const std::vector<int>& widths, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.precision(17);
  os << "widths";
  for (int w : widths) os << ',' << w;
  os << '\n';
  for (const auto& m : theta.layers) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (c) os << ',';
        os << m(r, c);
      }
      os << '\n';
    }
  }
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

Params read_params_csv(const std::filesystem::path& path, std::vector<int>* widths_out) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open params '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw IoError(path.string() + ": empty params file");
  const auto head = split(line);
  if (head.size() < 3 || head[0] != "widths") throw IoError(path.string() + ": first line must be widths,...");
  std::vector<int> widths;
  for (std::size_t i = 1; i < head.size(); ++i) widths.push_back(static_cast<int>(to_double(head[i], path.string())));
  Params theta;
  std::size_t row_no = 1;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Matrix m(widths[l + 1], widths[l]);
    for (int r = 0; r < widths[l + 1]; ++r) {
      ++row_no;
      if (!std::getline(is, line)) throw IoError(path.string() + ": truncated at layer " + std::to_string(l));
      const auto cells = split(line);
      if (static_cast<int>(cells.size()) != widths[l]) {
        throw IoError(path.string() + ": row " + std::to_string(row_no) + " has " + std::to_string(cells.size()) +
                      " values, expected " + std::to_string(widths[l]));
      }
      for (int c = 0; c < widths[l]; ++c) m(r, c) = to_double(cells[static_cast<std::size_t>(c)], path.string());
    }
    theta.layers.push_back(std::move(m));
  }
  if (widths_out) *widths_out = widths;
  return theta;
}

void write_metrics_header(std::ostream& os) {
  const auto& cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
}

void write_metrics_row(std::ostream& os, const MetricsRecord& r) {
  os.precision(17);
  os << r.step;
  for (double v : {r.time, r.eta_eff, r.log_loss, r.q_min, r.q_soft_margin, r.q_margin, r.margin_l1, r.margin_l2,
                   r.margin_lp, r.horizon_margin, r.multi_q_margin, r.balance_drift_max, r.beta, r.e_tan, r.kkt_eps,
                   r.kkt_delta, r.alignment_gap}) {
    os << ',';
    put(os, v);
  }
  os << ',' << r.active_neurons << ',';
  put(os, r.objective_alpha_half);
  os << '\n';
}

void write_metrics_csv(const std::vector<MetricsRecord>& records, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  write_metrics_header(os);
  for (const auto& r : records) write_metrics_row(os, r);
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open metrics '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw IoError(path.string() + ": missing header");
  const auto head = split(line);
  if (head != metrics_columns()) throw IoError(path.string() + ": header does not match the metrics schema");
  std::vector<MetricsRecord> out;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    const auto c = split(line);
    const std::string ctx = path.string() + " row " + std::to_string(row);
    if (c.size() != head.size()) throw IoError(ctx + ": wrong column count");
    MetricsRecord r;
    r.step = static_cast<long long>(to_double(c[0], ctx));
    double* fields[] = {&r.time,          &r.eta_eff,   &r.log_loss,   &r.q_min,          &r.q_soft_margin,
                        &r.q_margin,      &r.margin_l1, &r.margin_l2,  &r.margin_lp,      &r.horizon_margin,
                        &r.multi_q_margin, &r.balance_drift_max, &r.beta, &r.e_tan, &r.kkt_eps,
                        &r.kkt_delta,     &r.alignment_gap};
    for (std::size_t i = 0; i < std::size(fields); ++i) *fields[i] = to_double(c[i + 1], ctx);
    r.active_neurons = static_cast<int>(to_double(c[18], ctx));
    r.objective_alpha_half = to_double(c[19], ctx);
    r.q_scale = r.q_min / r.q_margin;
    out.push_back(r);
  }
  return out;
}

}  // namespace mirrorflow
