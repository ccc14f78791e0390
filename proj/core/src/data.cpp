#include "mirrorflow/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "mirrorflow/errors.hpp"
#include "mirrorflow/rng.hpp"

namespace mirrorflow {

namespace {

constexpr double kBoundaryTolerance = 1e-9;
constexpr int kMaxResamples = 10000;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_double(const std::string& text, double& out) {
  std::size_t begin = text.find_first_not_of(" \t");
  std::size_t end = text.find_last_not_of(" \t");
  if (begin == std::string::npos) return false;
  const char* first = text.data() + begin;
  const char* last = text.data() + end + 1;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

}  // namespace

double TeacherSpec::operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return a.dot((w * x).cwiseMax(0.0));
}

bool operator==(const Dataset& lhs, const Dataset& rhs) {
  return lhs.inputs.rows() == rhs.inputs.rows() && lhs.inputs.cols() == rhs.inputs.cols() &&
         lhs.inputs == rhs.inputs && lhs.labels == rhs.labels;
}

TeacherSpec gen_teacher(std::uint64_t seed, int n_neurons, int dim) {
  if (n_neurons < 1 || dim < 1) throw std::invalid_argument("gen_teacher: n_neurons and dim must be >= 1");
  TeacherSpec t;
  t.n_neurons = n_neurons;
  t.dim = dim;
  t.seed = seed;
  t.a.resize(n_neurons);
  t.w.resize(n_neurons, dim);
  SplitMix64 rng(seed);
  for (int j = 0; j < n_neurons; ++j) {
    double norm = 0.0;
    while (norm == 0.0) {
      for (int k = 0; k < dim; ++k) t.w(j, k) = rng.normal();
      norm = t.w.row(j).norm();
    }
    t.a(j) = rng.sign() / norm;
  }
  return t;
}

Dataset gen_circle_dataset(const TeacherSpec& teacher, std::uint64_t seed, std::size_t K) {
  if (teacher.dim != 2) throw std::invalid_argument("gen_circle_dataset: teacher.dim must be 2");
  if (K < 1) throw std::invalid_argument("gen_circle_dataset: K must be >= 1");
  Dataset data;
  data.inputs.resize(2, static_cast<Eigen::Index>(K));
  data.labels.resize(static_cast<Eigen::Index>(K));
  SplitMix64 rng(seed);
  int resamples = 0;
  for (std::size_t i = 0; i < K; ++i) {
    for (;;) {
      const double angle = 2.0 * std::numbers::pi * rng.uniform();
      Eigen::Vector2d x(std::cos(angle), std::sin(angle));
      const double f = teacher(x);
      if (std::abs(f) < kBoundaryTolerance) {
        if (++resamples > kMaxResamples) {
          throw std::runtime_error("gen_circle_dataset: teacher vanishes on the circle (resampling exceeded " +
                                   std::to_string(kMaxResamples) + " attempts)");
        }
        continue;
      }
      const auto col = static_cast<Eigen::Index>(i);
      data.inputs.col(col) = x;
      data.labels(col) = f > 0.0 ? 1.0 : -1.0;
      break;
    }
  }
  data.provenance = {"circle", seed, teacher};
  return data;
}

Dataset gen_cluster_dataset(std::uint64_t seed, std::size_t K, int dim, double mean_norm, double noise,
                            double gap) {
  if (K < 1 || dim < 1) throw std::invalid_argument("gen_cluster_dataset: K and dim must be >= 1");
  if (gap >= mean_norm) throw std::invalid_argument("gen_cluster_dataset: gap must be below mean_norm");
  Dataset data;
  data.inputs.resize(dim, static_cast<Eigen::Index>(K));
  data.labels.resize(static_cast<Eigen::Index>(K));
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < K; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const double y = (i % 2 == 0) ? 1.0 : -1.0;
    Eigen::VectorXd x(dim);
    do {
      for (int k = 0; k < dim; ++k) x(k) = noise * rng.normal();
      x(0) += y * mean_norm;
    } while (y * x(0) < gap);
    data.inputs.col(col) = x;
    data.labels(col) = y;
  }
  data.provenance = {"clusters", seed, std::nullopt};
  return data;
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.precision(17);
  for (std::size_t k = 0; k < data.dim(); ++k) os << "x_" << k << ',';
  os << "y\n";
  for (Eigen::Index i = 0; i < data.inputs.cols(); ++i) {
    for (Eigen::Index k = 0; k < data.inputs.rows(); ++k) os << data.inputs(k, i) << ',';
    os << static_cast<int>(data.labels(i)) << '\n';
  }
  if (!os) throw IoError("failed writing '" + path.string() + "'");
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw IoError(path.string() + ": missing header");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header.back() != "y") {
    throw IoError(path.string() + ": header must be x_0,...,x_{d-1},y");
  }
  const std::size_t dim = header.size() - 1;
  for (std::size_t k = 0; k < dim; ++k) {
    if (header[k] != "x_" + std::to_string(k)) {
      throw IoError(path.string() + ": header column " + std::to_string(k) + " must be x_" + std::to_string(k));
    }
  }
  std::vector<double> values;
  std::vector<double> labels;
  std::size_t row = 0;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != dim + 1) {
      throw IoError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                    " columns, expected " + std::to_string(dim + 1));
    }
    for (std::size_t k = 0; k < dim; ++k) {
      double v;
      if (!parse_double(cells[k], v)) {
        throw IoError(path.string() + ": row " + std::to_string(row) + " column x_" + std::to_string(k) +
                      " is not a finite number");
      }
      values.push_back(v);
    }
    double y;
    if (!parse_double(cells[dim], y) || (y != 1.0 && y != -1.0)) {
      throw IoError(path.string() + ": row " + std::to_string(row) + " has label '" + cells[dim] +
                    "', expected -1 or 1");
    }
    labels.push_back(y);
  }
  if (labels.empty()) throw IoError(path.string() + ": no data rows after header");
  Dataset data;
  const auto K = static_cast<Eigen::Index>(labels.size());
  data.inputs = Eigen::Map<const Eigen::MatrixXd>(values.data(), static_cast<Eigen::Index>(dim), K);
  data.labels = Eigen::Map<const Eigen::VectorXd>(labels.data(), K);
  data.provenance.generator = "file";
  return data;
}

Dataset io_roundtrip(const Dataset& data, const std::filesystem::path& path) {
  write_dataset_csv(data, path);
  Dataset back = read_dataset_csv(path);
  back.provenance = data.provenance;
  return back;
}

std::string teacher_to_json(const TeacherSpec& teacher) {
  nlohmann::json j;
  j["n_neurons"] = teacher.n_neurons;
  j["dim"] = teacher.dim;
  j["seed"] = teacher.seed;
  j["a"] = std::vector<double>(teacher.a.data(), teacher.a.data() + teacher.a.size());
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < teacher.w.rows(); ++r) {
    std::vector<double> row(teacher.w.cols());
    for (Eigen::Index c = 0; c < teacher.w.cols(); ++c) row[c] = teacher.w(r, c);
    rows.push_back(row);
  }
  j["w"] = rows;
  return j.dump(2);
}

TeacherSpec teacher_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TeacherSpec t;
    t.n_neurons = j.at("n_neurons").get<int>();
    t.dim = j.at("dim").get<int>();
    t.seed = j.at("seed").get<std::uint64_t>();
    const auto a = j.at("a").get<std::vector<double>>();
    const auto w = j.at("w").get<std::vector<std::vector<double>>>();
    if (static_cast<int>(a.size()) != t.n_neurons || static_cast<int>(w.size()) != t.n_neurons) {
      throw IoError("teacher JSON: a/w length does not match n_neurons");
    }
    t.a = Eigen::Map<const Eigen::VectorXd>(a.data(), t.n_neurons);
    t.w.resize(t.n_neurons, t.dim);
    for (int r = 0; r < t.n_neurons; ++r) {
      if (static_cast<int>(w[r].size()) != t.dim) throw IoError("teacher JSON: row width does not match dim");
      for (int c = 0; c < t.dim; ++c) t.w(r, c) = w[r][c];
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("teacher JSON: ") + e.what());
  }
}

}  // namespace mirrorflow
