#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <Eigen/Dense>

namespace mirrorflow {

/// Two-layer ReLU teacher f_t(x) = sum_j a_j relu(<w_j, x>) with |a_j| |w_j|_2 = 1.
struct TeacherSpec {
  int n_neurons = 3;
  int dim = 2;
  std::uint64_t seed = 0;
  Eigen::VectorXd a;  // n_neurons
  Eigen::MatrixXd w;  // n_neurons x dim, one neuron per row

  double operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const;
};

struct Provenance {
  std::string generator = "file";
  std::uint64_t seed = 0;
  std::optional<TeacherSpec> teacher;
};

/// Labeled inputs, one example per column of `inputs`; labels are +-1.
struct Dataset {
  Eigen::MatrixXd inputs;
  Eigen::VectorXd labels;
  Provenance provenance;

  std::size_t size() const noexcept { return static_cast<std::size_t>(inputs.cols()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(inputs.rows()); }
};

bool operator==(const Dataset& lhs, const Dataset& rhs);

TeacherSpec gen_teacher(std::uint64_t seed, int n_neurons, int dim);

/// K points uniform on the unit circle labeled by the sign of the teacher.
/// Points with |f_teacher(x)| < 1e-9 are resampled.
Dataset gen_circle_dataset(const TeacherSpec& teacher, std::uint64_t seed, std::size_t K);

/// Two Gaussian clusters at +-mean_norm * e_1 (noise std `noise`), labels alternating
/// +1/-1, with rejection of points whose signed first coordinate falls below `gap`.
/// A well-separated set for rate experiments.
Dataset gen_cluster_dataset(std::uint64_t seed, std::size_t K, int dim, double mean_norm = 1.0,
                            double noise = 0.1, double gap = 0.5);

/// CSV with header x_0,...,x_{d-1},y. Floats are written with 17 significant digits.
void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path);

/// Write then read back.
Dataset io_roundtrip(const Dataset& data, const std::filesystem::path& path);

std::string teacher_to_json(const TeacherSpec& teacher);
TeacherSpec teacher_from_json(const std::string& text);

}  // namespace mirrorflow
