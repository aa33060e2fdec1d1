#pragma once

// Linear binary SVM trained in the primal on the squared hinge objective
//   f(w) = 1/2 w'w + C sum_n max(1 - y_n w'x_n, 0)^2
// with a constant-1 feature appended to every x_n, so the bias is the last
// weight and is regularised like the others. covid maps to +1.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fuserank/fusion.hpp"
#include "fuserank/nn_core.hpp"

namespace fuserank::svm {

struct SolverConfig {
  std::size_t max_iterations = 5000;
  double gradient_tolerance = 1e-6;
  double initial_step = 1.0;
  double shrink = 0.5;
  double sufficient_decrease = 1e-4;

  void validate() const;
};

struct SolverReport {
  std::size_t iterations = 0;
  double final_objective = 0.0;
  double final_gradient_norm = 0.0;
  bool converged = false;
  /// Objective after each accepted step, starting with f(0). Not persisted.
  std::vector<double> objective_trace;
};

struct LinearSvmModel {
  std::size_t dim = 0;
  double C = 1.0;
  std::vector<double> weights;  // dim + 1, bias last
  std::vector<nn::Standardizer> standardizers;
  SolverReport report;
};

struct Prediction {
  Label label = Label::covid;
  double score = 0.0;
};

inline double label_sign(Label label) noexcept { return label == Label::covid ? 1.0 : -1.0; }

/// Applies the standardizers column-wise and appends the constant-1 column.
fusion::FeatureMatrix standardize_and_augment(const fusion::FeatureMatrix& m,
                                              std::span<const nn::Standardizer> standardizers);

/// m must already be standardised and augmented; w.size() == m.dim.
double objective(std::span<const double> w, const fusion::FeatureMatrix& m, double C);
std::vector<double> gradient(std::span<const double> w, const fusion::FeatureMatrix& m, double C);

/// Full-batch gradient descent with Armijo backtracking from w = 0; trial
/// steps after the first are Barzilai-Borwein estimates.
/// Rows are put in a canonical order first, so the result does not depend on
/// the order rows arrive in.
LinearSvmModel train(const fusion::FeatureMatrix& m, double C, const SolverConfig& cfg = {});

/// score = w'[standardize(x); 1]; score >= 0 predicts covid.
Prediction predict(const LinearSvmModel& model, std::span<const double> x);

std::string model_to_json(const LinearSvmModel& model, const std::string& config_hash = {});
LinearSvmModel model_from_json(std::string_view text, std::string* config_hash = nullptr);
void write_model(const std::filesystem::path& path, const LinearSvmModel& model, const std::string& config_hash = {});
LinearSvmModel read_model(const std::filesystem::path& path, std::string* config_hash = nullptr);

}  // namespace fuserank::svm
