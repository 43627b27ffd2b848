#pragma once

#include "cxr/dataset.hpp"
#include "cxr/reduce.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace cxr {

struct SvmKernel {
  enum class Type { Linear, Rbf };
  Type type = Type::Linear;
  double gamma = 1.0; // RBF: exp(-gamma |x-y|^2)

  static SvmKernel linear() { return {Type::Linear, 0.0}; }
  static SvmKernel rbf(double gamma) { return {Type::Rbf, gamma}; }
  double operator()(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) const;

  friend bool operator==(const SvmKernel&, const SvmKernel&) = default;
};

struct SvmConfig {
  SvmKernel kernel = SvmKernel::linear();
  double C = 10.0;
  /// KKT tolerance certified on the trained machine.
  double tolerance = 1e-3;
  /// Iteration budget: max_passes * n pair updates.
  std::size_t max_passes = 1000;
  /// The solver stops once the maximal KKT violation gap falls below this.
  double solver_epsilon = 1e-9;

  /// Throws ConfigurationError on non-positive C, tolerance or epsilon.
  void validate() const;
};

/// Soft-margin machine separating `positive` (y=+1) from `negative` (y=-1).
struct BinarySvm {
  ClassLabel positive = ClassLabel::COVID19;
  ClassLabel negative = ClassLabel::Normal;
  SvmKernel kernel;
  double C = 0.0;
  Eigen::MatrixXd support_vectors;   // one row per support vector
  Eigen::VectorXd coefficients;      // alpha_i * y_i
  std::vector<std::size_t> support_indices; // rows of the training matrix
  double bias = 0.0;
  bool converged = false;
  std::size_t iterations = 0;

  double decision(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij
  double dual_objective() const;
};

/// `x` must hold exactly two classes; the lower class index becomes +1.
BinarySvm fit_binary_svm(const LabeledMatrix& x, const SvmConfig& config);

struct KktReport {
  bool holds = true;
  double max_violation = 0.0; // largest excess over the tolerance band, 0 when holds
  double equality_residual = 0.0; // |sum alpha_i y_i|
};

/// Checks the soft-margin KKT conditions of `svm` on its own training data.
KktReport kkt_certificate(const BinarySvm& svm, const LabeledMatrix& training, double tolerance);

struct SvmModel {
  std::vector<ClassLabel> classes;   // canonical order
  std::vector<BinarySvm> machines;   // pairs (i,j), i<j, lexicographic
  std::string tie_break = "votes>sum_abs_decision>class_order";
  std::size_t input_dim = 0;

  bool all_converged() const;
};

/// One-vs-one: one binary machine per unordered class pair.
SvmModel fit_multiclass(const LabeledMatrix& x, const SvmConfig& config);

struct Prediction {
  ClassLabel label = ClassLabel::COVID19;
  std::vector<double> decision_values; // per machine, same order as SvmModel::machines
  std::vector<int> votes;              // per class, same order as SvmModel::classes
};

/// Majority vote; ties go to the larger summed |decision| over won duels,
/// then to the class appearing first in canonical order.
Prediction predict_detailed(const SvmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
ClassLabel predict(const SvmModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
std::vector<ClassLabel> predict_batch(const SvmModel& model, const Eigen::MatrixXd& rows);

std::string svm_to_json(const SvmModel& model);
SvmModel svm_from_json(const std::string& text);

} // namespace cxr
