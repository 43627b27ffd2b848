#pragma once

#include "cxr/dataset.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cxr {

/// Feature rows with their labels. Row i of `rows` belongs to labels[i].
class LabeledMatrix {
public:
  LabeledMatrix() = default;
  LabeledMatrix(Eigen::MatrixXd rows, std::vector<ClassLabel> labels, std::vector<std::string> sample_ids = {});

  const Eigen::MatrixXd& rows() const { return rows_; }
  const std::vector<ClassLabel>& labels() const { return labels_; }
  const std::vector<std::string>& sample_ids() const { return ids_; }
  std::size_t n() const { return static_cast<std::size_t>(rows_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(rows_.cols()); }

  const std::map<ClassLabel, std::vector<std::size_t>>& class_index() const { return class_index_; }
  std::vector<ClassLabel> classes() const;

  /// Sub-matrix of the given rows, in the given order.
  LabeledMatrix subset(const std::vector<std::size_t>& idx) const;

private:
  Eigen::MatrixXd rows_;
  std::vector<ClassLabel> labels_;
  std::vector<std::string> ids_;
  std::map<ClassLabel, std::vector<std::size_t>> class_index_;
};

enum class ReductionMethod { PCA, KPCA, LDA, DCV };

std::string to_string(ReductionMethod m);
std::optional<ReductionMethod> parse_reduction_method(std::string_view s);

struct KernelSpec {
  enum class Type { Linear, Rbf };
  Type type = Type::Rbf;
  /// RBF bandwidth: k(x,y) = exp(-|x-y|^2 / (2 sigma^2)). Non-positive means
  /// "median pairwise training distance", resolved at fit time.
  double sigma = 0.0;

  static KernelSpec linear() { return {Type::Linear, 0.0}; }
  static KernelSpec rbf(double sigma = 0.0) { return {Type::Rbf, sigma}; }
  double operator()(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) const;
};

struct KernelData {
  KernelSpec kernel;             // sigma always resolved
  Eigen::MatrixXd training;      // n x input_dim
  Eigen::MatrixXd dual;          // n x output_dim, eigenvectors scaled by 1/sqrt(lambda)
  Eigen::VectorXd column_means;  // column means of the uncentred training kernel
  double grand_mean = 0.0;
};

enum class DcvMode { PseudoNull, ExactNull };

struct DcvParams {
  DcvMode mode = DcvMode::PseudoNull;
  /// Fraction of within-class eigenvalue mass assigned to the range space.
  double variance_fraction = 0.8;
};

struct ReductionModel {
  ReductionMethod method = ReductionMethod::PCA;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  Eigen::VectorXd center;       // input_dim
  Eigen::MatrixXd basis;        // input_dim x output_dim (linear methods)
  Eigen::VectorXd eigenvalues;  // per retained component
  std::optional<KernelData> kernel_data;
  std::optional<DcvParams> dcv_params;
  /// Projection of the training rows, kept from the fit. Not serialised.
  Eigen::MatrixXd training_embedding;
};

/// PCA keeping the fewest leading components whose variance reaches
/// `variance_kept` of the total. Uses the n x n Gram matrix when d > n.
ReductionModel fit_pca(const LabeledMatrix& x, double variance_kept = 0.95);

ReductionModel fit_kpca(const LabeledMatrix& x, KernelSpec kernel, std::size_t n_components);

/// Fisher LDA after a rank-preserving PCA pre-projection. The ridge added to
/// the within-class scatter is `regularization * trace(Sw) / r`.
ReductionModel fit_lda(const LabeledMatrix& x, double regularization = 1e-3);

/// Discriminant common vectors. In PseudoNull mode the range space of the
/// within-class scatter is the smallest leading eigenspace holding
/// `variance_fraction` of its eigenvalue mass; ExactNull uses its full rank.
ReductionModel fit_dcv(const LabeledMatrix& x, DcvParams params = {});

/// Reduced coordinates of one feature vector.
Eigen::VectorXd project(const ReductionModel& model, const Eigen::Ref<const Eigen::VectorXd>& x);
/// Row-wise projection of a matrix (n x input_dim) to n x output_dim.
Eigen::MatrixXd project_rows(const ReductionModel& model, const Eigen::MatrixXd& x);

/// Back-projection into the input space (linear methods only).
Eigen::VectorXd reconstruct(const ReductionModel& model, const Eigen::Ref<const Eigen::VectorXd>& reduced);

// ---------------------------------------------------------------------------
// Point clouds

struct EmbeddedSample {
  std::string sample_id;
  ClassLabel label = ClassLabel::Normal;
  bool is_test = false;
  std::vector<double> coords;
};

struct PointCloudRow {
  std::string sample_id;
  ClassLabel label = ClassLabel::Normal;
  bool is_test = false;
  std::vector<double> components;

  /// Class name, with "TS" appended for test samples.
  std::string legend_label() const;
};

struct PointCloud {
  std::size_t n_components = 0;
  std::vector<PointCloudRow> rows;
  std::vector<std::string> warnings;

  std::vector<std::string> legend_labels() const; // distinct, sorted
};

std::vector<EmbeddedSample> embed(const ReductionModel& model, const LabeledMatrix& x, bool is_test);

/// Leading `n` reduced coordinates per sample; truncates with a warning when
/// the model has fewer components.
PointCloud top_components(const ReductionModel& model, const std::vector<EmbeddedSample>& embedded,
                          std::size_t n = 3);

/// `sample_id,label,split,c1,...,cn`
std::string point_cloud_to_csv(const PointCloud& cloud);

/// Mean inter-class over mean intra-class Euclidean distance. nullopt when
/// the intra-class mean is zero or a class pairing is missing.
std::optional<double> separability_index(const PointCloud& cloud);

// ---------------------------------------------------------------------------
// Model files (JSON, format_version 1)

std::string model_to_json(const ReductionModel& model);
ReductionModel model_from_json(const std::string& text);

} // namespace cxr
