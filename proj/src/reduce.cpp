#include "cxr/reduce.hpp"

#include "cxr/csv.hpp"
#include "cxr/error.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

namespace cxr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

LabeledMatrix::LabeledMatrix(MatrixXd rows, std::vector<ClassLabel> labels, std::vector<std::string> sample_ids)
    : rows_(std::move(rows)), labels_(std::move(labels)), ids_(std::move(sample_ids)) {
  if (static_cast<std::size_t>(rows_.rows()) != labels_.size())
    throw ShapeError(fmt::format("{} rows but {} labels", rows_.rows(), labels_.size()));
  if (ids_.empty()) {
    ids_.reserve(labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i) ids_.push_back(fmt::format("s{}", i));
  } else if (ids_.size() != labels_.size()) {
    throw ShapeError(fmt::format("{} rows but {} sample ids", rows_.rows(), ids_.size()));
  }
  if (!rows_.allFinite()) throw ShapeError("feature matrix contains non-finite values");
  for (std::size_t i = 0; i < labels_.size(); ++i) class_index_[labels_[i]].push_back(i);
}

std::vector<ClassLabel> LabeledMatrix::classes() const {
  std::vector<ClassLabel> out;
  for (const auto& [label, idx] : class_index_) out.push_back(label);
  return out;
}

LabeledMatrix LabeledMatrix::subset(const std::vector<std::size_t>& idx) const {
  MatrixXd sub(static_cast<Eigen::Index>(idx.size()), rows_.cols());
  std::vector<ClassLabel> labels;
  std::vector<std::string> ids;
  labels.reserve(idx.size());
  ids.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    sub.row(static_cast<Eigen::Index>(i)) = rows_.row(static_cast<Eigen::Index>(idx[i]));
    labels.push_back(labels_[idx[i]]);
    ids.push_back(ids_[idx[i]]);
  }
  return LabeledMatrix(std::move(sub), std::move(labels), std::move(ids));
}

std::string to_string(ReductionMethod m) {
  switch (m) {
  case ReductionMethod::PCA: return "pca";
  case ReductionMethod::KPCA: return "kpca";
  case ReductionMethod::LDA: return "lda";
  case ReductionMethod::DCV: return "dcv";
  }
  return "?";
}

std::optional<ReductionMethod> parse_reduction_method(std::string_view s) {
  for (auto m : {ReductionMethod::PCA, ReductionMethod::KPCA, ReductionMethod::LDA, ReductionMethod::DCV})
    if (to_string(m) == s) return m;
  return std::nullopt;
}

double KernelSpec::operator()(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b) const {
  if (type == Type::Linear) return a.dot(b);
  return std::exp(-(a - b).squaredNorm() / (2.0 * sigma * sigma));
}

namespace {

// Relative eigenvalue cut-off separating numerical zeros from signal.
constexpr double kRankTol = 1e-10;

struct Eigen_ {
  VectorXd values;  // non-increasing
  MatrixXd vectors; // matching columns
};

Eigen_ sym_eig_desc(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw DegenerateDataError("eigendecomposition failed to converge");
  Eigen_ out;
  out.values = es.eigenvalues().reverse();
  out.vectors = es.eigenvectors().rowwise().reverse();
  return out;
}

std::size_t count_above(const VectorXd& desc_values, double tol) {
  std::size_t k = 0;
  while (k < static_cast<std::size_t>(desc_values.size()) && desc_values(static_cast<Eigen::Index>(k)) > tol) ++k;
  return k;
}

// Largest-magnitude entry of each column is made positive.
void fix_signs(MatrixXd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    Eigen::Index arg = 0;
    m.col(j).cwiseAbs().maxCoeff(&arg);
    if (m(arg, j) < 0) m.col(j) *= -1.0;
  }
}

struct SpanBasis {
  MatrixXd basis;    // d x r orthonormal
  VectorXd values;   // eigenvalues of Xc^T Xc (sums of squares), non-increasing
};

// Eigenvectors of Xc^T Xc with non-negligible eigenvalue, via the Gram matrix
// when d > n.
SpanBasis principal_span(const MatrixXd& xc) {
  const auto n = xc.rows(), d = xc.cols();
  SpanBasis out;
  if (d > n) {
    MatrixXd gram = xc * xc.transpose();
    auto es = sym_eig_desc(gram);
    const double top = std::max(es.values(0), 0.0);
    const auto r = static_cast<Eigen::Index>(count_above(es.values, top * kRankTol));
    out.values = es.values.head(r);
    out.basis = xc.transpose() * es.vectors.leftCols(r);
    for (Eigen::Index j = 0; j < r; ++j) out.basis.col(j) /= std::sqrt(out.values(j));
  } else {
    MatrixXd scatter = xc.transpose() * xc;
    auto es = sym_eig_desc(scatter);
    const double top = std::max(es.values(0), 0.0);
    const auto r = static_cast<Eigen::Index>(count_above(es.values, top * kRankTol));
    out.values = es.values.head(r);
    out.basis = es.vectors.leftCols(r);
  }
  fix_signs(out.basis);
  return out;
}

void require_samples(const LabeledMatrix& x, std::size_t min_n, const char* what) {
  if (x.n() < min_n) throw DegenerateDataError(fmt::format("{} needs at least {} samples, got {}", what, min_n, x.n()));
  if (x.dim() == 0) throw DegenerateDataError(fmt::format("{}: zero-dimensional input", what));
}

} // namespace

// ---------------------------------------------------------------------------

ReductionModel fit_pca(const LabeledMatrix& x, double variance_kept) {
  require_samples(x, 2, "PCA");
  if (!(variance_kept > 0.0 && variance_kept <= 1.0))
    throw ConfigurationError(fmt::format("variance_kept {} outside (0,1]", variance_kept));

  ReductionModel m;
  m.method = ReductionMethod::PCA;
  m.input_dim = x.dim();
  m.center = x.rows().colwise().mean().transpose();
  MatrixXd xc = x.rows().rowwise() - m.center.transpose();
  const double total = xc.squaredNorm();
  if (!(total > 0.0)) throw DegenerateDataError("PCA: zero total variance");

  auto span = principal_span(xc);
  const auto r = span.values.size();
  Eigen::Index k = 0;
  double cum = 0.0;
  const double target = variance_kept * total * (1.0 - 1e-12);
  while (k < r) {
    cum += span.values(k);
    ++k;
    if (cum >= target) break;
  }
  m.output_dim = static_cast<std::size_t>(k);
  m.basis = span.basis.leftCols(k);
  m.eigenvalues = span.values.head(k) / static_cast<double>(x.n() - 1);
  m.training_embedding = xc * m.basis;
  return m;
}

ReductionModel fit_kpca(const LabeledMatrix& x, KernelSpec kernel, std::size_t n_components) {
  require_samples(x, 2, "KPCA");
  const auto n = static_cast<Eigen::Index>(x.n());
  if (n_components == 0 || n_components > x.n() - 1)
    throw ConfigurationError(fmt::format("KPCA n_components must be in [1, {}], got {}", x.n() - 1, n_components));
  const MatrixXd& data = x.rows();

  if (kernel.type == KernelSpec::Type::Rbf && !(kernel.sigma > 0.0)) {
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) dists.push_back((data.row(i) - data.row(j)).norm());
    auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    double median = *mid;
    if (dists.size() % 2 == 0) {
      double lower = *std::max_element(dists.begin(), mid);
      median = 0.5 * (median + lower);
    }
    if (!(median > 0.0)) throw DegenerateDataError("KPCA: median pairwise distance is zero");
    kernel.sigma = median;
  }

  MatrixXd k(n, n);
  if (kernel.type == KernelSpec::Type::Linear) {
    k = data * data.transpose();
  } else {
    VectorXd sq = data.rowwise().squaredNorm();
    MatrixXd dots = data * data.transpose();
    const double denom = 2.0 * kernel.sigma * kernel.sigma;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        k(i, j) = std::exp(-std::max(sq(i) + sq(j) - 2.0 * dots(i, j), 0.0) / denom);
  }

  KernelData kd;
  kd.kernel = kernel;
  kd.training = data;
  kd.column_means = k.colwise().mean().transpose();
  kd.grand_mean = kd.column_means.mean();
  MatrixXd kc = k;
  kc.rowwise() -= kd.column_means.transpose();
  kc.colwise() -= kd.column_means;
  kc.array() += kd.grand_mean;
  kc = 0.5 * (kc + kc.transpose()).eval();

  auto es = sym_eig_desc(kc);
  const auto p = static_cast<Eigen::Index>(n_components);
  const double tol = std::max(es.values(0), 0.0) * kRankTol;
  for (Eigen::Index j = 0; j < p; ++j)
    if (!(es.values(j) > tol))
      throw RankError(fmt::format("KPCA: component {} has non-positive eigenvalue {}", j + 1, es.values(j)));

  MatrixXd vecs = es.vectors.leftCols(p);
  fix_signs(vecs);
  kd.dual = vecs;
  for (Eigen::Index j = 0; j < p; ++j) kd.dual.col(j) /= std::sqrt(es.values(j));

  ReductionModel m;
  m.method = ReductionMethod::KPCA;
  m.input_dim = x.dim();
  m.output_dim = n_components;
  m.center = VectorXd::Zero(static_cast<Eigen::Index>(x.dim()));
  m.eigenvalues = es.values.head(p);
  m.training_embedding = kc * kd.dual;
  m.kernel_data = std::move(kd);
  return m;
}

ReductionModel fit_lda(const LabeledMatrix& x, double regularization) {
  if (regularization < 0.0) throw ConfigurationError("LDA regularization must be >= 0");
  const auto& groups = x.class_index();
  if (groups.size() < 2) throw DegenerateDataError("LDA needs at least 2 classes");
  for (const auto& [label, idx] : groups)
    if (idx.size() < 2)
      throw DegenerateDataError(fmt::format("LDA: class '{}' has fewer than 2 samples", to_token(label)));

  ReductionModel m;
  m.method = ReductionMethod::LDA;
  m.input_dim = x.dim();
  m.center = x.rows().colwise().mean().transpose();
  MatrixXd xc = x.rows().rowwise() - m.center.transpose();
  if (!(xc.squaredNorm() > 0.0)) throw DegenerateDataError("LDA: zero total variance");

  // rank-preserving PCA pre-projection
  auto span = principal_span(xc);
  MatrixXd z = xc * span.basis;
  const auto r = z.cols();

  MatrixXd sw = MatrixXd::Zero(r, r), sb = MatrixXd::Zero(r, r);
  for (const auto& [label, idx] : groups) {
    VectorXd mu = VectorXd::Zero(r);
    for (auto i : idx) mu += z.row(static_cast<Eigen::Index>(i)).transpose();
    mu /= static_cast<double>(idx.size());
    for (auto i : idx) {
      VectorXd dv = z.row(static_cast<Eigen::Index>(i)).transpose() - mu;
      sw.noalias() += dv * dv.transpose();
    }
    sb.noalias() += static_cast<double>(idx.size()) * mu * mu.transpose();
  }

  if (regularization == 0.0) {
    auto es = sym_eig_desc(sw);
    if (!(es.values(r - 1) > es.values(0) * kRankTol))
      throw SingularityError(
          "LDA: within-class scatter is singular in the pre-projected space; use a positive regularization");
  } else {
    sw.diagonal().array() += regularization * sw.trace() / static_cast<double>(r);
  }

  Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> ges(sb, sw);
  if (ges.info() != Eigen::Success) throw SingularityError("LDA: generalized eigenproblem failed");
  const auto out = std::min<Eigen::Index>(static_cast<Eigen::Index>(groups.size()) - 1, r);
  MatrixXd v = ges.eigenvectors().rowwise().reverse().leftCols(out);
  VectorXd lambda = ges.eigenvalues().reverse().head(out);

  MatrixXd w = span.basis * v;
  for (Eigen::Index j = 0; j < out; ++j) w.col(j).normalize();
  fix_signs(w);

  m.output_dim = static_cast<std::size_t>(out);
  m.basis = std::move(w);
  m.eigenvalues = lambda;
  m.training_embedding = xc * m.basis;
  return m;
}

ReductionModel fit_dcv(const LabeledMatrix& x, DcvParams params) {
  const auto& groups = x.class_index();
  if (groups.size() < 2) throw DegenerateDataError("DCV: between-class scatter undefined for a single class");
  if (params.mode == DcvMode::PseudoNull && !(params.variance_fraction > 0.0 && params.variance_fraction < 1.0))
    throw ConfigurationError(fmt::format("DCV variance fraction {} outside (0,1)", params.variance_fraction));
  require_samples(x, 2, "DCV");

  const MatrixXd& data = x.rows();
  const auto d = data.cols();
  const auto n_classes = static_cast<Eigen::Index>(groups.size());

  MatrixXd means(n_classes, d);
  MatrixXd within(data.rows(), d); // rows centred on their class mean
  {
    Eigen::Index c = 0;
    for (const auto& [label, idx] : groups) {
      VectorXd mu = VectorXd::Zero(d);
      for (auto i : idx) mu += data.row(static_cast<Eigen::Index>(i)).transpose();
      mu /= static_cast<double>(idx.size());
      means.row(c) = mu.transpose();
      for (auto i : idx) within.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(i)) - mu.transpose();
      ++c;
    }
  }

  // Range space of Sw = within^T within, through the n x n Gram matrix.
  MatrixXd gram = within * within.transpose();
  auto es = sym_eig_desc(gram);
  const double top = std::max(es.values(0), 0.0);
  const auto rank = static_cast<Eigen::Index>(top > 0.0 ? count_above(es.values, top * kRankTol) : 0);
  Eigen::Index m_range = rank;
  if (params.mode == DcvMode::PseudoNull && rank > 0) {
    const double mass = es.values.head(rank).sum();
    double cum = 0.0;
    m_range = 0;
    while (m_range < rank) {
      cum += es.values(m_range);
      ++m_range;
      if (cum >= params.variance_fraction * mass) break;
    }
  }
  if (m_range >= d) throw EmptyNullSpaceError("DCV: range space fills the input space; the null space is empty");

  // Common vectors: class means with their range-space component removed.
  // Q Q^T y = within^T U diag(1/lambda) U^T within y, never forming Q.
  MatrixXd common = means;
  if (m_range > 0) {
    MatrixXd u = es.vectors.leftCols(m_range);
    VectorXd inv = es.values.head(m_range).cwiseInverse();
    MatrixXd coeff = u * inv.asDiagonal() * (u.transpose() * (within * means.transpose()));
    common -= (within.transpose() * coeff).transpose();
  }

  VectorXd center = data.colwise().mean().transpose();
  VectorXd common_mean = common.colwise().mean().transpose();
  MatrixXd bc = common.rowwise() - common_mean.transpose();
  MatrixXd cgram = bc * bc.transpose();
  auto ces = sym_eig_desc(cgram);

  // zero-spread threshold relative to the spread of the raw class means
  MatrixXd raw = means.rowwise() - means.colwise().mean();
  const double scale = raw.squaredNorm();
  const double tol = std::max(scale, std::max(ces.values(0), 0.0)) * kRankTol;
  const auto k = std::min<Eigen::Index>(static_cast<Eigen::Index>(count_above(ces.values, tol)), n_classes - 1);
  if (k == 0)
    throw EmptyNullSpaceError("DCV: common vectors coincide; the pseudo-null space carries no class separation");

  MatrixXd w = bc.transpose() * ces.vectors.leftCols(k);
  for (Eigen::Index j = 0; j < k; ++j) w.col(j) /= std::sqrt(ces.values(j));
  fix_signs(w);

  ReductionModel model;
  model.method = ReductionMethod::DCV;
  model.input_dim = static_cast<std::size_t>(d);
  model.output_dim = static_cast<std::size_t>(k);
  model.center = std::move(center);
  model.basis = std::move(w);
  model.eigenvalues = ces.values.head(k);
  model.dcv_params = params;
  model.training_embedding = (data.rowwise() - model.center.transpose()) * model.basis;
  return model;
}

// ---------------------------------------------------------------------------

VectorXd project(const ReductionModel& model, const Eigen::Ref<const VectorXd>& x) {
  if (static_cast<std::size_t>(x.size()) != model.input_dim)
    throw ShapeError(fmt::format("projection expects {} features, got {}", model.input_dim, x.size()));
  if (model.method == ReductionMethod::KPCA) {
    const auto& kd = *model.kernel_data;
    const auto n = kd.training.rows();
    VectorXd kx(n);
    for (Eigen::Index i = 0; i < n; ++i) kx(i) = kd.kernel(kd.training.row(i).transpose(), x);
    VectorXd kc = kx.array() - kx.mean() - kd.column_means.array() + kd.grand_mean;
    return kd.dual.transpose() * kc;
  }
  return model.basis.transpose() * (x - model.center);
}

MatrixXd project_rows(const ReductionModel& model, const MatrixXd& x) {
  if (static_cast<std::size_t>(x.cols()) != model.input_dim)
    throw ShapeError(fmt::format("projection expects {} features, got {}", model.input_dim, x.cols()));
  if (model.method != ReductionMethod::KPCA) return (x.rowwise() - model.center.transpose()) * model.basis;
  MatrixXd out(x.rows(), static_cast<Eigen::Index>(model.output_dim));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = project(model, x.row(i).transpose()).transpose();
  return out;
}

VectorXd reconstruct(const ReductionModel& model, const Eigen::Ref<const VectorXd>& reduced) {
  if (model.method == ReductionMethod::KPCA) throw ConfigurationError("KPCA has no linear back-projection");
  if (static_cast<std::size_t>(reduced.size()) != model.output_dim)
    throw ShapeError(fmt::format("expected {} reduced coordinates, got {}", model.output_dim, reduced.size()));
  return model.center + model.basis * reduced;
}

// ---------------------------------------------------------------------------

std::string PointCloudRow::legend_label() const {
  std::string s(display_name(label));
  if (is_test) s += "TS";
  return s;
}

std::vector<std::string> PointCloud::legend_labels() const {
  std::set<std::string> s;
  for (const auto& r : rows) s.insert(r.legend_label());
  return {s.begin(), s.end()};
}

std::vector<EmbeddedSample> embed(const ReductionModel& model, const LabeledMatrix& x, bool is_test) {
  MatrixXd y = project_rows(model, x.rows());
  std::vector<EmbeddedSample> out;
  out.reserve(x.n());
  for (std::size_t i = 0; i < x.n(); ++i) {
    EmbeddedSample s;
    s.sample_id = x.sample_ids()[i];
    s.label = x.labels()[i];
    s.is_test = is_test;
    s.coords.resize(static_cast<std::size_t>(y.cols()));
    for (Eigen::Index j = 0; j < y.cols(); ++j) s.coords[static_cast<std::size_t>(j)] = y(static_cast<Eigen::Index>(i), j);
    out.push_back(std::move(s));
  }
  return out;
}

PointCloud top_components(const ReductionModel& model, const std::vector<EmbeddedSample>& embedded, std::size_t n) {
  PointCloud cloud;
  cloud.n_components = std::min(n, model.output_dim);
  if (cloud.n_components < n)
    cloud.warnings.push_back(fmt::format("{} model has {} components; point cloud truncated from {} to {}",
                                         to_string(model.method), model.output_dim, n, cloud.n_components));
  for (const auto& s : embedded) {
    if (s.coords.size() != model.output_dim)
      throw ShapeError(fmt::format("sample '{}' has {} coordinates, model has {}", s.sample_id, s.coords.size(),
                                   model.output_dim));
    PointCloudRow row{s.sample_id, s.label, s.is_test,
                      std::vector<double>(s.coords.begin(),
                                          s.coords.begin() + static_cast<std::ptrdiff_t>(cloud.n_components))};
    cloud.rows.push_back(std::move(row));
  }
  return cloud;
}

std::string point_cloud_to_csv(const PointCloud& cloud) {
  std::string out = "sample_id,label,split";
  for (std::size_t j = 0; j < cloud.n_components; ++j) out += fmt::format(",c{}", j + 1);
  out += '\n';
  for (const auto& r : cloud.rows) {
    out += fmt::format("{},{},{}", csv_escape(r.sample_id), to_token(r.label), r.is_test ? "test" : "train");
    for (double v : r.components) out += "," + format_double(v);
    out += '\n';
  }
  return out;
}

std::optional<double> separability_index(const PointCloud& cloud) {
  double inter = 0.0, intra = 0.0;
  std::size_t n_inter = 0, n_intra = 0;
  for (std::size_t i = 0; i < cloud.rows.size(); ++i) {
    for (std::size_t j = i + 1; j < cloud.rows.size(); ++j) {
      double ss = 0.0;
      for (std::size_t c = 0; c < cloud.n_components; ++c) {
        double dv = cloud.rows[i].components[c] - cloud.rows[j].components[c];
        ss += dv * dv;
      }
      const double dist = std::sqrt(ss);
      if (cloud.rows[i].label == cloud.rows[j].label) {
        intra += dist;
        ++n_intra;
      } else {
        inter += dist;
        ++n_inter;
      }
    }
  }
  if (n_inter == 0 || n_intra == 0 || intra == 0.0) return std::nullopt;
  return (inter / static_cast<double>(n_inter)) / (intra / static_cast<double>(n_intra));
}

// ---------------------------------------------------------------------------

namespace {

using json = nlohmann::ordered_json;

json vec_to_json(const VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json mat_to_json(const MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    a.push_back(std::move(row));
  }
  return a;
}

VectorXd vec_from_json(const json& a) {
  VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

MatrixXd mat_from_json(const json& a, std::size_t rows, std::size_t cols) {
  if (a.size() != rows) throw FormatError(fmt::format("matrix has {} rows, expected {}", a.size(), rows));
  MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    if (a[i].size() != cols) throw FormatError(fmt::format("matrix row {} has {} entries, expected {}", i, a[i].size(), cols));
    for (std::size_t j = 0; j < cols; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[i][j].get<double>();
  }
  return m;
}

} // namespace

std::string model_to_json(const ReductionModel& model) {
  json j;
  j["format_version"] = 1;
  j["kind"] = "reduction";
  j["method"] = to_string(model.method);
  j["input_dim"] = model.input_dim;
  j["output_dim"] = model.output_dim;
  j["center"] = vec_to_json(model.center);
  j["eigenvalues"] = vec_to_json(model.eigenvalues);
  if (model.method != ReductionMethod::KPCA) j["basis"] = mat_to_json(model.basis);
  if (model.kernel_data) {
    const auto& kd = *model.kernel_data;
    json k;
    k["kernel"] = kd.kernel.type == KernelSpec::Type::Linear ? "linear" : "rbf";
    k["sigma"] = kd.kernel.sigma;
    k["n_train"] = kd.training.rows();
    k["training"] = mat_to_json(kd.training);
    k["dual"] = mat_to_json(kd.dual);
    k["column_means"] = vec_to_json(kd.column_means);
    k["grand_mean"] = kd.grand_mean;
    j["kernel_data"] = std::move(k);
  }
  if (model.dcv_params) {
    j["dcv_params"] = {{"mode", model.dcv_params->mode == DcvMode::ExactNull ? "exact_null" : "pseudo_null"},
                       {"variance_fraction", model.dcv_params->variance_fraction}};
  }
  return j.dump(1) + "\n";
}

ReductionModel model_from_json(const std::string& text) {
  ReductionModel m;
  try {
    json j = json::parse(text);
    if (j.at("format_version").get<int>() != 1) throw FormatError("unsupported reduction model format_version");
    auto method = parse_reduction_method(j.at("method").get<std::string>());
    if (!method) throw FormatError("unknown reduction method");
    m.method = *method;
    m.input_dim = j.at("input_dim").get<std::size_t>();
    m.output_dim = j.at("output_dim").get<std::size_t>();
    m.center = vec_from_json(j.at("center"));
    m.eigenvalues = vec_from_json(j.at("eigenvalues"));
    if (static_cast<std::size_t>(m.center.size()) != m.input_dim) throw FormatError("center length mismatch");
    if (m.method != ReductionMethod::KPCA) {
      m.basis = mat_from_json(j.at("basis"), m.input_dim, m.output_dim);
    } else {
      const auto& k = j.at("kernel_data");
      KernelData kd;
      kd.kernel.type = k.at("kernel").get<std::string>() == "linear" ? KernelSpec::Type::Linear : KernelSpec::Type::Rbf;
      kd.kernel.sigma = k.at("sigma").get<double>();
      const auto n = k.at("n_train").get<std::size_t>();
      kd.training = mat_from_json(k.at("training"), n, m.input_dim);
      kd.dual = mat_from_json(k.at("dual"), n, m.output_dim);
      kd.column_means = vec_from_json(k.at("column_means"));
      kd.grand_mean = k.at("grand_mean").get<double>();
      m.kernel_data = std::move(kd);
    }
    if (j.contains("dcv_params")) {
      DcvParams p;
      p.mode = j["dcv_params"].at("mode").get<std::string>() == "exact_null" ? DcvMode::ExactNull : DcvMode::PseudoNull;
      p.variance_fraction = j["dcv_params"].at("variance_fraction").get<double>();
      m.dcv_params = p;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("reduction model: {}", e.what()));
  }
  return m;
}

} // namespace cxr
