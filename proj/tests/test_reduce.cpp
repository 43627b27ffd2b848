#include "oracles.hpp"

#include "cxr/error.hpp"
#include "cxr/reduce.hpp"

#include <doctest.h>

#include <set>

using namespace cxr;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd gaussian(Eigen::Index n, Eigen::Index d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = nd(rng);
  return m;
}

// Blobs around random centres; `per` rows per class.
LabeledMatrix blobs(int classes, int per, Eigen::Index d, double sep, std::mt19937_64& rng) {
  MatrixXd x = gaussian(classes * per, d, rng);
  MatrixXd centers = gaussian(classes, d, rng, sep);
  std::vector<ClassLabel> labels;
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per; ++i) {
      x.row(c * per + i) += centers.row(c);
      labels.push_back(kAllClasses[static_cast<std::size_t>(c)]);
    }
  return LabeledMatrix(x, labels);
}

// Distance between two column spaces: norm of the projector difference.
double subspace_distance(const MatrixXd& a, const MatrixXd& b) {
  if (a.cols() != b.cols()) return 1.0;
  MatrixXd qa = Eigen::HouseholderQR<MatrixXd>(a).householderQ() * MatrixXd::Identity(a.rows(), a.cols());
  MatrixXd qb = Eigen::HouseholderQR<MatrixXd>(b).householderQ() * MatrixXd::Identity(b.rows(), b.cols());
  return (qa * qa.transpose() - qb * qb.transpose()).norm();
}

} // namespace

TEST_CASE("PCA against a direct covariance eigendecomposition") {
  std::mt19937_64 rng(1);
  MatrixXd x = gaussian(40, 12, rng);
  for (Eigen::Index j = 0; j < 12; ++j) x.col(j) *= 1.0 + static_cast<double>(j);
  LabeledMatrix data(x, std::vector<ClassLabel>(40, ClassLabel::Normal));
  ReductionModel m = fit_pca(data, 1.0);
  REQUIRE(m.output_dim == 12);

  MatrixXd xc = x.rowwise() - x.colwise().mean();
  MatrixXd cov = xc.transpose() * xc / 39.0;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  for (Eigen::Index j = 0; j < 12; ++j) {
    CHECK(m.eigenvalues(j) == doctest::Approx(es.eigenvalues()(11 - j)).epsilon(1e-10));
    CHECK(std::abs(std::abs(m.basis.col(j).dot(es.eigenvectors().col(11 - j))) - 1.0) < 1e-8);
  }
}

TEST_CASE("PCA properties") {
  std::mt19937_64 rng(2);
  SUBCASE("plane in 10D") {
    MatrixXd coeffs = gaussian(30, 2, rng), dirs = gaussian(2, 10, rng);
    MatrixXd x = coeffs * dirs;
    x.rowwise() += gaussian(1, 10, rng).row(0);
    LabeledMatrix data(x, std::vector<ClassLabel>(30, ClassLabel::Normal));
    ReductionModel m = fit_pca(data, 0.99);
    CHECK(m.output_dim == 2);
    for (Eigen::Index i = 0; i < 30; ++i) {
      VectorXd back = reconstruct(m, project(m, x.row(i).transpose()));
      CHECK((back - x.row(i).transpose()).norm() < 1e-9);
    }
    CHECK(project(m, m.center).norm() < 1e-12);
  }
  SUBCASE("full variance preserves distances") {
    MatrixXd x = gaussian(15, 6, rng);
    LabeledMatrix data(x, std::vector<ClassLabel>(15, ClassLabel::Normal));
    ReductionModel m = fit_pca(data, 1.0);
    MatrixXd y = project_rows(m, x);
    for (Eigen::Index i = 0; i < 15; ++i)
      for (Eigen::Index j = 0; j < 15; ++j)
        CHECK(std::abs((y.row(i) - y.row(j)).norm() - (x.row(i) - x.row(j)).norm()) < 1e-8);
    // projected covariance is diagonal, non-increasing
    MatrixXd cov = y.transpose() * y / 14.0;
    for (Eigen::Index a = 0; a < cov.rows(); ++a)
      for (Eigen::Index b = 0; b < cov.cols(); ++b)
        if (a != b) CHECK(std::abs(cov(a, b)) < 1e-8);
    for (Eigen::Index a = 1; a < cov.rows(); ++a) CHECK(cov(a, a) <= cov(a - 1, a - 1) + 1e-12);
  }
  SUBCASE("wide matrix through the Gram route is orthonormal") {
    MatrixXd x = gaussian(50, 5625, rng);
    LabeledMatrix data(x, std::vector<ClassLabel>(50, ClassLabel::Normal));
    ReductionModel m = fit_pca(data, 0.95);
    MatrixXd gram = m.basis.transpose() * m.basis;
    CHECK((gram - MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((project_rows(m, x) - m.training_embedding).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("residual equals the discarded eigenvalue mass") {
    MatrixXd x = gaussian(25, 8, rng);
    LabeledMatrix data(x, std::vector<ClassLabel>(25, ClassLabel::Normal));
    ReductionModel m = fit_pca(data, 0.7);
    MatrixXd xc = x.rowwise() - x.colwise().mean();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(xc.transpose() * xc / 24.0);
    double discarded = 0.0;
    for (Eigen::Index j = 0; j < 8 - static_cast<Eigen::Index>(m.output_dim); ++j) discarded += es.eigenvalues()(j);
    double residual = 0.0;
    for (Eigen::Index i = 0; i < 25; ++i)
      residual += (reconstruct(m, project(m, x.row(i).transpose())) - x.row(i).transpose()).squaredNorm();
    CHECK(residual / 24.0 == doctest::Approx(discarded).epsilon(1e-9));
  }
  SUBCASE("zero variance") {
    MatrixXd x = MatrixXd::Ones(5, 3);
    CHECK_THROWS_AS(fit_pca(LabeledMatrix(x, std::vector<ClassLabel>(5, ClassLabel::Normal)), 0.9), DegenerateDataError);
  }
}

TEST_CASE("KPCA") {
  std::mt19937_64 rng(3);
  SUBCASE("RBF projection of training points matches the embedding") {
    MatrixXd x = gaussian(30, 4, rng);
    LabeledMatrix data(x, std::vector<ClassLabel>(30, ClassLabel::Normal));
    ReductionModel m = fit_kpca(data, KernelSpec::rbf(), 5);
    CHECK((project_rows(m, x) - m.training_embedding).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(m.kernel_data->kernel.sigma > 0.0);
  }
  SUBCASE("concentric rings separate on the first component") {
    // brute-force reference: eigenvectors of the double-centred kernel matrix
    const int n = 60;
    MatrixXd x(n, 2);
    std::vector<ClassLabel> labels;
    for (int i = 0; i < n; ++i) {
      const double r = i < n / 2 ? 1.0 : 4.0;
      const double t = 2.0 * 3.14159265358979323846 * (i % (n / 2)) / (n / 2);
      x(i, 0) = r * std::cos(t);
      x(i, 1) = r * std::sin(t);
      labels.push_back(i < n / 2 ? ClassLabel::COVID19 : ClassLabel::Normal);
    }
    LabeledMatrix data(x, labels);
    ReductionModel m = fit_kpca(data, KernelSpec::rbf(1.0), 2);
    MatrixXd k(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) k(i, j) = std::exp(-(x.row(i) - x.row(j)).squaredNorm() / 2.0);
    MatrixXd h = MatrixXd::Identity(n, n) - MatrixXd::Constant(n, n, 1.0 / n);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(h * k * h);
    VectorXd ref = es.eigenvectors().col(n - 1) * std::sqrt(es.eigenvalues()(n - 1));
    VectorXd ours = m.training_embedding.col(0);
    CHECK(std::abs(std::abs(ours.dot(ref)) - ref.squaredNorm()) < 1e-6 * ref.squaredNorm());
    // a single threshold splits the rings
    double inner_max = -1e300, inner_min = 1e300, outer_max = -1e300, outer_min = 1e300;
    for (int i = 0; i < n; ++i) {
      if (i < n / 2) {
        inner_max = std::max(inner_max, ours(i));
        inner_min = std::min(inner_min, ours(i));
      } else {
        outer_max = std::max(outer_max, ours(i));
        outer_min = std::min(outer_min, ours(i));
      }
    }
    CHECK((inner_max < outer_min || outer_max < inner_min));
  }
  SUBCASE("component count is bounded") {
    MatrixXd x = gaussian(6, 3, rng);
    LabeledMatrix data(x, std::vector<ClassLabel>(6, ClassLabel::Normal));
    CHECK_THROWS_AS(fit_kpca(data, KernelSpec::linear(), 6), ConfigurationError);
    // 3 features: the centred linear kernel has rank 3
    CHECK_THROWS_AS(fit_kpca(data, KernelSpec::linear(), 5), RankError);
  }
}

TEST_CASE("LDA") {
  std::mt19937_64 rng(4);
  SUBCASE("two Gaussian blobs in 2D against the closed-form Fisher direction") {
    LabeledMatrix data = blobs(2, 100, 2, 8.0, rng);
    ReductionModel m = fit_lda(data, 0.0);
    REQUIRE(m.output_dim == 1);
    const MatrixXd& x = data.rows();
    VectorXd mu0 = x.topRows(100).colwise().mean().transpose(), mu1 = x.bottomRows(100).colwise().mean().transpose();
    MatrixXd c0 = x.topRows(100).rowwise() - mu0.transpose(), c1 = x.bottomRows(100).rowwise() - mu1.transpose();
    MatrixXd sw = c0.transpose() * c0 + c1.transpose() * c1;
    VectorXd w = sw.ldlt().solve(mu1 - mu0).normalized();
    CHECK(std::abs(std::abs(w.dot(m.basis.col(0))) - 1.0) < 1e-9);
    VectorXd y = m.training_embedding.col(0);
    const double gap = std::abs(y.head(100).mean() - y.tail(100).mean());
    const double pooled = std::sqrt(((y.head(100).array() - y.head(100).mean()).square().sum() +
                                     (y.tail(100).array() - y.tail(100).mean()).square().sum()) / 198.0);
    CHECK(gap > 5.0 * pooled);
  }
  SUBCASE("C-1 components and permutation invariance") {
    LabeledMatrix data = blobs(4, 8, 60, 3.0, rng);
    ReductionModel m = fit_lda(data, 1e-3);
    CHECK(m.output_dim == 3);
    std::vector<std::size_t> perm(data.n());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ReductionModel p = fit_lda(data.subset(perm), 1e-3);
    CHECK(subspace_distance(m.basis, p.basis) < 1e-8);
  }
  SUBCASE("singular scatter without regularisation") {
    LabeledMatrix data = blobs(3, 3, 40, 3.0, rng); // n - C < rank of the pre-projection
    CHECK_THROWS_AS(fit_lda(data, 0.0), SingularityError);
  }
  SUBCASE("single class") {
    LabeledMatrix data(gaussian(5, 3, rng), std::vector<ClassLabel>(5, ClassLabel::Normal));
    CHECK_THROWS_AS(fit_lda(data, 1e-3), DegenerateDataError);
  }
}

TEST_CASE("DCV") {
  std::mt19937_64 rng(5);
  SUBCASE("exact-null collapse against the explicit null-space oracle") {
    LabeledMatrix data = blobs(3, 6, 80, 2.0, rng);
    ReductionModel m = fit_dcv(data, {DcvMode::ExactNull, 0.8});
    CHECK(m.output_dim == 2);
    std::vector<int> labels;
    for (auto l : data.labels()) labels.push_back(class_index(l));
    auto ref = oracle::null_space_common_vectors(data.rows(), labels);
    const MatrixXd& y = m.training_embedding;
    for (int c = 0; c < 3; ++c)
      for (int i = 1; i < 6; ++i) CHECK((y.row(c * 6 + i) - y.row(c * 6)).norm() < 1e-8);
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b) {
        const double ours = (y.row(a * 6) - y.row(b * 6)).norm();
        const double theirs = (ref.common.at(a) - ref.common.at(b)).norm();
        CHECK(ours == doctest::Approx(theirs).epsilon(1e-8));
      }
    MatrixXd gram = m.basis.transpose() * m.basis;
    CHECK((gram - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("repeated samples per class") {
    MatrixXd protos = gaussian(4, 30, rng);
    MatrixXd x(12, 30);
    std::vector<ClassLabel> labels;
    for (int i = 0; i < 12; ++i) {
      x.row(i) = protos.row(i / 3);
      labels.push_back(kAllClasses[static_cast<std::size_t>(i / 3)]);
    }
    LabeledMatrix data(x, labels);
    ReductionModel m = fit_dcv(data, {DcvMode::ExactNull, 0.8});
    CHECK(m.output_dim == 3);
    // nearest common vector classifies every training sample
    for (int i = 0; i < 12; ++i) {
      int best = -1;
      double best_d = 1e300;
      for (int c = 0; c < 4; ++c) {
        const double dd = (m.training_embedding.row(i) - m.training_embedding.row(c * 3)).norm();
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      CHECK(best == i / 3);
    }
  }
  SUBCASE("pseudo-null mode keeps at most C-1 dims and is permutation invariant") {
    LabeledMatrix data = blobs(4, 10, 200, 1.5, rng);
    ReductionModel m = fit_dcv(data, {DcvMode::PseudoNull, 0.8});
    CHECK(m.output_dim <= 3);
    std::vector<std::size_t> perm(data.n());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    ReductionModel p = fit_dcv(data.subset(perm), {DcvMode::PseudoNull, 0.8});
    CHECK(subspace_distance(m.basis, p.basis) < 1e-8);
  }
  SUBCASE("errors") {
    LabeledMatrix one(gaussian(5, 10, rng), std::vector<ClassLabel>(5, ClassLabel::Normal));
    CHECK_THROWS_AS(fit_dcv(one, {}), DegenerateDataError);
    // 2D data, many samples: Sw has full rank and no null space remains
    LabeledMatrix tall = blobs(2, 20, 2, 3.0, rng);
    CHECK_THROWS_AS(fit_dcv(tall, {DcvMode::ExactNull, 0.8}), EmptyNullSpaceError);
  }
}

TEST_CASE("point clouds and separability") {
  std::mt19937_64 rng(6);
  LabeledMatrix train = blobs(4, 6, 40, 4.0, rng), test = blobs(4, 2, 40, 4.0, rng);
  ReductionModel m = fit_pca(train, 0.99);
  PointCloud tr = top_components(m, embed(m, train, false), 3);
  PointCloud te = top_components(m, embed(m, test, true), 3);
  PointCloud both = tr;
  both.rows.insert(both.rows.end(), te.rows.begin(), te.rows.end());
  CHECK(both.legend_labels().size() == 8);
  CHECK(tr.legend_labels().size() == 4);
  CHECK(te.rows.front().legend_label().ends_with("TS"));

  ReductionModel lda = fit_lda(train, 1e-3);
  PointCloud wide = top_components(lda, embed(lda, train, false), 5);
  CHECK(wide.n_components == 3);
  CHECK(wide.warnings.size() == 1);

  const std::string csv = point_cloud_to_csv(tr);
  CHECK(csv.substr(0, csv.find('\n')) == "sample_id,label,split,c1,c2,c3");

  // collapsed classes have zero intra-class distance
  MatrixXd protos = gaussian(2, 20, rng);
  MatrixXd x(4, 20);
  x << protos.row(0), protos.row(0), protos.row(1), protos.row(1);
  LabeledMatrix twin(x, {ClassLabel::COVID19, ClassLabel::COVID19, ClassLabel::Normal, ClassLabel::Normal});
  ReductionModel dcv = fit_dcv(twin, {DcvMode::ExactNull, 0.8});
  CHECK_FALSE(separability_index(top_components(dcv, embed(dcv, twin, false), 1)).has_value());
  auto sep = separability_index(tr);
  REQUIRE(sep.has_value());
  CHECK(*sep > 1.0);
}

TEST_CASE("model files round-trip") {
  std::mt19937_64 rng(7);
  LabeledMatrix data = blobs(3, 5, 20, 3.0, rng);
  MatrixXd probe = gaussian(4, 20, rng);
  std::vector<ReductionModel> models = {fit_pca(data, 0.9), fit_kpca(data, KernelSpec::rbf(), 3), fit_lda(data, 1e-3),
                                        fit_dcv(data, {DcvMode::PseudoNull, 0.8})};
  for (const auto& m : models) {
    const std::string js = model_to_json(m);
    ReductionModel back = model_from_json(js);
    CHECK(back.method == m.method);
    CHECK(back.output_dim == m.output_dim);
    CHECK(project_rows(back, probe) == project_rows(m, probe));
    CHECK(model_to_json(back) == js);
  }
  CHECK_THROWS_AS(model_from_json("{\"format_version\": 2}"), FormatError);
}
