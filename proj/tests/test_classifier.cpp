#include "oracles.hpp"

#include "cxr/classifier.hpp"
#include "cxr/error.hpp"

#include <doctest.h>

using namespace cxr;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

LabeledMatrix two_clouds(int per, double gap, std::mt19937_64& rng, Eigen::Index d = 2) {
  std::normal_distribution<double> nd(0.0, 1.0);
  MatrixXd x(2 * per, d);
  std::vector<ClassLabel> labels;
  for (int i = 0; i < 2 * per; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = nd(rng);
    x(i, 0) += i < per ? gap : -gap;
    labels.push_back(i < per ? ClassLabel::COVID19 : ClassLabel::Normal);
  }
  return LabeledMatrix(x, labels);
}

MatrixXd gram(const MatrixXd& x, const SvmKernel& k) {
  MatrixXd g(x.rows(), x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.rows(); ++j) g(i, j) = k(x.row(i).transpose(), x.row(j).transpose());
  return g;
}

} // namespace

TEST_CASE("binary machine against the projected-gradient dual solver") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 4; ++trial) {
    // overlapping clouds so that both free and bounded multipliers appear
    LabeledMatrix data = two_clouds(15, 0.8, rng);
    for (SvmKernel kernel : {SvmKernel::linear(), SvmKernel::rbf(0.5)}) {
      SvmConfig cfg;
      cfg.kernel = kernel;
      cfg.C = 1.0;
      BinarySvm svm = fit_binary_svm(data, cfg);
      CHECK(svm.converged);
      VectorXd y(data.n());
      for (std::size_t i = 0; i < data.n(); ++i) y(static_cast<Eigen::Index>(i)) = data.labels()[i] == svm.positive ? 1.0 : -1.0;
      auto ref = oracle::solve_svm_dual(gram(data.rows(), kernel), y, cfg.C);
      CHECK(svm.dual_objective() == doctest::Approx(ref.objective).epsilon(1e-7));

      KktReport kkt = kkt_certificate(svm, data, cfg.tolerance);
      CHECK(kkt.holds);
      CHECK(kkt.equality_residual < 1e-9);
    }
  }
}

TEST_CASE("linear machine on separable data") {
  MatrixXd x(4, 2);
  x << 2, 0, 3, 1, -2, 0, -3, -1;
  LabeledMatrix data(x, {ClassLabel::COVID19, ClassLabel::COVID19, ClassLabel::Normal, ClassLabel::Normal});
  SvmConfig cfg;
  cfg.C = 100.0;
  BinarySvm svm = fit_binary_svm(data, cfg);
  // hard margin through (2,0) and (-2,0): w = (0.5, 0), b = 0
  CHECK(svm.decision(VectorXd::Zero(2)) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(svm.decision(Eigen::Vector2d(2, 0)) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(svm.decision(Eigen::Vector2d(-2, 5)) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(svm.support_vectors.rows() == 2);
}

TEST_CASE("one-vs-one on four blobs") {
  std::mt19937_64 rng(22);
  std::normal_distribution<double> nd(0.0, 0.3);
  const double cx[4] = {0, 5, 0, 5}, cy[4] = {0, 0, 5, 5};
  MatrixXd x(80, 2);
  std::vector<ClassLabel> labels;
  for (int i = 0; i < 80; ++i) {
    const int c = i / 20;
    x(i, 0) = cx[c] + nd(rng);
    x(i, 1) = cy[c] + nd(rng);
    labels.push_back(kAllClasses[static_cast<std::size_t>(c)]);
  }
  LabeledMatrix data(x, labels);
  SvmModel model = fit_multiclass(data, SvmConfig{});
  CHECK(model.machines.size() == 6);
  CHECK(model.all_converged());
  auto pred = predict_batch(model, x);
  CHECK(pred == data.labels());
  Prediction p = predict_detailed(model, Eigen::Vector2d(5, 5));
  CHECK(p.votes[3] == 3);
  CHECK(p.decision_values.size() == 6);
}

TEST_CASE("tie-break order") {
  // three classes on a line, each duel decided at the midpoint; build a
  // cyclic vote by hand-editing biases so every class wins exactly once
  MatrixXd x(6, 1);
  x << 0, 0.1, 10, 10.1, 20, 20.1;
  LabeledMatrix data(x, {ClassLabel::COVID19, ClassLabel::COVID19, ClassLabel::Normal, ClassLabel::Normal,
                         ClassLabel::PneumoniaNonCovid, ClassLabel::PneumoniaNonCovid});
  SvmModel model = fit_multiclass(data, SvmConfig{});
  REQUIRE(model.machines.size() == 3);
  for (auto& m : model.machines) {
    m.coefficients.setZero();
    m.bias = 0.0;
  }
  // machine 0 (c0 vs c1) -> c0 by 1, machine 1 (c0 vs c2) -> c2 by 1, machine 2 (c1 vs c2) -> c1 by 1
  model.machines[0].bias = 1.0;
  model.machines[1].bias = -1.0;
  model.machines[2].bias = 1.0;
  Prediction p = predict_detailed(model, VectorXd::Zero(1));
  CHECK(p.votes == std::vector<int>{1, 1, 1});
  CHECK(p.label == model.classes[0]); // equal margins fall back to class order

  model.machines[2].bias = 2.0; // c1 now wins with the larger margin
  CHECK(predict(model, VectorXd::Zero(1)) == model.classes[1]);
}

TEST_CASE("model JSON round-trip and configuration checks") {
  std::mt19937_64 rng(23);
  LabeledMatrix data = two_clouds(10, 1.5, rng, 3);
  SvmConfig cfg;
  cfg.kernel = SvmKernel::rbf(0.25);
  SvmModel model = fit_multiclass(data, cfg);
  const std::string js = svm_to_json(model);
  SvmModel back = svm_from_json(js);
  CHECK(svm_to_json(back) == js);
  for (std::size_t i = 0; i < data.n(); ++i) {
    const VectorXd row = data.rows().row(static_cast<Eigen::Index>(i)).transpose();
    CHECK(predict_detailed(back, row).decision_values == predict_detailed(model, row).decision_values);
  }

  SvmConfig bad;
  bad.C = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
  bad = SvmConfig{};
  bad.tolerance = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
  LabeledMatrix one(MatrixXd::Ones(3, 2), std::vector<ClassLabel>(3, ClassLabel::Normal));
  CHECK_THROWS(fit_multiclass(one, SvmConfig{}));
}
