#include "cxr/classifier.hpp"

#include "cxr/error.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace cxr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double SvmKernel::operator()(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b) const {
  if (type == Type::Linear) return a.dot(b);
  return std::exp(-gamma * (a - b).squaredNorm());
}

void SvmConfig::validate() const {
  if (!(C > 0.0)) throw ConfigurationError(fmt::format("SVM C must be positive, got {}", C));
  if (!(tolerance > 0.0)) throw ConfigurationError(fmt::format("SVM tolerance must be positive, got {}", tolerance));
  if (!(solver_epsilon > 0.0)) throw ConfigurationError("SVM solver_epsilon must be positive");
  if (max_passes == 0) throw ConfigurationError("SVM max_passes must be positive");
  if (kernel.type == SvmKernel::Type::Rbf && !(kernel.gamma > 0.0))
    throw ConfigurationError(fmt::format("RBF gamma must be positive, got {}", kernel.gamma));
}

double BinarySvm::decision(const Eigen::Ref<const VectorXd>& x) const {
  double f = bias;
  if (kernel.type == SvmKernel::Type::Linear) {
    // w = sum coef_i sv_i
    f += (support_vectors.transpose() * coefficients).dot(x);
    return f;
  }
  for (Eigen::Index i = 0; i < support_vectors.rows(); ++i)
    f += coefficients(i) * kernel(support_vectors.row(i).transpose(), x);
  return f;
}

double BinarySvm::dual_objective() const {
  const auto m = support_vectors.rows();
  MatrixXd k(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) k(i, j) = k(j, i) = kernel(support_vectors.row(i).transpose(), support_vectors.row(j).transpose());
  return coefficients.cwiseAbs().sum() - 0.5 * coefficients.dot(k * coefficients);
}

namespace {

bool is_upper(double a, double c) { return a >= c; }
bool is_lower(double a) { return a <= 0.0; }

} // namespace

BinarySvm fit_binary_svm(const LabeledMatrix& x, const SvmConfig& config) {
  config.validate();
  const auto& groups = x.class_index();
  if (groups.size() != 2)
    throw ConfigurationError(fmt::format("binary SVM needs exactly 2 classes, got {}", groups.size()));

  BinarySvm svm;
  svm.positive = groups.begin()->first;
  svm.negative = std::next(groups.begin())->first;
  svm.kernel = config.kernel;
  svm.C = config.C;

  const auto n = static_cast<Eigen::Index>(x.n());
  const MatrixXd& data = x.rows();
  VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = x.labels()[static_cast<std::size_t>(i)] == svm.positive ? 1.0 : -1.0;

  MatrixXd k(n, n);
  if (config.kernel.type == SvmKernel::Type::Linear) {
    k = data * data.transpose();
  } else {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j <= i; ++j) k(i, j) = k(j, i) = config.kernel(data.row(i).transpose(), data.row(j).transpose());
  }

  const double c = config.C;
  VectorXd alpha = VectorXd::Zero(n);
  VectorXd grad = VectorXd::Constant(n, -1.0); // Q alpha - e

  const std::size_t budget = config.max_passes * static_cast<std::size_t>(n);
  std::size_t iter = 0;
  bool converged = false;
  while (true) {
    // maximal violating pair; first index wins ties
    Eigen::Index i = -1, j = -1;
    double gmax = -std::numeric_limits<double>::infinity();
    double gmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      const double v = -y(t) * grad(t);
      const bool up = (y(t) > 0) ? !is_upper(alpha(t), c) : !is_lower(alpha(t));
      const bool low = (y(t) > 0) ? !is_lower(alpha(t)) : !is_upper(alpha(t), c);
      if (up && v > gmax) {
        gmax = v;
        i = t;
      }
      if (low && v < gmin) {
        gmin = v;
        j = t;
      }
    }
    if (i < 0 || j < 0 || gmax - gmin <= config.solver_epsilon) {
      converged = true;
      break;
    }
    if (iter >= budget) break;
    ++iter;

    double eta = k(i, i) + k(j, j) - 2.0 * k(i, j);
    if (eta <= 0.0) eta = 1e-12;
    double step = (gmax - gmin) / eta;
    // alpha_i += y_i * step, alpha_j -= y_j * step
    const double room_i = y(i) > 0 ? c - alpha(i) : alpha(i);
    const double room_j = y(j) > 0 ? alpha(j) : c - alpha(j);
    step = std::min({step, room_i, room_j});
    const double old_i = alpha(i), old_j = alpha(j);
    alpha(i) = old_i + y(i) * step;
    alpha(j) = old_j - y(j) * step;
    // land exactly on the box when a bound was hit
    if (step == room_i) alpha(i) = y(i) > 0 ? c : 0.0;
    if (step == room_j) alpha(j) = y(j) > 0 ? 0.0 : c;
    alpha(i) = std::clamp(alpha(i), 0.0, c);
    alpha(j) = std::clamp(alpha(j), 0.0, c);

    const double di = alpha(i) - old_i, dj = alpha(j) - old_j;
    for (Eigen::Index t = 0; t < n; ++t) grad(t) += y(t) * (y(i) * k(t, i) * di + y(j) * k(t, j) * dj);
  }

  // rho from free vectors, or the midpoint of the feasible interval
  double ub = std::numeric_limits<double>::infinity(), lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  std::size_t n_free = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = y(t) * grad(t);
    if (is_upper(alpha(t), c)) {
      if (y(t) < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (is_lower(alpha(t))) {
      if (y(t) > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  double rho;
  if (n_free > 0) rho = sum_free / static_cast<double>(n_free);
  else if (std::isfinite(ub) && std::isfinite(lb)) rho = 0.5 * (ub + lb);
  else rho = std::isfinite(ub) ? ub : lb;
  svm.bias = -rho;

  std::vector<Eigen::Index> sv;
  for (Eigen::Index t = 0; t < n; ++t)
    if (alpha(t) > 0.0) sv.push_back(t);
  svm.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), data.cols());
  svm.coefficients.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t s = 0; s < sv.size(); ++s) {
    svm.support_vectors.row(static_cast<Eigen::Index>(s)) = data.row(sv[s]);
    svm.coefficients(static_cast<Eigen::Index>(s)) = alpha(sv[s]) * y(sv[s]);
    svm.support_indices.push_back(static_cast<std::size_t>(sv[s]));
  }
  svm.converged = converged;
  svm.iterations = iter;
  return svm;
}

KktReport kkt_certificate(const BinarySvm& svm, const LabeledMatrix& training, double tolerance) {
  KktReport rep;
  const auto n = training.n();
  std::vector<double> alpha(n, 0.0);
  for (std::size_t s = 0; s < svm.support_indices.size(); ++s) {
    const auto idx = svm.support_indices[s];
    if (idx >= n) throw ShapeError("support index outside the training matrix");
    alpha[idx] = std::abs(svm.coefficients(static_cast<Eigen::Index>(s)));
    rep.equality_residual += svm.coefficients(static_cast<Eigen::Index>(s));
  }
  rep.equality_residual = std::abs(rep.equality_residual);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = training.labels()[i];
    if (label != svm.positive && label != svm.negative) continue;
    const double yv = label == svm.positive ? 1.0 : -1.0;
    const double margin = yv * svm.decision(training.rows().row(static_cast<Eigen::Index>(i)).transpose());
    double excess = 0.0;
    if (alpha[i] < 0.0 || alpha[i] > svm.C) excess = std::numeric_limits<double>::infinity();
    else if (alpha[i] == 0.0) excess = (1.0 - tolerance) - margin;
    else if (alpha[i] == svm.C) excess = margin - (1.0 + tolerance);
    else excess = std::abs(margin - 1.0) - tolerance;
    if (excess > 0.0) {
      rep.holds = false;
      rep.max_violation = std::max(rep.max_violation, excess);
    }
  }
  return rep;
}

bool SvmModel::all_converged() const {
  return std::all_of(machines.begin(), machines.end(), [](const BinarySvm& m) { return m.converged; });
}

SvmModel fit_multiclass(const LabeledMatrix& x, const SvmConfig& config) {
  config.validate();
  SvmModel model;
  model.classes = x.classes();
  model.input_dim = x.dim();
  if (model.classes.size() < 2) throw ConfigurationError("multiclass SVM needs at least 2 classes");
  const auto& groups = x.class_index();
  for (std::size_t a = 0; a < model.classes.size(); ++a) {
    for (std::size_t b = a + 1; b < model.classes.size(); ++b) {
      std::vector<std::size_t> idx;
      const auto& ia = groups.at(model.classes[a]);
      const auto& ib = groups.at(model.classes[b]);
      std::merge(ia.begin(), ia.end(), ib.begin(), ib.end(), std::back_inserter(idx));
      auto machine = fit_binary_svm(x.subset(idx), config);
      // map support indices back to rows of x
      for (auto& s : machine.support_indices) s = idx[s];
      model.machines.push_back(std::move(machine));
    }
  }
  return model;
}

Prediction predict_detailed(const SvmModel& model, const Eigen::Ref<const VectorXd>& x) {
  if (static_cast<std::size_t>(x.size()) != model.input_dim)
    throw ShapeError(fmt::format("SVM expects {} features, got {}", model.input_dim, x.size()));
  const std::size_t nc = model.classes.size();
  Prediction p;
  p.votes.assign(nc, 0);
  std::vector<double> strength(nc, 0.0);
  auto slot = [&](ClassLabel c) {
    return static_cast<std::size_t>(std::find(model.classes.begin(), model.classes.end(), c) - model.classes.begin());
  };
  for (const auto& m : model.machines) {
    const double f = m.decision(x);
    p.decision_values.push_back(f);
    const std::size_t winner = f >= 0.0 ? slot(m.positive) : slot(m.negative);
    ++p.votes[winner];
    strength[winner] += std::abs(f);
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < nc; ++c) {
    if (p.votes[c] > p.votes[best] || (p.votes[c] == p.votes[best] && strength[c] > strength[best])) best = c;
  }
  p.label = model.classes[best];
  return p;
}

ClassLabel predict(const SvmModel& model, const Eigen::Ref<const VectorXd>& x) { return predict_detailed(model, x).label; }

std::vector<ClassLabel> predict_batch(const SvmModel& model, const MatrixXd& rows) {
  std::vector<ClassLabel> out;
  out.reserve(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index i = 0; i < rows.rows(); ++i) out.push_back(predict(model, rows.row(i).transpose()));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

using json = nlohmann::ordered_json;

json kernel_json(const SvmKernel& k) {
  if (k.type == SvmKernel::Type::Linear) return {{"type", "linear"}};
  return {{"type", "rbf"}, {"gamma", k.gamma}};
}

SvmKernel kernel_from(const json& j) {
  const auto t = j.at("type").get<std::string>();
  if (t == "linear") return SvmKernel::linear();
  if (t == "rbf") return SvmKernel::rbf(j.at("gamma").get<double>());
  throw FormatError(fmt::format("unknown SVM kernel '{}'", t));
}

ClassLabel label_from(const json& j) {
  auto l = parse_class_label(j.get<std::string>());
  if (!l) throw FormatError("unknown class label in SVM model");
  return *l;
}

} // namespace

std::string svm_to_json(const SvmModel& model) {
  json j;
  j["format_version"] = 1;
  j["kind"] = "svm";
  j["input_dim"] = model.input_dim;
  j["tie_break"] = model.tie_break;
  json classes = json::array();
  for (auto c : model.classes) classes.push_back(std::string(to_token(c)));
  j["classes"] = std::move(classes);
  json machines = json::array();
  for (const auto& m : model.machines) {
    json mj;
    mj["positive"] = std::string(to_token(m.positive));
    mj["negative"] = std::string(to_token(m.negative));
    mj["kernel"] = kernel_json(m.kernel);
    mj["C"] = m.C;
    mj["bias"] = m.bias;
    mj["converged"] = m.converged;
    mj["iterations"] = m.iterations;
    json sv = json::array(), coef = json::array();
    for (Eigen::Index i = 0; i < m.support_vectors.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index c = 0; c < m.support_vectors.cols(); ++c) row.push_back(m.support_vectors(i, c));
      sv.push_back(std::move(row));
      coef.push_back(m.coefficients(i));
    }
    mj["support_vectors"] = std::move(sv);
    mj["coefficients"] = std::move(coef);
    mj["support_indices"] = m.support_indices;
    machines.push_back(std::move(mj));
  }
  j["machines"] = std::move(machines);
  return j.dump(1) + "\n";
}

SvmModel svm_from_json(const std::string& text) {
  SvmModel model;
  try {
    json j = json::parse(text);
    if (j.at("format_version").get<int>() != 1) throw FormatError("unsupported SVM format_version");
    model.input_dim = j.at("input_dim").get<std::size_t>();
    model.tie_break = j.at("tie_break").get<std::string>();
    for (const auto& c : j.at("classes")) model.classes.push_back(label_from(c));
    for (const auto& mj : j.at("machines")) {
      BinarySvm m;
      m.positive = label_from(mj.at("positive"));
      m.negative = label_from(mj.at("negative"));
      m.kernel = kernel_from(mj.at("kernel"));
      m.C = mj.at("C").get<double>();
      m.bias = mj.at("bias").get<double>();
      m.converged = mj.at("converged").get<bool>();
      m.iterations = mj.at("iterations").get<std::size_t>();
      const auto& sv = mj.at("support_vectors");
      const auto& coef = mj.at("coefficients");
      if (sv.size() != coef.size()) throw FormatError("support vector / coefficient count mismatch");
      m.support_vectors.resize(static_cast<Eigen::Index>(sv.size()), static_cast<Eigen::Index>(model.input_dim));
      m.coefficients.resize(static_cast<Eigen::Index>(sv.size()));
      for (std::size_t i = 0; i < sv.size(); ++i) {
        if (sv[i].size() != model.input_dim) throw FormatError("support vector width mismatch");
        for (std::size_t c = 0; c < model.input_dim; ++c)
          m.support_vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = sv[i][c].get<double>();
        m.coefficients(static_cast<Eigen::Index>(i)) = coef[i].get<double>();
      }
      m.support_indices = mj.at("support_indices").get<std::vector<std::size_t>>();
      model.machines.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("SVM model: {}", e.what()));
  }
  const auto nc = model.classes.size();
  if (model.machines.size() != nc * (nc - 1) / 2) throw FormatError("SVM model has the wrong number of machines");
  return model;
}

} // namespace cxr
