#include "cxr/experiments.hpp"

#include "cxr/csv.hpp"
#include "cxr/error.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

namespace cxr {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string to_string(ExperimentId id) {
  switch (id) {
  case ExperimentId::ReductionCompare: return "reduce-compare";
  case ExperimentId::CellSizeSweep: return "cellsize";
  case ExperimentId::SoAConfigs: return "soa";
  case ExperimentId::EarlyDetection: return "early";
  }
  return "?";
}

std::optional<ExperimentId> parse_experiment_id(std::string_view s) {
  for (auto id : {ExperimentId::ReductionCompare, ExperimentId::CellSizeSweep, ExperimentId::SoAConfigs,
                  ExperimentId::EarlyDetection})
    if (to_string(id) == s) return id;
  return std::nullopt;
}

std::vector<ClassLabel> classes_of(ClassConfig cfg) {
  using enum ClassLabel;
  switch (cfg) {
  case ClassConfig::CovidVsNormal: return {COVID19, Normal};
  case ClassConfig::CovidVsPneumonia: return {COVID19, PneumoniaNonCovid};
  case ClassConfig::CovidVsPneumoniaVsNormal: return {COVID19, PneumoniaNonCovid, Normal};
  case ClassConfig::AllFour: return {kAllClasses.begin(), kAllClasses.end()};
  }
  return {};
}

std::string to_string(ClassConfig cfg) {
  std::string s;
  for (auto c : classes_of(cfg)) {
    if (!s.empty()) s += '/';
    s += display_name(c);
  }
  return s;
}

HogConfig ExperimentSpec::hog(std::size_t cell) const {
  return HogConfig{cell, n_bins, orientation_range, cell_normalization};
}

// ---------------------------------------------------------------------------
// Spec (de)serialisation

std::string spec_to_json(const ExperimentSpec& s) {
  json j;
  j["experiment"] = to_string(s.experiment);
  j["manifest"] = s.manifest.empty() ? std::string() : fs::absolute(s.manifest).lexically_normal().generic_string();
  j["image_size"] = {s.image_size.rows, s.image_size.cols};
  j["hog"] = {{"cell_sizes", s.cell_sizes},
              {"n_bins", s.n_bins},
              {"orientation_range", to_string(s.orientation_range)},
              {"cell_normalization", to_string(s.cell_normalization)}};
  j["reduction_cell_size"] = s.reduction_cell_size;
  j["selected_cell_size"] = s.selected_cell_size;
  j["train_fraction"] = s.train_fraction;
  json kernel = s.reduction.kpca_kernel.type == KernelSpec::Type::Linear
                    ? json{{"type", "linear"}}
                    : json{{"type", "rbf"}, {"sigma", s.reduction.kpca_kernel.sigma}};
  j["reduction"] = {{"pca_variance", s.reduction.pca_variance},
                    {"kpca_components", s.reduction.kpca_components},
                    {"kpca_kernel", kernel},
                    {"lda_regularization", s.reduction.lda_regularization},
                    {"dcv",
                     {{"mode", s.reduction.dcv.mode == DcvMode::ExactNull ? "exact_null" : "pseudo_null"},
                      {"variance_fraction", s.reduction.dcv.variance_fraction}}}};
  json svm_kernel = s.svm.kernel.type == SvmKernel::Type::Linear ? json{{"type", "linear"}}
                                                                 : json{{"type", "rbf"}, {"gamma", s.svm.kernel.gamma}};
  j["svm"] = {{"kernel", svm_kernel},
              {"C", s.svm.C},
              {"tolerance", s.svm.tolerance},
              {"max_passes", s.svm.max_passes},
              {"solver_epsilon", s.svm.solver_epsilon}};
  j["k"] = s.k;
  j["balance_per_class"] = s.balance_per_class ? json(*s.balance_per_class) : json(nullptr);
  j["positive_class"] = std::string(to_token(s.positive_class));
  j["seed"] = s.seed;
  j["out"] = s.out_dir.empty() ? std::string() : fs::absolute(s.out_dir).lexically_normal().generic_string();
  j["jobs"] = s.jobs;
  return j.dump(2) + "\n";
}

namespace {

// Reads optional typed fields, recording "path: problem" diagnostics.
class FieldReader {
public:
  explicit FieldReader(std::vector<std::string>& errors) : errors_(errors) {}

  template <class T>
  void read(const json& obj, const char* key, const std::string& path, T& dst) {
    if (!obj.contains(key) || obj[key].is_null()) return;
    const auto& v = obj[key];
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw std::invalid_argument("expected a number");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0))
          throw std::invalid_argument("expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw std::invalid_argument("expected a string");
      }
      dst = v.get<T>();
    } catch (const std::exception& e) {
      errors_.push_back(fmt::format("{}: {}", path, e.what()));
    }
  }

  void error(const std::string& path, const std::string& msg) { errors_.push_back(fmt::format("{}: {}", path, msg)); }

private:
  std::vector<std::string>& errors_;
};

} // namespace

ExperimentSpec spec_from_json(const std::string& text, std::vector<std::string>& errors, bool require_seed) {
  ExperimentSpec s;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    errors.push_back(fmt::format("<document>: {}", e.what()));
    return s;
  }
  if (!j.is_object()) {
    errors.push_back("<document>: expected a JSON object");
    return s;
  }
  FieldReader rd(errors);

  static const std::set<std::string> known = {"experiment",  "manifest", "image_size", "hog",
                                              "reduction_cell_size", "selected_cell_size", "train_fraction",
                                              "reduction",   "svm",      "k",          "balance_per_class",
                                              "positive_class", "seed",  "out",        "jobs"};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) rd.error(key, "unknown field");

  std::string text_field;
  if (j.contains("experiment")) {
    rd.read(j, "experiment", "experiment", text_field);
    if (auto id = parse_experiment_id(text_field)) s.experiment = *id;
    else if (!text_field.empty()) rd.error("experiment", fmt::format("unknown experiment '{}'", text_field));
  }
  std::string manifest;
  rd.read(j, "manifest", "manifest", manifest);
  s.manifest = manifest;
  if (j.contains("image_size")) {
    const auto& v = j["image_size"];
    if (v.is_array() && v.size() == 2 && v[0].is_number_unsigned() && v[1].is_number_unsigned())
      s.image_size = {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
    else rd.error("image_size", "expected [rows, cols] of positive integers");
  }
  if (j.contains("hog")) {
    const auto& h = j["hog"];
    if (!h.is_object()) {
      rd.error("hog", "expected an object");
    } else {
      if (h.contains("cell_sizes")) {
        const auto& cs = h["cell_sizes"];
        if (cs.is_array() && std::all_of(cs.begin(), cs.end(), [](const json& x) { return x.is_number_unsigned(); }))
          s.cell_sizes = cs.get<std::vector<std::size_t>>();
        else rd.error("hog.cell_sizes", "expected an array of positive integers");
      }
      rd.read(h, "n_bins", "hog.n_bins", s.n_bins);
      std::string range, norm;
      rd.read(h, "orientation_range", "hog.orientation_range", range);
      rd.read(h, "cell_normalization", "hog.cell_normalization", norm);
      if (!range.empty()) {
        if (auto r = parse_orientation_range(range)) s.orientation_range = *r;
        else rd.error("hog.orientation_range", "expected 'unsigned180' or 'signed360'");
      }
      if (!norm.empty()) {
        if (auto n = parse_cell_normalization(norm)) s.cell_normalization = *n;
        else rd.error("hog.cell_normalization", "expected 'none' or 'l2unit'");
      }
    }
  }
  rd.read(j, "reduction_cell_size", "reduction_cell_size", s.reduction_cell_size);
  rd.read(j, "selected_cell_size", "selected_cell_size", s.selected_cell_size);
  rd.read(j, "train_fraction", "train_fraction", s.train_fraction);
  if (j.contains("reduction")) {
    const auto& r = j["reduction"];
    if (!r.is_object()) {
      rd.error("reduction", "expected an object");
    } else {
      rd.read(r, "pca_variance", "reduction.pca_variance", s.reduction.pca_variance);
      rd.read(r, "kpca_components", "reduction.kpca_components", s.reduction.kpca_components);
      rd.read(r, "lda_regularization", "reduction.lda_regularization", s.reduction.lda_regularization);
      if (r.contains("kpca_kernel")) {
        const auto& k = r["kpca_kernel"];
        std::string type;
        if (k.is_object()) rd.read(k, "type", "reduction.kpca_kernel.type", type);
        if (type == "linear") {
          s.reduction.kpca_kernel = KernelSpec::linear();
        } else if (type == "rbf") {
          s.reduction.kpca_kernel = KernelSpec::rbf();
          rd.read(k, "sigma", "reduction.kpca_kernel.sigma", s.reduction.kpca_kernel.sigma);
        } else {
          rd.error("reduction.kpca_kernel", "expected {\"type\": \"linear\"|\"rbf\", \"sigma\": ...}");
        }
      }
      if (r.contains("dcv")) {
        const auto& d = r["dcv"];
        if (!d.is_object()) {
          rd.error("reduction.dcv", "expected an object");
        } else {
          std::string mode;
          rd.read(d, "mode", "reduction.dcv.mode", mode);
          if (mode == "exact_null") s.reduction.dcv.mode = DcvMode::ExactNull;
          else if (mode == "pseudo_null") s.reduction.dcv.mode = DcvMode::PseudoNull;
          else if (!mode.empty()) rd.error("reduction.dcv.mode", "expected 'pseudo_null' or 'exact_null'");
          rd.read(d, "variance_fraction", "reduction.dcv.variance_fraction", s.reduction.dcv.variance_fraction);
        }
      }
    }
  }
  if (j.contains("svm")) {
    const auto& v = j["svm"];
    if (!v.is_object()) {
      rd.error("svm", "expected an object");
    } else {
      if (v.contains("kernel")) {
        const auto& k = v["kernel"];
        std::string type;
        if (k.is_object()) rd.read(k, "type", "svm.kernel.type", type);
        if (type == "linear") {
          s.svm.kernel = SvmKernel::linear();
        } else if (type == "rbf") {
          s.svm.kernel = SvmKernel::rbf(1.0);
          rd.read(k, "gamma", "svm.kernel.gamma", s.svm.kernel.gamma);
        } else {
          rd.error("svm.kernel", "expected {\"type\": \"linear\"|\"rbf\", \"gamma\": ...}");
        }
      }
      rd.read(v, "C", "svm.C", s.svm.C);
      rd.read(v, "tolerance", "svm.tolerance", s.svm.tolerance);
      rd.read(v, "max_passes", "svm.max_passes", s.svm.max_passes);
      rd.read(v, "solver_epsilon", "svm.solver_epsilon", s.svm.solver_epsilon);
    }
  }
  rd.read(j, "k", "k", s.k);
  if (j.contains("balance_per_class") && !j["balance_per_class"].is_null()) {
    std::size_t n = 0;
    rd.read(j, "balance_per_class", "balance_per_class", n);
    s.balance_per_class = n;
  }
  std::string positive;
  rd.read(j, "positive_class", "positive_class", positive);
  if (!positive.empty()) {
    if (auto c = parse_class_label(positive)) s.positive_class = *c;
    else rd.error("positive_class", fmt::format("unknown class '{}'", positive));
  }
  if (j.contains("seed") && !j["seed"].is_null()) rd.read(j, "seed", "seed", s.seed);
  else if (require_seed) rd.error("seed", "required (no default seed)");
  std::string out;
  rd.read(j, "out", "out", out);
  s.out_dir = out;
  rd.read(j, "jobs", "jobs", s.jobs);
  return s;
}

std::vector<std::string> validate_spec(const ExperimentSpec& s) {
  std::vector<std::string> e;
  std::error_code ec;
  if (s.manifest.empty()) e.push_back("manifest: required");
  else if (!fs::is_regular_file(s.manifest, ec)) e.push_back(fmt::format("manifest: '{}' does not exist", s.manifest.string()));
  if (s.out_dir.empty()) e.push_back("out: required");
  if (s.image_size.rows == 0 || s.image_size.cols == 0) e.push_back("image_size: dimensions must be positive");
  if (s.n_bins < 2) e.push_back("hog.n_bins: must be >= 2");
  auto check_cell = [&](std::size_t cell, const std::string& field) {
    if (cell == 0 || cell > s.image_size.rows || cell > s.image_size.cols)
      e.push_back(fmt::format("{}: cell size {} does not fit a {}x{} image", field, cell, s.image_size.rows,
                              s.image_size.cols));
  };
  if (s.cell_sizes.size() < 2 && s.experiment == ExperimentId::CellSizeSweep)
    e.push_back("hog.cell_sizes: the sweep needs at least two cell sizes");
  for (std::size_t i = 0; i < s.cell_sizes.size(); ++i) check_cell(s.cell_sizes[i], fmt::format("hog.cell_sizes[{}]", i));
  std::set<std::size_t> uniq(s.cell_sizes.begin(), s.cell_sizes.end());
  if (uniq.size() != s.cell_sizes.size()) e.push_back("hog.cell_sizes: duplicate entries");
  check_cell(s.reduction_cell_size, "reduction_cell_size");
  check_cell(s.selected_cell_size, "selected_cell_size");
  if (!(s.train_fraction > 0.0 && s.train_fraction < 1.0)) e.push_back("train_fraction: must lie in (0,1)");
  if (!(s.reduction.pca_variance > 0.0 && s.reduction.pca_variance <= 1.0))
    e.push_back("reduction.pca_variance: must lie in (0,1]");
  if (s.reduction.kpca_components == 0) e.push_back("reduction.kpca_components: must be positive");
  if (s.reduction.lda_regularization < 0.0) e.push_back("reduction.lda_regularization: must be >= 0");
  if (s.reduction.dcv.mode == DcvMode::PseudoNull &&
      !(s.reduction.dcv.variance_fraction > 0.0 && s.reduction.dcv.variance_fraction < 1.0))
    e.push_back("reduction.dcv.variance_fraction: must lie in (0,1)");
  if (!(s.svm.C > 0.0)) e.push_back("svm.C: must be positive");
  if (!(s.svm.tolerance > 0.0)) e.push_back("svm.tolerance: must be positive");
  if (!(s.svm.solver_epsilon > 0.0)) e.push_back("svm.solver_epsilon: must be positive");
  if (s.svm.max_passes == 0) e.push_back("svm.max_passes: must be positive");
  if (s.svm.kernel.type == SvmKernel::Type::Rbf && !(s.svm.kernel.gamma > 0.0)) e.push_back("svm.kernel.gamma: must be positive");
  if (s.k < 2 && s.experiment != ExperimentId::ReductionCompare) e.push_back("k: must be >= 2");
  if (s.balance_per_class && *s.balance_per_class == 0) e.push_back("balance_per_class: must be positive");
  if (s.jobs == 0) e.push_back("jobs: must be positive");
  return e;
}

// ---------------------------------------------------------------------------
// Building blocks

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first;
  std::mutex mu;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
  pool.clear();
  if (first) std::rethrow_exception(first);
}

ImageSize tiled_size(ImageSize size, std::size_t cell) {
  if (cell == 0 || cell > size.rows || cell > size.cols)
    throw ConfigurationError(fmt::format("cell size {} does not fit a {}x{} image", cell, size.rows, size.cols));
  return {size.rows / cell * cell, size.cols / cell * cell};
}

Grid center_crop(const Grid& image, ImageSize size) {
  if (size.rows > image.rows() || size.cols > image.cols())
    throw ShapeError(fmt::format("cannot crop {}x{} to {}x{}", image.rows(), image.cols(), size.rows, size.cols));
  if (size.rows == image.rows() && size.cols == image.cols()) return image;
  const std::size_t r0 = (image.rows() - size.rows) / 2, c0 = (image.cols() - size.cols) / 2;
  Grid out(size.rows, size.cols);
  for (std::size_t r = 0; r < size.rows; ++r)
    for (std::size_t c = 0; c < size.cols; ++c) out(r, c) = image(r0 + r, c0 + c);
  return out;
}

std::vector<FeatureTable> extract_features(const Manifest& manifest, ImageSize size,
                                           const std::vector<HogConfig>& configs, std::size_t jobs) {
  std::vector<FeatureTable> tables(configs.size());
  // configs sharing a crop share one gradient pass
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> by_crop;
  for (std::size_t c = 0; c < configs.size(); ++c) {
    const ImageSize crop = tiled_size(size, configs[c].cell_size);
    tables[c].config = configs[c];
    tables[c].image_rows = crop.rows;
    tables[c].image_cols = crop.cols;
    feature_dim(configs[c], crop.rows, crop.cols);
    tables[c].rows.resize(manifest.size());
    by_crop[{crop.rows, crop.cols}].push_back(c);
  }
  parallel_for(manifest.size(), jobs, [&](std::size_t i) {
    const auto& e = manifest[i];
    const Grid img = ingest_image(e.image_path, size);
    for (const auto& [crop, members] : by_crop) {
      std::vector<HogConfig> group;
      for (auto c : members) group.push_back(configs[c]);
      auto fvs = hog_descriptors(center_crop(img, {crop.first, crop.second}), group);
      for (std::size_t k = 0; k < members.size(); ++k) {
        auto& row = tables[members[k]].rows[i];
        row.sample_id = e.sample_id;
        row.label = e.class_label;
        row.offset_days = e.offset_days;
        row.values = std::move(fvs[k].values);
      }
    }
  });
  return tables;
}

LabeledMatrix to_labeled(const FeatureTable& table, const std::vector<std::size_t>& rows) {
  const auto dim = static_cast<Eigen::Index>(table.dim());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), dim);
  std::vector<ClassLabel> labels;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = table.rows.at(rows[i]);
    if (static_cast<Eigen::Index>(r.values.size()) != dim) throw ShapeError("feature row width mismatch");
    m.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(r.values.data(), dim);
    labels.push_back(r.label);
    ids.push_back(r.sample_id);
  }
  return LabeledMatrix(std::move(m), std::move(labels), std::move(ids));
}

LabeledMatrix to_labeled(const FeatureTable& table) {
  std::vector<std::size_t> all(table.rows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return to_labeled(table, all);
}

FoldOutcome dcv_svm_fold(const LabeledMatrix& train, const LabeledMatrix& test, const DcvParams& dcv,
                         const SvmConfig& svm) {
  ReductionModel model = fit_dcv(train, dcv);
  LabeledMatrix reduced_train(model.training_embedding, train.labels(), train.sample_ids());
  SvmModel clf = fit_multiclass(reduced_train, svm);
  Eigen::MatrixXd reduced_test = project_rows(model, test.rows());
  auto pred = predict_batch(clf, reduced_test);

  FoldOutcome out;
  out.reduced_dim = model.output_dim;
  out.svm_converged = clf.all_converged();
  for (std::size_t i = 0; i < test.n(); ++i) out.predictions.push_back({test.sample_ids()[i], test.labels()[i], pred[i]});
  return out;
}

std::vector<FoldOutcome> cross_validate(const FeatureTable& table, const Manifest& manifest, const FoldPlan& plan,
                                        const DcvParams& dcv, const SvmConfig& svm, std::size_t jobs) {
  if (table.rows.size() != manifest.size()) throw ShapeError("feature table and manifest differ in length");
  for (std::size_t i = 0; i < manifest.size(); ++i)
    if (table.rows[i].sample_id != manifest[i].sample_id)
      throw ShapeError(fmt::format("feature row {} is '{}', manifest has '{}'", i, table.rows[i].sample_id,
                                   manifest[i].sample_id));
  std::vector<FoldOutcome> outcomes(plan.k);
  parallel_for(plan.k, jobs, [&](std::size_t f) {
    const auto fold = static_cast<std::uint32_t>(f);
    auto train = to_labeled(table, plan.train_indices(manifest, fold));
    auto test = to_labeled(table, plan.test_indices(manifest, fold));
    outcomes[f] = dcv_svm_fold(train, test, dcv, svm);
    outcomes[f].fold = fold;
  });
  return outcomes;
}

std::string predictions_to_csv(const std::vector<PredictionRecord>& preds) {
  std::string out = "sample_id,true,pred\n";
  for (const auto& p : preds) out += fmt::format("{},{},{}\n", csv_escape(p.sample_id), to_token(p.truth), to_token(p.predicted));
  return out;
}

std::string fold_plan_id(const FoldPlan& plan, const Manifest& manifest) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : fold_plan_to_csv(plan, manifest)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return fmt::format("k{}-seed{}-{:016x}", plan.k, plan.seed, h);
}

double StageGroup::rate() const {
  if (correct.empty()) return 0.0;
  double s = 0.0;
  for (double v : correct) s += v;
  return s / static_cast<double>(correct.size());
}

EarlyDetectionResult early_detection_analysis(const Manifest& manifest, const std::vector<ClassLabel>& predicted,
                                              ClassLabel positive) {
  if (predicted.size() != manifest.size()) throw ShapeError("one prediction per manifest entry is required");
  EarlyDetectionResult r;
  r.groups = {StageGroup{CovidStage::Early, {}, {}}, StageGroup{CovidStage::Mid, {}, {}},
              StageGroup{CovidStage::Late, {}, {}}};
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& e = manifest[i];
    if (e.class_label != positive) continue;
    ++r.n_covid;
    if (!e.offset_days) {
      r.excluded_without_offset.push_back(e.sample_id);
      continue;
    }
    auto& g = r.groups[static_cast<std::size_t>(stage_of(*e.offset_days))];
    g.sample_ids.push_back(e.sample_id);
    g.correct.push_back(predicted[i] == positive ? 1.0 : 0.0);
  }
  const std::size_t staged = r.groups[0].correct.size() + r.groups[1].correct.size() + r.groups[2].correct.size();
  if (staged == 0) {
    r.notices.push_back("no staged COVID samples");
    return r;
  }
  for (const auto& g : r.groups) {
    if (g.correct.size() < 2) {
      r.notices.push_back(fmt::format("ANOVA skipped: stage '{}' has {} sample(s), at least 2 are required",
                                      to_string(g.stage), g.correct.size()));
      return r;
    }
  }
  std::vector<NamedGroup> groups;
  for (const auto& g : r.groups) groups.push_back({std::string(to_string(g.stage)), g.correct});
  r.anova = oneway_anova(groups);
  if (!r.anova->f_statistic) r.notices.push_back("F undefined: every stage has zero within-group variance and equal rates");
  return r;
}

// ---------------------------------------------------------------------------
// Runners

namespace {

json score_json(const Score& s) { return s ? json(*s) : json(nullptr); }

json optional_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  if (std::isinf(*v)) return "inf";
  return *v;
}

json scores_json(const Scores& s) {
  return {{"accuracy", score_json(s.accuracy)},
          {"recall", score_json(s.recall)},
          {"specificity", score_json(s.specificity)},
          {"precision", score_json(s.precision)}};
}

json confusion_json(const ConfusionMatrix& cm) {
  return {{"positive_class", std::string(to_token(cm.positive_class))},
          {"tp", cm.tp},
          {"fp", cm.fp},
          {"tn", cm.tn},
          {"fn", cm.fn}};
}

json summary_json(const ScoreSummary& s) {
  return {{"score", s.score_name}, {"per_fold", s.per_fold}, {"mean", s.mean}, {"ci_low", s.ci_low}, {"ci_high", s.ci_high}};
}

json comparison_json(const ComparisonResult& c) {
  return {{"score", c.score_name},
          {"a", c.name_a},
          {"b", c.name_b},
          {"p_value", optional_json(c.p_value)},
          {"mean_difference", c.mean_difference},
          {"ci_low", c.ci_low},
          {"ci_high", c.ci_high},
          {"significant", c.significant}};
}

Manifest load_manifest(const ExperimentSpec& spec) {
  Manifest m = read_manifest(spec.manifest);
  if (spec.balance_per_class) m = balance_subsample(m, *spec.balance_per_class, spec.seed);
  return m;
}

void check_spec(const ExperimentSpec& spec) {
  auto errors = validate_spec(spec);
  if (!errors.empty()) {
    std::string msg = "invalid experiment spec:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigurationError(msg);
  }
}

void require_classes(const Manifest& m, const std::vector<ClassLabel>& classes, const char* experiment) {
  auto counts = m.class_counts();
  for (auto c : classes)
    if (!counts.contains(c))
      throw InsufficientSamplesError(fmt::format("{}: dataset has no '{}' samples", experiment, to_token(c)));
}

void write_report(const fs::path& dir, const json& report, const std::string& text, RunOutput* out) {
  std::string js = report.dump(2) + "\n";
  write_file(dir / "report.json", js);
  write_file(dir / "report.txt", text);
  if (out) {
    out->report_json = std::move(js);
    out->report_text = text;
  }
}

std::vector<std::optional<double>> per_fold_scores(const std::vector<FoldOutcome>& folds, ClassLabel positive,
                                                   bool precision) {
  std::vector<std::optional<double>> out;
  for (const auto& f : folds) {
    std::vector<ClassLabel> t, p;
    for (const auto& r : f.predictions) {
      t.push_back(r.truth);
      p.push_back(r.predicted);
    }
    auto s = scores(confusion(t, p, positive));
    out.push_back(precision ? s.precision : s.recall);
  }
  return out;
}

ConfusionMatrix fold_confusion(const FoldOutcome& f, ClassLabel positive) {
  std::vector<ClassLabel> t, p;
  for (const auto& r : f.predictions) {
    t.push_back(r.truth);
    p.push_back(r.predicted);
  }
  return confusion(t, p, positive);
}

std::vector<double> defined(const std::vector<std::optional<double>>& v) {
  std::vector<double> out;
  for (const auto& x : v)
    if (x) out.push_back(*x);
  return out;
}

} // namespace

ReductionCompareResult run_reduction_compare(const ExperimentSpec& spec, RunOutput* out) {
  check_spec(spec);
  Manifest manifest = load_manifest(spec);
  require_classes(manifest, {kAllClasses.begin(), kAllClasses.end()}, "reduce-compare");
  auto [train_m, test_m] = holdout_split(manifest, spec.train_fraction, spec.seed);
  std::set<std::string> train_ids;
  for (const auto& e : train_m.entries()) train_ids.insert(e.sample_id);

  const fs::path dir = spec.out_dir;
  write_file(dir / "spec.json", spec_to_json(spec));
  {
    std::string split = "sample_id,split\n";
    for (const auto& e : manifest.entries())
      split += fmt::format("{},{}\n", csv_escape(e.sample_id), train_ids.contains(e.sample_id) ? "train" : "test");
    write_file(dir / "split.csv", split);
  }

  auto tables = extract_features(manifest, spec.image_size, {spec.hog(spec.reduction_cell_size)}, spec.jobs);
  std::vector<std::size_t> tr, te;
  for (std::size_t i = 0; i < manifest.size(); ++i) (train_ids.contains(manifest[i].sample_id) ? tr : te).push_back(i);
  LabeledMatrix train = to_labeled(tables[0], tr);
  LabeledMatrix test = to_labeled(tables[0], te);

  ReductionCompareResult result;
  result.n_train = train.n();
  result.n_test = test.n();
  json methods = json::array();
  std::string text = fmt::format("Reduction comparison (HoG cell {}, {} train / {} test)\n", spec.reduction_cell_size,
                                 train.n(), test.n());
  text += fmt::format("{:<6} {:>4} {:>18} {:>18}\n", "method", "dim", "separability(train)", "separability(test)");

  for (auto method : {ReductionMethod::PCA, ReductionMethod::KPCA, ReductionMethod::LDA, ReductionMethod::DCV}) {
    ReductionModel model;
    switch (method) {
    case ReductionMethod::PCA: model = fit_pca(train, spec.reduction.pca_variance); break;
    case ReductionMethod::KPCA:
      model = fit_kpca(train, spec.reduction.kpca_kernel, std::min(spec.reduction.kpca_components, train.n() - 1));
      break;
    case ReductionMethod::LDA: model = fit_lda(train, spec.reduction.lda_regularization); break;
    case ReductionMethod::DCV: model = fit_dcv(train, spec.reduction.dcv); break;
    }
    MethodCloud mc;
    mc.method = method;
    mc.output_dim = model.output_dim;
    mc.train = top_components(model, embed(model, train, false), 3);
    mc.test = top_components(model, embed(model, test, true), 3);
    mc.separability_train = separability_index(mc.train);
    mc.separability_test = separability_index(mc.test);

    const std::string base = "pointcloud_" + to_string(method);
    write_file(dir / (base + "_train.csv"), point_cloud_to_csv(mc.train));
    write_file(dir / (base + "_test.csv"), point_cloud_to_csv(mc.test));
    result.files.push_back(base + "_train.csv");
    result.files.push_back(base + "_test.csv");

    methods.push_back({{"method", to_string(method)},
                       {"output_dim", mc.output_dim},
                       {"separability_train", optional_json(mc.separability_train)},
                       {"separability_test", optional_json(mc.separability_test)},
                       {"warnings", mc.train.warnings},
                       {"legend_labels", [&] {
                          auto a = mc.train.legend_labels();
                          auto b = mc.test.legend_labels();
                          a.insert(a.end(), b.begin(), b.end());
                          return a;
                        }()}});
    auto sep = [](const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : std::string("inf/n/a"); };
    text += fmt::format("{:<6} {:>4} {:>18} {:>18}\n", to_string(method), mc.output_dim, sep(mc.separability_train),
                        sep(mc.separability_test));
    result.methods.push_back(std::move(mc));
  }

  json report = {{"experiment", "reduce-compare"},
                 {"cell_size", spec.reduction_cell_size},
                 {"n_train", result.n_train},
                 {"n_test", result.n_test},
                 {"methods", methods},
                 {"files", result.files}};
  write_report(dir, report, text, out);
  return result;
}

CellSizeSweepResult run_cellsize_sweep(const ExperimentSpec& spec, RunOutput* out) {
  check_spec(spec);
  Manifest manifest = load_manifest(spec);
  if (!manifest.class_counts().contains(spec.positive_class))
    throw InsufficientSamplesError(fmt::format("cellsize: no '{}' samples", to_token(spec.positive_class)));
  const FoldPlan plan = stratified_kfold(manifest, spec.k, spec.seed);
  const fs::path dir = spec.out_dir;
  write_file(dir / "spec.json", spec_to_json(spec));
  write_file(dir / "folds.csv", fold_plan_to_csv(plan, manifest));

  std::vector<HogConfig> configs;
  for (auto c : spec.cell_sizes) configs.push_back(spec.hog(c));
  auto tables = extract_features(manifest, spec.image_size, configs, spec.jobs);

  CellSizeSweepResult result;
  result.plan_id = fold_plan_id(plan, manifest);
  std::vector<std::vector<std::optional<double>>> prec(configs.size()), rec(configs.size());
  for (std::size_t c = 0; c < configs.size(); ++c) {
    const std::size_t cell = spec.cell_sizes[c];
    auto folds = cross_validate(tables[c], manifest, plan, spec.reduction.dcv, spec.svm, spec.jobs);
    tables[c].rows.clear(); // release memory early
    ConfusionMatrix agg;
    agg.positive_class = spec.positive_class;
    for (const auto& f : folds) {
      write_file(dir / fmt::format("cell{}", cell) / fmt::format("predictions_fold{}.csv", f.fold),
                 predictions_to_csv(f.predictions));
      agg += fold_confusion(f, spec.positive_class);
    }
    result.aggregate[cell] = agg;
    prec[c] = per_fold_scores(folds, spec.positive_class, true);
    rec[c] = per_fold_scores(folds, spec.positive_class, false);

    SweepRow row;
    row.cell_size = cell;
    auto p = defined(prec[c]), r = defined(rec[c]);
    row.undefined_precision_folds = prec[c].size() - p.size();
    row.undefined_recall_folds = rec[c].size() - r.size();
    row.precision = fold_summary(p, "precision");
    row.recall = fold_summary(r, "recall");
    result.rows.push_back(std::move(row));
  }

  auto paired = [&](const std::vector<std::optional<double>>& a, const std::vector<std::optional<double>>& b,
                    std::size_t ca, std::size_t cb, const char* score) {
    FoldSeries sa{fmt::format("{}", ca), result.plan_id, {}}, sb{fmt::format("{}", cb), result.plan_id, {}};
    for (std::size_t f = 0; f < a.size(); ++f)
      if (a[f] && b[f]) {
        sa.values.push_back(*a[f]);
        sb.values.push_back(*b[f]);
      }
    return paired_compare(sa, sb, score);
  };
  for (std::size_t a = 0; a < configs.size(); ++a)
    for (std::size_t b = a + 1; b < configs.size(); ++b) {
      SweepComparison cmp;
      cmp.cell_a = spec.cell_sizes[a];
      cmp.cell_b = spec.cell_sizes[b];
      cmp.precision = paired(prec[a], prec[b], cmp.cell_a, cmp.cell_b, "precision");
      cmp.recall = paired(rec[a], rec[b], cmp.cell_a, cmp.cell_b, "recall");
      result.comparisons.push_back(std::move(cmp));
    }

  // reports
  std::string text = fmt::format("Effect of HoG cell size in {} detection: average scores ({}-fold)\n",
                                 display_name(spec.positive_class), spec.k);
  text += fmt::format("{:<8} {:<36} {:<36}\n", "CellSze", "Precision [95% CI]", "Recall [95% CI]");
  json rows = json::array();
  for (const auto& r : result.rows) {
    text += fmt::format("{:<8} {:<36} {:<36}\n", r.cell_size, format_summary(r.precision), format_summary(r.recall));
    const ImageSize window = tiled_size(spec.image_size, r.cell_size);
    rows.push_back({{"cell_size", r.cell_size},
                    {"hog_window", {window.rows, window.cols}},
                    {"precision", summary_json(r.precision)},
                    {"recall", summary_json(r.recall)},
                    {"undefined_precision_folds", r.undefined_precision_folds},
                    {"undefined_recall_folds", r.undefined_recall_folds},
                    {"aggregate_confusion", confusion_json(result.aggregate.at(r.cell_size))}});
  }
  for (const auto& r : result.rows) {
    const ImageSize window = tiled_size(spec.image_size, r.cell_size);
    if (window.rows != spec.image_size.rows || window.cols != spec.image_size.cols)
      text += fmt::format("note: cell {} uses the central {}x{} window\n", r.cell_size, window.rows, window.cols);
  }
  text += "\nComparison across sizes (* = p < 0.05)\n";
  text += fmt::format("{:<8} {:<42} {:<42}\n", "Pair", "Precision", "Recall");
  json comps = json::array();
  for (const auto& c : result.comparisons) {
    auto cell = [](const ComparisonResult& r) { return format_comparison(r) + (r.significant ? " *" : ""); };
    text += fmt::format("{:<8} {:<42} {:<42}\n", fmt::format("{}-{}", c.cell_a, c.cell_b), cell(c.precision),
                        cell(c.recall));
    comps.push_back({{"pair", fmt::format("{}-{}", c.cell_a, c.cell_b)},
                     {"precision", comparison_json(c.precision)},
                     {"recall", comparison_json(c.recall)}});
  }
  json report = {{"experiment", "cellsize"},
                 {"positive_class", std::string(to_token(spec.positive_class))},
                 {"k", spec.k},
                 {"fold_plan", result.plan_id},
                 {"n_samples", manifest.size()},
                 {"average_scores", rows},
                 {"comparisons", comps}};
  write_report(dir, report, text, out);
  return result;
}

SoaResult run_soa_configs(const ExperimentSpec& spec, RunOutput* out) {
  check_spec(spec);
  Manifest full = load_manifest(spec);
  const std::vector<ClassConfig> configs = {ClassConfig::CovidVsNormal, ClassConfig::CovidVsPneumonia,
                                            ClassConfig::CovidVsPneumoniaVsNormal};
  std::vector<ClassLabel> needed = {ClassLabel::COVID19, ClassLabel::PneumoniaNonCovid, ClassLabel::Normal};
  require_classes(full, needed, "soa");
  Manifest manifest = full.restricted_to(needed);

  const fs::path dir = spec.out_dir;
  write_file(dir / "spec.json", spec_to_json(spec));
  auto tables = extract_features(manifest, spec.image_size, {spec.hog(spec.selected_cell_size)}, spec.jobs);
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < manifest.size(); ++i) row_of[manifest[i].sample_id] = i;

  SoaResult result;
  result.cell_size = spec.selected_cell_size;
  std::string text = fmt::format("Class-configuration scores, {} positive, HoG cell {}, {}-fold (percent, fold means)\n",
                                 display_name(ClassLabel::COVID19), spec.selected_cell_size, spec.k);
  text += fmt::format("{:<28} {:>8} {:>8} {:>11} {:>9}\n", "Classes", "Accuracy", "Recall", "Specificity", "Precision");
  json rows = json::array();
  for (auto cfg : configs) {
    Manifest sub = manifest.restricted_to(classes_of(cfg));
    FoldPlan plan = stratified_kfold(sub, spec.k, spec.seed);
    FeatureTable table;
    table.config = tables[0].config;
    table.image_rows = tables[0].image_rows;
    table.image_cols = tables[0].image_cols;
    for (const auto& e : sub.entries()) table.rows.push_back(tables[0].rows[row_of.at(e.sample_id)]);

    auto folds = cross_validate(table, sub, plan, spec.reduction.dcv, spec.svm, spec.jobs);
    const std::string tag = fmt::format("soa_{}", [&] {
      std::string s;
      for (auto c : classes_of(cfg)) s += (s.empty() ? "" : "_") + std::string(to_token(c));
      return s;
    }());
    write_file(dir / tag / "folds.csv", fold_plan_to_csv(plan, sub));

    SoaRow row;
    row.config = cfg;
    row.n_samples = sub.size();
    row.aggregate.positive_class = ClassLabel::COVID19;
    std::vector<Scores> fold_scores;
    for (const auto& f : folds) {
      write_file(dir / tag / fmt::format("predictions_fold{}.csv", f.fold), predictions_to_csv(f.predictions));
      auto cm = fold_confusion(f, ClassLabel::COVID19);
      row.fold_confusions.push_back(cm);
      row.aggregate += cm;
      fold_scores.push_back(scores(cm));
    }
    auto mean_of = [&](Score Scores::*field) -> Score {
      double s = 0.0;
      std::size_t n = 0;
      for (const auto& fs : fold_scores)
        if (fs.*field) {
          s += *(fs.*field);
          ++n;
        }
      if (n == 0) return std::nullopt;
      return s / static_cast<double>(n);
    };
    row.mean_scores = {mean_of(&Scores::precision), mean_of(&Scores::recall), mean_of(&Scores::specificity),
                       mean_of(&Scores::accuracy)};
    row.aggregate_scores = scores(row.aggregate);

    text += fmt::format("{:<28} {:>8} {:>8} {:>11} {:>9}\n", to_string(cfg), format_percent(row.mean_scores.accuracy),
                        format_percent(row.mean_scores.recall), format_percent(row.mean_scores.specificity),
                        format_percent(row.mean_scores.precision));
    json fc = json::array();
    for (const auto& cm : row.fold_confusions) fc.push_back(confusion_json(cm));
    rows.push_back({{"classes", to_string(cfg)},
                    {"n_samples", row.n_samples},
                    {"fold_plan", fold_plan_id(plan, sub)},
                    {"mean_scores", scores_json(row.mean_scores)},
                    {"aggregate_confusion", confusion_json(row.aggregate)},
                    {"aggregate_scores", scores_json(row.aggregate_scores)},
                    {"fold_confusions", fc}});
    result.rows.push_back(std::move(row));
  }
  json report = {{"experiment", "soa"}, {"cell_size", spec.selected_cell_size}, {"k", spec.k}, {"rows", rows}};
  write_report(dir, report, text, out);
  return result;
}

EarlyDetectionResult run_early_detection(const ExperimentSpec& spec, RunOutput* out) {
  check_spec(spec);
  Manifest manifest = load_manifest(spec);
  const fs::path dir = spec.out_dir;
  write_file(dir / "spec.json", spec_to_json(spec));

  bool any_staged = false;
  for (const auto& e : manifest.entries())
    if (e.class_label == ClassLabel::COVID19 && e.offset_days) any_staged = true;

  std::vector<ClassLabel> predicted(manifest.size(), ClassLabel::Normal);
  if (any_staged) {
    const FoldPlan plan = stratified_kfold(manifest, spec.k, spec.seed);
    write_file(dir / "folds.csv", fold_plan_to_csv(plan, manifest));
    auto tables = extract_features(manifest, spec.image_size, {spec.hog(spec.selected_cell_size)}, spec.jobs);
    auto folds = cross_validate(tables[0], manifest, plan, spec.reduction.dcv, spec.svm, spec.jobs);
    std::map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < manifest.size(); ++i) row_of[manifest[i].sample_id] = i;
    for (const auto& f : folds) {
      write_file(dir / fmt::format("predictions_fold{}.csv", f.fold), predictions_to_csv(f.predictions));
      for (const auto& p : f.predictions) predicted[row_of.at(p.sample_id)] = p.predicted;
    }
  }
  EarlyDetectionResult result = early_detection_analysis(manifest, predicted);
  if (!any_staged) result.groups.clear();

  std::string text = fmt::format("{} detection by stage (out-of-fold, HoG cell {})\n", display_name(ClassLabel::COVID19),
                                 spec.selected_cell_size);
  json groups = json::array();
  if (!result.groups.empty()) {
    text += fmt::format("{:<6} {:>5} {:>9} {:>8}\n", "stage", "n", "detected", "rate");
    for (const auto& g : result.groups) {
      const auto detected = static_cast<std::size_t>(std::count(g.correct.begin(), g.correct.end(), 1.0));
      text += fmt::format("{:<6} {:>5} {:>9} {:>8.4f}\n", to_string(g.stage), g.correct.size(), detected, g.rate());
      groups.push_back({{"stage", std::string(to_string(g.stage))},
                        {"n", g.correct.size()},
                        {"detected", detected},
                        {"rate", g.correct.empty() ? json(nullptr) : json(g.rate())}});
    }
  }
  json anova = nullptr;
  if (result.anova) {
    const auto& a = *result.anova;
    auto fstr = a.f_statistic ? fmt::format("{:.4f}", *a.f_statistic) : std::string("undefined");
    auto pstr = a.p_value ? fmt::format("{:.4f}", *a.p_value) : std::string("undefined");
    text += fmt::format("ANOVA: F={} (df {}, {}), p={}\n", fstr, a.df_between, a.df_within, pstr);
    anova = {{"groups", a.group_names},
             {"sizes", a.group_sizes},
             {"means", a.group_means},
             {"f_statistic", optional_json(a.f_statistic)},
             {"df_between", a.df_between},
             {"df_within", a.df_within},
             {"p_value", optional_json(a.p_value)}};
  }
  text += fmt::format("COVID samples: {}, excluded (no offset): {}\n", result.n_covid,
                      result.excluded_without_offset.size());
  for (const auto& n : result.notices) text += "notice: " + n + "\n";

  json report = {{"experiment", "early"},
                 {"cell_size", spec.selected_cell_size},
                 {"n_covid", result.n_covid},
                 {"excluded_without_offset", result.excluded_without_offset},
                 {"groups", groups},
                 {"anova", anova},
                 {"notices", result.notices}};
  write_report(dir, report, text, out);
  return result;
}

RunOutput run_experiment(const ExperimentSpec& spec) {
  RunOutput out;
  switch (spec.experiment) {
  case ExperimentId::ReductionCompare: run_reduction_compare(spec, &out); break;
  case ExperimentId::CellSizeSweep: run_cellsize_sweep(spec, &out); break;
  case ExperimentId::SoAConfigs: run_soa_configs(spec, &out); break;
  case ExperimentId::EarlyDetection: run_early_detection(spec, &out); break;
  }
  return out;
}

} // namespace cxr
