#pragma once

#include "cxr/classifier.hpp"
#include "cxr/dataset.hpp"
#include "cxr/descriptor.hpp"
#include "cxr/evalstats.hpp"
#include "cxr/reduce.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cxr {

enum class ExperimentId { ReductionCompare, CellSizeSweep, SoAConfigs, EarlyDetection };

/// CLI names: reduce-compare, cellsize, soa, early.
std::string to_string(ExperimentId id);
std::optional<ExperimentId> parse_experiment_id(std::string_view s);

enum class ClassConfig { CovidVsNormal, CovidVsPneumonia, CovidVsPneumoniaVsNormal, AllFour };

std::vector<ClassLabel> classes_of(ClassConfig cfg);
/// "COVID-19/Normal", "COVID-19/Pneumonia", ...
std::string to_string(ClassConfig cfg);

struct ReductionParams {
  double pca_variance = 0.95;
  std::size_t kpca_components = 3;
  KernelSpec kpca_kernel = KernelSpec::rbf();
  double lda_regularization = 1e-3;
  DcvParams dcv{DcvMode::PseudoNull, 0.8};
};

struct ExperimentSpec {
  ExperimentId experiment = ExperimentId::CellSizeSweep;
  std::filesystem::path manifest;
  ImageSize image_size{400, 400};
  std::vector<std::size_t> cell_sizes{4, 8, 16, 32};
  std::size_t n_bins = 9;
  OrientationRange orientation_range = OrientationRange::Unsigned180;
  CellNormalization cell_normalization = CellNormalization::L2Unit;
  std::size_t reduction_cell_size = 4;  // experiment 1
  std::size_t selected_cell_size = 16;  // experiments 3 and 4
  double train_fraction = 0.6;
  ReductionParams reduction;
  SvmConfig svm;
  std::uint32_t k = 10;
  std::optional<std::size_t> balance_per_class;
  ClassLabel positive_class = ClassLabel::COVID19;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  std::size_t jobs = 1;

  HogConfig hog(std::size_t cell) const;
};

/// Resolved configuration as JSON text (what gets written to spec.json).
std::string spec_to_json(const ExperimentSpec& spec);

/// Parses a spec document. Every problem is appended to `errors` as
/// "field: message"; the returned spec is meaningful only when it stays empty.
/// `require_seed` is false when the caller will supply the seed by flag.
ExperimentSpec spec_from_json(const std::string& text, std::vector<std::string>& errors, bool require_seed = true);

/// Field-level validation (paths exist, ranges, grid compatibility).
std::vector<std::string> validate_spec(const ExperimentSpec& spec);

// ---------------------------------------------------------------------------
// Pipeline building blocks

/// Runs `fn(i)` for i in [0,n) on up to `jobs` threads. The first exception
/// is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

/// Largest sub-size whose sides are multiples of `cell`.
ImageSize tiled_size(ImageSize size, std::size_t cell);
/// Central `size` window of `image`.
Grid center_crop(const Grid& image, ImageSize size);

/// Ingests every manifest image once and computes one feature table per
/// HogConfig. Row order follows the manifest. A cell size that does not tile
/// `size` is applied to the central tiled_size() window, and the table
/// records that cropped size.
std::vector<FeatureTable> extract_features(const Manifest& manifest, ImageSize size,
                                           const std::vector<HogConfig>& configs, std::size_t jobs = 1);

LabeledMatrix to_labeled(const FeatureTable& table, const std::vector<std::size_t>& rows);
LabeledMatrix to_labeled(const FeatureTable& table);

struct PredictionRecord {
  std::string sample_id;
  ClassLabel truth = ClassLabel::Normal;
  ClassLabel predicted = ClassLabel::Normal;
};

struct FoldOutcome {
  std::uint32_t fold = 0;
  std::vector<PredictionRecord> predictions;
  std::size_t reduced_dim = 0;
  bool svm_converged = true;
};

/// Trains DCV + SVM on `train`, predicts `test`.
FoldOutcome dcv_svm_fold(const LabeledMatrix& train, const LabeledMatrix& test, const DcvParams& dcv,
                         const SvmConfig& svm);

/// Out-of-fold DCV + SVM over every fold of `plan`. `table` rows must follow
/// `manifest` order.
std::vector<FoldOutcome> cross_validate(const FeatureTable& table, const Manifest& manifest, const FoldPlan& plan,
                                        const DcvParams& dcv, const SvmConfig& svm, std::size_t jobs = 1);

std::string predictions_to_csv(const std::vector<PredictionRecord>& preds);

/// Stable identifier for a fold plan (k, seed and assignment hash).
std::string fold_plan_id(const FoldPlan& plan, const Manifest& manifest);

// ---------------------------------------------------------------------------
// Results

struct MethodCloud {
  ReductionMethod method = ReductionMethod::PCA;
  std::size_t output_dim = 0;
  PointCloud train, test;
  std::optional<double> separability_train, separability_test;
};

struct ReductionCompareResult {
  std::size_t n_train = 0, n_test = 0;
  std::vector<MethodCloud> methods;
  std::vector<std::string> files;
};

struct SweepRow {
  std::size_t cell_size = 0;
  ScoreSummary precision, recall;
  std::size_t undefined_precision_folds = 0, undefined_recall_folds = 0;
};

struct SweepComparison {
  std::size_t cell_a = 0, cell_b = 0;
  ComparisonResult precision, recall;
};

struct CellSizeSweepResult {
  std::string plan_id;
  std::vector<SweepRow> rows;
  std::vector<SweepComparison> comparisons;
  /// Aggregated (all folds) positive-class confusion per cell size.
  std::map<std::size_t, ConfusionMatrix> aggregate;
};

struct SoaRow {
  ClassConfig config = ClassConfig::CovidVsNormal;
  std::size_t n_samples = 0;
  std::vector<ConfusionMatrix> fold_confusions;
  ConfusionMatrix aggregate;
  /// Fold means; undefined when every fold is undefined for that score.
  Scores mean_scores;
  Scores aggregate_scores;
};

struct SoaResult {
  std::size_t cell_size = 0;
  std::vector<SoaRow> rows;
};

struct StageGroup {
  CovidStage stage = CovidStage::Early;
  std::vector<std::string> sample_ids;
  std::vector<double> correct; // 1.0 when detected as COVID-19
  double rate() const;
};

struct EarlyDetectionResult {
  std::size_t n_covid = 0;
  std::vector<std::string> excluded_without_offset;
  std::vector<StageGroup> groups; // early, mid, late
  std::optional<AnovaResult> anova;
  std::vector<std::string> notices;
};

/// Groups out-of-fold COVID-19 predictions by stage and runs the ANOVA.
/// `predicted` is indexed like `manifest`.
EarlyDetectionResult early_detection_analysis(const Manifest& manifest, const std::vector<ClassLabel>& predicted,
                                              ClassLabel positive = ClassLabel::COVID19);

// ---------------------------------------------------------------------------
// Runners. Each writes spec.json, its reports and exports under spec.out_dir.

struct RunOutput {
  std::string report_json;
  std::string report_text; // the one-screen summary
};

ReductionCompareResult run_reduction_compare(const ExperimentSpec& spec, RunOutput* out = nullptr);
CellSizeSweepResult run_cellsize_sweep(const ExperimentSpec& spec, RunOutput* out = nullptr);
SoaResult run_soa_configs(const ExperimentSpec& spec, RunOutput* out = nullptr);
EarlyDetectionResult run_early_detection(const ExperimentSpec& spec, RunOutput* out = nullptr);

/// Dispatches on spec.experiment.
RunOutput run_experiment(const ExperimentSpec& spec);

// ---------------------------------------------------------------------------
// Synthetic corpora for tests and demos

struct SyntheticCorpusOptions {
  std::size_t per_class = 80;
  ImageSize size{400, 400};
  /// Dominant grating orientation per class, degrees (covid, pneumonia,
  /// infiltration, normal).
  std::array<double, 4> orientations{0.0, 45.0, 90.0, 135.0};
  double noise_sigma = 0.1;
  double orientation_jitter = 5.0;
  double min_period = 8.0, max_period = 14.0;
  /// Classes rendered as blank (all-zero) images instead of gratings.
  std::vector<ClassLabel> blank_classes;
  /// Attach offset_days to COVID-19 samples (cycling over 0..20).
  bool covid_offsets = true;
  std::vector<ClassLabel> classes{kAllClasses.begin(), kAllClasses.end()};
  std::uint64_t seed = 1;
};

/// Writes 8-bit PNGs plus `manifest.csv` into `dir`; returns the manifest path.
std::filesystem::path write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticCorpusOptions& opts);

/// One synthetic grating image with values in [0,1].
Grid synthetic_grating(ImageSize size, double orientation_deg, double period, double phase, double noise_sigma,
                       std::uint64_t noise_seed);

} // namespace cxr
