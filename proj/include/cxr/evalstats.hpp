#pragma once

#include "cxr/dataset.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cxr {

/// One-vs-rest counts for `positive_class`.
struct ConfusionMatrix {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  ClassLabel positive_class = ClassLabel::COVID19;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionMatrix& operator+=(const ConfusionMatrix& o);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// A ratio that may be undefined (0/0). nullopt is the undefined marker.
using Score = std::optional<double>;

struct Scores {
  Score precision, recall, specificity, accuracy;
};

ConfusionMatrix confusion(std::span<const ClassLabel> y_true, std::span<const ClassLabel> y_pred,
                          ClassLabel positive_class);

/// precision = tp/(fp+tp), recall = tp/(tp+fn), specificity = tn/(tn+fp),
/// accuracy = (tp+tn)/total.
Scores scores(const ConfusionMatrix& cm);

struct ScoreSummary {
  std::string score_name;
  std::vector<double> per_fold;
  double mean = 0.0;
  double ci_low = 0.0;  // raw, not clamped
  double ci_high = 0.0;
};

/// mean +/- t(0.975, k-1) * s / sqrt(k). Throws InsufficientFoldsError for k < 2.
ScoreSummary fold_summary(std::span<const double> values, std::string score_name = {});

struct ComparisonResult {
  std::string name_a, name_b, score_name;
  /// nullopt when every paired difference is exactly zero.
  std::optional<double> p_value;
  double mean_difference = 0.0;
  double ci_low = 0.0, ci_high = 0.0;
  bool significant = false; // p_value < 0.05
};

/// Per-fold scores tagged with the fold plan that produced them.
struct FoldSeries {
  std::string name;
  std::string plan_id;
  std::vector<double> values;
};

/// Paired two-sided t-test on d_i = a_i - b_i with k-1 degrees of freedom.
/// Zero-variance differences give p = 0 (nonzero mean) or an undefined p
/// (all zero). Throws PairingError when lengths differ.
ComparisonResult paired_compare(std::span<const double> a, std::span<const double> b);
/// As above, also requiring both series to come from the same fold plan.
ComparisonResult paired_compare(const FoldSeries& a, const FoldSeries& b, std::string score_name = {});

struct AnovaResult {
  std::vector<std::string> group_names;
  std::vector<std::size_t> group_sizes;
  std::vector<double> group_means;
  /// nullopt when within-group variance and between-group spread are both
  /// zero; +inf when only the within-group variance is zero.
  std::optional<double> f_statistic;
  std::size_t df_between = 0, df_within = 0;
  /// nullopt alongside an undefined F; 0 alongside an infinite F.
  std::optional<double> p_value;
};

struct NamedGroup {
  std::string name;
  std::vector<double> values;
};

AnovaResult oneway_anova(const std::vector<NamedGroup>& groups);

// ---------------------------------------------------------------------------
// Distribution helpers (Boost.Math underneath)

/// Two-sided quantile t(1 - alpha/2, df).
double t_critical(double df, double alpha = 0.05);
/// Two-sided p-value for a t statistic.
double t_two_sided_p(double t, double df);
/// Upper tail P(F > f) of the F distribution.
double f_upper_tail(double f, double df1, double df2);

// ---------------------------------------------------------------------------
// Text formatting mirroring the published table layouts

/// "0.8346296 [0.7586902, 0.9105691]"; the interval is clamped to [0,1].
std::string format_summary(const ScoreSummary& s);
/// "p=0.0379, CI [-0.15623738, 0.01722343]"
std::string format_comparison(const ComparisonResult& c);
/// Percentages rounded to integers, or "n/a" for undefined scores.
std::string format_percent(const Score& s);
/// "COVID-19/Normal: 96, 98, 93, 96" (accuracy, recall, specificity, precision).
std::string format_score_row(const std::string& name, const Scores& s);

} // namespace cxr
