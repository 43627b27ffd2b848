#include "cxr/evalstats.hpp"

#include "cxr/error.hpp"

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cxr {

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  if (o.positive_class != positive_class) throw ShapeError("cannot add confusion matrices with different positives");
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

ConfusionMatrix confusion(std::span<const ClassLabel> y_true, std::span<const ClassLabel> y_pred,
                          ClassLabel positive_class) {
  if (y_true.size() != y_pred.size())
    throw ShapeError(fmt::format("{} true labels but {} predictions", y_true.size(), y_pred.size()));
  ConfusionMatrix cm;
  cm.positive_class = positive_class;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const bool actual = y_true[i] == positive_class;
    const bool predicted = y_pred[i] == positive_class;
    if (actual && predicted) ++cm.tp;
    else if (!actual && predicted) ++cm.fp;
    else if (actual) ++cm.fn;
    else ++cm.tn;
  }
  return cm;
}

namespace {

Score ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

struct MeanSd {
  double mean;
  double sd;
};

MeanSd mean_sd(std::span<const double> v) {
  const double k = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / k;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (k - 1.0))};
}

} // namespace

Scores scores(const ConfusionMatrix& cm) {
  return {ratio(cm.tp, cm.fp + cm.tp), ratio(cm.tp, cm.tp + cm.fn), ratio(cm.tn, cm.tn + cm.fp),
          ratio(cm.tp + cm.tn, cm.total())};
}

double t_critical(double df, double alpha) {
  boost::math::students_t dist(df);
  return boost::math::quantile(boost::math::complement(dist, alpha / 2.0));
}

double t_two_sided_p(double t, double df) {
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(df);
  return std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
}

double f_upper_tail(double f, double df1, double df2) {
  if (f <= 0.0) return 1.0;
  if (std::isinf(f)) return 0.0;
  // P(F > f) = I_{df2/(df2+df1 f)}(df2/2, df1/2)
  return boost::math::ibeta(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f));
}

ScoreSummary fold_summary(std::span<const double> values, std::string score_name) {
  if (values.size() < 2)
    throw InsufficientFoldsError(fmt::format("confidence interval needs at least 2 folds, got {}", values.size()));
  ScoreSummary s;
  s.score_name = std::move(score_name);
  s.per_fold.assign(values.begin(), values.end());
  const auto [mean, sd] = mean_sd(values);
  const double k = static_cast<double>(values.size());
  const double half = t_critical(k - 1.0) * sd / std::sqrt(k);
  s.mean = mean;
  s.ci_low = mean - half;
  s.ci_high = mean + half;
  return s;
}

ComparisonResult paired_compare(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw PairingError(fmt::format("paired comparison over {} vs {} folds", a.size(), b.size()));
  if (a.size() < 2) throw InsufficientFoldsError("paired comparison needs at least 2 folds");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];

  ComparisonResult r;
  const auto [mean, sd] = mean_sd(d);
  const double k = static_cast<double>(d.size());
  r.mean_difference = mean;
  const double se = sd / std::sqrt(k);
  if (se == 0.0) {
    r.ci_low = r.ci_high = mean;
    if (mean == 0.0) r.p_value = std::nullopt;
    else r.p_value = 0.0;
  } else {
    const double half = t_critical(k - 1.0) * se;
    r.ci_low = mean - half;
    r.ci_high = mean + half;
    r.p_value = t_two_sided_p(mean / se, k - 1.0);
  }
  r.significant = r.p_value && *r.p_value < 0.05;
  return r;
}

ComparisonResult paired_compare(const FoldSeries& a, const FoldSeries& b, std::string score_name) {
  if (a.plan_id != b.plan_id)
    throw PairingError(fmt::format("series '{}' and '{}' come from different fold plans ('{}' vs '{}')", a.name, b.name,
                                   a.plan_id, b.plan_id));
  auto r = paired_compare(std::span<const double>(a.values), std::span<const double>(b.values));
  r.name_a = a.name;
  r.name_b = b.name;
  r.score_name = std::move(score_name);
  return r;
}

AnovaResult oneway_anova(const std::vector<NamedGroup>& groups) {
  if (groups.size() < 2) throw DegenerateDataError("ANOVA needs at least 2 groups");
  AnovaResult r;
  std::size_t n_total = 0;
  double grand = 0.0;
  for (const auto& g : groups) {
    if (g.values.size() < 2)
      throw DegenerateDataError(fmt::format("ANOVA group '{}' has fewer than 2 observations", g.name));
    r.group_names.push_back(g.name);
    r.group_sizes.push_back(g.values.size());
    const double sum = std::accumulate(g.values.begin(), g.values.end(), 0.0);
    r.group_means.push_back(sum / static_cast<double>(g.values.size()));
    grand += sum;
    n_total += g.values.size();
  }
  if (n_total <= groups.size()) throw DegenerateDataError("ANOVA needs more observations than groups");
  grand /= static_cast<double>(n_total);

  double ss_between = 0.0, ss_within = 0.0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const double dm = r.group_means[i] - grand;
    ss_between += static_cast<double>(r.group_sizes[i]) * dm * dm;
    for (double v : groups[i].values) ss_within += (v - r.group_means[i]) * (v - r.group_means[i]);
  }
  r.df_between = groups.size() - 1;
  r.df_within = n_total - groups.size();

  const bool means_equal = std::all_of(r.group_means.begin(), r.group_means.end(),
                                       [&](double m) { return m == r.group_means.front(); });
  if (ss_within == 0.0) {
    if (means_equal) {
      r.f_statistic = std::nullopt;
      r.p_value = std::nullopt;
    } else {
      r.f_statistic = std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
    }
    return r;
  }
  const double f = means_equal ? 0.0
                               : (ss_between / static_cast<double>(r.df_between)) /
                                     (ss_within / static_cast<double>(r.df_within));
  r.f_statistic = f;
  r.p_value = f_upper_tail(f, static_cast<double>(r.df_between), static_cast<double>(r.df_within));
  return r;
}

// ---------------------------------------------------------------------------

std::string format_summary(const ScoreSummary& s) {
  return fmt::format("{:.7f} [{:.7f}, {:.7f}]", s.mean, std::clamp(s.ci_low, 0.0, 1.0), std::clamp(s.ci_high, 0.0, 1.0));
}

std::string format_comparison(const ComparisonResult& c) {
  const std::string p = c.p_value ? fmt::format("{:.4f}", *c.p_value) : std::string("n/a");
  return fmt::format("p={}, CI [{:.8f}, {:.8f}]", p, c.ci_low, c.ci_high);
}

std::string format_percent(const Score& s) {
  if (!s) return "n/a";
  return fmt::format("{:.0f}", 100.0 * *s);
}

std::string format_score_row(const std::string& name, const Scores& s) {
  return fmt::format("{}: {}, {}, {}, {}", name, format_percent(s.accuracy), format_percent(s.recall),
                     format_percent(s.specificity), format_percent(s.precision));
}

} // namespace cxr
