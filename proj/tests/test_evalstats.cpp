#include "oracles.hpp"

#include "cxr/error.hpp"
#include "cxr/evalstats.hpp"

#include <doctest.h>

#include <limits>

using namespace cxr;

namespace {

ConfusionMatrix counts(std::uint64_t tp, std::uint64_t fn, std::uint64_t fp, std::uint64_t tn) {
  ConfusionMatrix cm;
  cm.tp = tp;
  cm.fn = fn;
  cm.fp = fp;
  cm.tn = tn;
  return cm;
}

} // namespace

TEST_CASE("confusion and scores") {
  using L = ClassLabel;
  std::vector<L> t = {L::COVID19, L::COVID19, L::Normal, L::PneumoniaNonCovid, L::COVID19};
  std::vector<L> p = {L::COVID19, L::Normal, L::COVID19, L::PneumoniaNonCovid, L::COVID19};
  ConfusionMatrix cm = confusion(t, p, L::COVID19);
  CHECK(cm == counts(2, 1, 1, 1));
  CHECK_THROWS(confusion(t, std::span<const L>(p).first(3), L::COVID19));

  Scores s = scores(counts(49, 1, 2, 27));
  CHECK(format_score_row("COVID-19/Normal", s) == "COVID-19/Normal: 96, 98, 93, 96");
  CHECK(*s.recall == 49.0 / 50.0);
  CHECK(*s.precision == 49.0 / 51.0);

  Scores none = scores(counts(0, 0, 0, 5));
  CHECK_FALSE(none.precision.has_value());
  CHECK_FALSE(none.recall.has_value());
  CHECK(*none.specificity == 1.0);
  CHECK(format_percent(none.precision) == "n/a");
}

TEST_CASE("scores are correctly rounded ratios") {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 500; ++t) {
    ConfusionMatrix cm = counts(rng() % 1000, rng() % 1000, rng() % 1000, rng() % 1000);
    Scores s = scores(cm);
    auto check = [](const Score& v, std::uint64_t num, std::uint64_t den) {
      auto r = oracle::reduced(num, den);
      CHECK(v.has_value() == r.has_value());
      if (r) CHECK(oracle::is_correctly_rounded(*v, *r));
    };
    check(s.precision, cm.tp, cm.tp + cm.fp);
    check(s.recall, cm.tp, cm.tp + cm.fn);
    check(s.specificity, cm.tn, cm.tn + cm.fp);
    check(s.accuracy, cm.tp + cm.tn, cm.total());
  }
}

TEST_CASE("fold summaries") {
  std::vector<double> v = {0.7, 0.8, 0.9};
  ScoreSummary s = fold_summary(v, "recall");
  CHECK(s.mean == doctest::Approx(0.8));
  CHECK((s.ci_high - s.ci_low) / 2.0 == doctest::Approx(0.2484137711719546).epsilon(1e-10));
  CHECK(format_summary(s) == "0.8000000 [0.5515862, 1.0000000]"); // clamped at 1
  CHECK(s.ci_high > 1.0);                                         // raw bound kept

  std::vector<double> flat = {0.5, 0.5, 0.5, 0.5};
  ScoreSummary f = fold_summary(flat);
  CHECK(f.ci_low == 0.5);
  CHECK(f.ci_high == 0.5);

  std::vector<double> single = {0.9};
  CHECK_THROWS_AS(fold_summary(single), InsufficientFoldsError);
}

TEST_CASE("paired comparisons") {
  SUBCASE("matches a hand computation") {
    std::vector<double> a = {0.9, 0.8, 0.85, 0.95}, b = {0.85, 0.8, 0.8, 0.9};
    ComparisonResult c = paired_compare(a, b);
    // d = .05 0 .05 .05, mean .0375, sd .025, t = 3
    CHECK(c.mean_difference == doctest::Approx(0.0375));
    REQUIRE(c.p_value.has_value());
    CHECK(*c.p_value == doctest::Approx(t_two_sided_p(3.0, 3.0)).epsilon(1e-9));
    CHECK(c.significant == (*c.p_value < 0.05));
    // swapping the operands flips the interval, keeps p
    ComparisonResult r = paired_compare(b, a);
    CHECK(*r.p_value == *c.p_value);
    CHECK(r.ci_low == doctest::Approx(-c.ci_high));
  }
  SUBCASE("zero-variance differences") {
    // dyadic values keep the differences exactly equal
    std::vector<double> a = {0.875, 0.75, 0.625}, b = {0.75, 0.625, 0.5}, same = a;
    ComparisonResult shifted = paired_compare(a, b);
    CHECK(*shifted.p_value == 0.0);
    CHECK(shifted.significant);
    ComparisonResult equal = paired_compare(a, same);
    CHECK_FALSE(equal.p_value.has_value());
    CHECK_FALSE(equal.significant);
  }
  SUBCASE("pairing errors") {
    std::vector<double> a = {0.9, 0.8, 0.7}, b = {0.8, 0.7};
    CHECK_THROWS_AS(paired_compare(a, b), PairingError);
    FoldSeries x{"cell 8", "k3-seed1-0", {0.9, 0.8, 0.7}}, y{"cell 16", "k3-seed2-0", {0.8, 0.9, 0.6}};
    CHECK_THROWS_AS(paired_compare(x, y), PairingError);
    y.plan_id = x.plan_id;
    ComparisonResult ok = paired_compare(x, y, "recall");
    CHECK(ok.name_a == "cell 8");
    CHECK(ok.score_name == "recall");
  }
  SUBCASE("formatting") {
    ComparisonResult c;
    c.p_value = 0.03791;
    c.ci_low = -0.156237376;
    c.ci_high = 0.017223434;
    CHECK(format_comparison(c) == "p=0.0379, CI [-0.15623738, 0.01722343]");
  }
}

TEST_CASE("one-way ANOVA") {
  SUBCASE("reference values") {
    std::vector<NamedGroup> g = {{"a", {1, 2, 3}}, {"b", {2, 3, 4}}, {"c", {5, 6, 7}}};
    AnovaResult r = oneway_anova(g);
    // SSB = 3*(2-11/3)^2 + 3*(3-11/3)^2 + 3*(6-11/3)^2 = 26; SSW = 6
    CHECK(*r.f_statistic == doctest::Approx((26.0 / 2) / (6.0 / 6)));
    CHECK(r.df_between == 2);
    CHECK(r.df_within == 6);
    CHECK(*r.p_value == doctest::Approx(f_upper_tail(13.0, 2, 6)));
  }
  SUBCASE("degenerate groups") {
    AnovaResult same = oneway_anova({{"a", {1, 1}}, {"b", {1, 1, 1}}});
    CHECK_FALSE(same.f_statistic.has_value());
    CHECK_FALSE(same.p_value.has_value());
    AnovaResult apart = oneway_anova({{"a", {1, 1}}, {"b", {0, 0, 0}}});
    CHECK(*apart.f_statistic == std::numeric_limits<double>::infinity());
    CHECK(*apart.p_value == 0.0);
    CHECK_THROWS(oneway_anova({{"a", {1, 2}}}));
  }
}

TEST_CASE("distribution helpers") {
  // closed form for df = 2: (2p-1)/sqrt(2p(1-p)) at p = 0.975
  CHECK(t_critical(2.0) == doctest::Approx(4.3026527297494639).epsilon(1e-12));
  CHECK(t_two_sided_p(1.0, 1.0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(f_upper_tail(1.0, 1.0, 1.0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(f_upper_tail(0.0, 3.0, 5.0) == 1.0);
}
