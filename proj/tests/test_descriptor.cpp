#include "oracles.hpp"

#include "cxr/descriptor.hpp"
#include "cxr/error.hpp"

#include <doctest.h>

#include <unistd.h>

namespace fs = std::filesystem;
using namespace cxr;

TEST_CASE("feature_dim") {
  CHECK(feature_dim({16, 9}, 400, 400) == 5625);
  CHECK(feature_dim({400, 9}, 400, 400) == 9);
  CHECK(feature_dim({4, 9}, 400, 400) == 90000);
  CHECK_THROWS_AS(feature_dim({32, 9}, 400, 400), ConfigurationError);
  CHECK_THROWS_AS(feature_dim({16, 1}, 400, 400), ConfigurationError);
  CHECK_THROWS_AS(feature_dim({0, 9}, 400, 400), ConfigurationError);
}

TEST_CASE("gradients") {
  SUBCASE("constant image") {
    Grid g(6, 6, 0.3);
    auto gr = compute_gradients(g);
    for (double m : gr.magnitude.values()) CHECK(m == 0.0);
  }
  SUBCASE("horizontal ramp on 5x5") {
    Grid g(5, 5);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 5; ++c) g(r, c) = static_cast<double>(c);
    auto gr = compute_gradients(g);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(gr.magnitude(r, c) == 1.0);
        CHECK(gr.orientation(r, c) == 0.0);
      }
  }
  SUBCASE("transpose swaps axes, keeps magnitudes") {
    std::mt19937_64 rng(3);
    Grid g = oracle::random_grid(7, 9, rng);
    auto a = compute_gradients(g), b = compute_gradients(g.transposed());
    CHECK(b.magnitude == a.magnitude.transposed());
  }
  SUBCASE("signed range distinguishes opposite directions") {
    Grid g(3, 3);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 3; ++c) g(r, c) = -static_cast<double>(c);
    CHECK(compute_gradients(g, OrientationRange::Signed360).orientation(1, 1) == doctest::Approx(180.0));
    CHECK(compute_gradients(g, OrientationRange::Unsigned180).orientation(1, 1) == 0.0);
  }
}

TEST_CASE("descriptor matches the brute-force histogram") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 6; ++trial) {
    Grid g = oracle::random_grid(24, 32, rng);
    for (bool signed360 : {false, true})
      for (bool l2 : {false, true})
        for (std::size_t bins : {6, 9}) {
          HogConfig cfg{8, bins, signed360 ? OrientationRange::Signed360 : OrientationRange::Unsigned180,
                        l2 ? CellNormalization::L2Unit : CellNormalization::None};
          auto ours = hog_descriptor(g, cfg).values;
          auto ref = oracle::brute_force_hog(g, 8, bins, signed360, l2);
          REQUIRE(ours.size() == ref.size());
          for (std::size_t i = 0; i < ours.size(); ++i) CHECK(ours[i] == doctest::Approx(ref[i]).epsilon(1e-12));
        }
  }
}

TEST_CASE("vertical step edge puts mass in the orientation-0 bin") {
  Grid g(8, 8, 0.0);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 4; c < 8; ++c) g(r, c) = 1.0;
  HogConfig cfg{4, 9, OrientationRange::Unsigned180, CellNormalization::None};
  auto h = hog_descriptor(g, cfg).values;
  auto ref = oracle::brute_force_hog(g, 4, 9, false, false);
  for (std::size_t cell = 0; cell < 4; ++cell) {
    double total = 0.0;
    for (std::size_t b = 0; b < 9; ++b) total += h[cell * 9 + b];
    CHECK(total > 0.0); // all four cells touch the edge column
    CHECK(h[cell * 9] == doctest::Approx(total));
    for (std::size_t b = 0; b < 9; ++b) CHECK(h[cell * 9 + b] == doctest::Approx(ref[cell * 9 + b]));
  }
}

TEST_CASE("descriptor properties") {
  std::mt19937_64 rng(5);
  SUBCASE("constant image gives zeros") {
    auto h = hog_descriptor(Grid(32, 32, 0.7), {8, 9}).values;
    CHECK(h.size() == 144);
    for (double v : h) CHECK(v == 0.0);
  }
  SUBCASE("L2 cells have unit or zero norm") {
    Grid g = oracle::random_grid(32, 32, rng);
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 16; ++c) g(r, c) = 0.5; // one flat cell
    auto h = hog_descriptor(g, {8, 9}).values;
    for (std::size_t off = 0; off < h.size(); off += 9) {
      double ss = 0.0;
      for (std::size_t b = 0; b < 9; ++b) ss += h[off + b] * h[off + b];
      CHECK((ss == 0.0 || std::abs(std::sqrt(ss) - 1.0) <= 1e-9));
    }
    CHECK(h[0] == 0.0);
  }
  SUBCASE("brightness shift is exact on dyadic images") {
    for (int t = 0; t < 10; ++t) {
      Grid g = oracle::dyadic_grid(16, 16, rng);
      Grid s = g;
      for (double& v : s.values()) v += 0.375;
      CHECK(hog_descriptor(g, {4, 9}).values == hog_descriptor(s, {4, 9}).values);
    }
  }
  SUBCASE("brightness shift on arbitrary doubles") {
    Grid g = oracle::random_grid(16, 16, rng);
    Grid s = g;
    for (double& v : s.values()) v += 0.1234567;
    auto a = hog_descriptor(g, {4, 9}).values, b = hog_descriptor(s, {4, 9}).values;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
  }
  SUBCASE("per-cell mass conservation without normalisation") {
    Grid g = oracle::random_grid(16, 16, rng);
    auto h = hog_descriptor(g, {HogConfig{16, 9, OrientationRange::Unsigned180, CellNormalization::None}}).values;
    double total = 0.0;
    for (double v : h) total += v;
    CHECK(total == doctest::Approx(oracle::gradient_mass(g)).epsilon(1e-12));
  }
  SUBCASE("shared gradient pass equals separate calls") {
    Grid g = oracle::random_grid(32, 32, rng);
    std::vector<HogConfig> cfgs = {{4, 9}, {8, 6}, {16, 12, OrientationRange::Signed360}, {8, 9}};
    auto many = hog_descriptors(g, cfgs);
    for (std::size_t i = 0; i < cfgs.size(); ++i) CHECK(many[i].values == hog_descriptor(g, cfgs[i]).values);
  }
  SUBCASE("non-tiling grid is rejected") {
    CHECK_THROWS_AS(hog_descriptor(Grid(30, 32), {8, 9}), ConfigurationError);
  }
}

TEST_CASE("feature table files round-trip") {
  const fs::path dir = fs::temp_directory_path() / ("cxr_test_features_" + std::to_string(::getpid()));
  FeatureTable t;
  t.config = {8, 6};
  t.image_rows = t.image_cols = 16;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 3; ++i) {
    FeatureRow r;
    r.sample_id = "s" + std::to_string(i);
    r.label = i == 0 ? ClassLabel::COVID19 : ClassLabel::Normal;
    if (i == 0) r.offset_days = 4;
    r.values = hog_descriptor(oracle::random_grid(16, 16, rng), t.config).values;
    t.rows.push_back(r);
  }
  write_feature_table(dir, "f", t);
  FeatureTable back = read_feature_table(dir / "f.csv");
  CHECK(back.config == t.config);
  REQUIRE(back.rows.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back.rows[i].sample_id == t.rows[i].sample_id);
    CHECK(back.rows[i].label == t.rows[i].label);
    CHECK(back.rows[i].offset_days == t.rows[i].offset_days);
    CHECK(back.rows[i].values == t.rows[i].values);
  }
  const std::string csv = feature_table_to_csv(t);
  CHECK(csv.substr(0, csv.find('\n')).starts_with("sample_id,label,offset,f0,f1,"));

  FeatureTable empty = t;
  empty.rows.clear();
  const std::string header_only = feature_table_to_csv(empty);
  CHECK(std::count(header_only.begin(), header_only.end(), '\n') == 1);
  fs::remove_all(dir);
}
