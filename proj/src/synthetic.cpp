#include "cxr/csv.hpp"
#include "cxr/error.hpp"
#include "cxr/experiments.hpp"

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <numbers>
#include <random>

namespace cxr {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double unit_open(std::mt19937_64& rng) {
  // (0,1), 53-bit resolution
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

// Box-Muller; independent of the standard library's distributions.
double gaussian(std::mt19937_64& rng) {
  const double u1 = unit_open(rng), u2 = unit_open(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void write_png(const fs::path& path, const Grid& g) {
  cv::Mat img(static_cast<int>(g.rows()), static_cast<int>(g.cols()), CV_8UC1);
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c)
      img.at<std::uint8_t>(static_cast<int>(r), static_cast<int>(c)) =
          static_cast<std::uint8_t>(std::lround(std::clamp(g(r, c), 0.0, 1.0) * 255.0));
  if (!cv::imwrite(path.string(), img)) throw IngestionError(fmt::format("failed to write '{}'", path.string()));
}

} // namespace

Grid synthetic_grating(ImageSize size, double orientation_deg, double period, double phase, double noise_sigma,
                       std::uint64_t noise_seed) {
  std::mt19937_64 rng(noise_seed);
  Grid g(size.rows, size.cols);
  const double th = orientation_deg * std::numbers::pi / 180.0;
  const double cx = std::cos(th), sy = std::sin(th);
  for (std::size_t r = 0; r < size.rows; ++r) {
    for (std::size_t c = 0; c < size.cols; ++c) {
      const double u = static_cast<double>(c) * cx + static_cast<double>(r) * sy;
      double v = 0.5 + 0.35 * std::sin(2.0 * std::numbers::pi * u / period + phase);
      if (noise_sigma > 0.0) v += noise_sigma * gaussian(rng);
      g(r, c) = std::clamp(v, 0.0, 1.0);
    }
  }
  return g;
}

fs::path write_synthetic_corpus(const fs::path& dir, const SyntheticCorpusOptions& opts) {
  fs::create_directories(dir / "images");
  std::vector<ManifestEntry> entries;
  for (ClassLabel label : opts.classes) {
    const bool blank = std::find(opts.blank_classes.begin(), opts.blank_classes.end(), label) != opts.blank_classes.end();
    const auto ci = static_cast<std::uint64_t>(class_index(label));
    for (std::size_t i = 0; i < opts.per_class; ++i) {
      std::uint64_t h = splitmix64(opts.seed ^ splitmix64(ci * 1000003ull + i));
      std::mt19937_64 rng(h);
      const double jitter = (2.0 * unit_open(rng) - 1.0) * opts.orientation_jitter;
      const double period = opts.min_period + unit_open(rng) * (opts.max_period - opts.min_period);
      const double phase = unit_open(rng) * 2.0 * std::numbers::pi;
      Grid g = blank ? Grid(opts.size.rows, opts.size.cols, 0.0)
                     : synthetic_grating(opts.size, opts.orientations[ci] + jitter, period, phase, opts.noise_sigma,
                                         splitmix64(h));
      ManifestEntry e;
      e.sample_id = fmt::format("{}_{:03}", to_token(label), i);
      e.patient_id = fmt::format("p_{}_{:03}", to_token(label), i / 2);
      e.class_label = label;
      if (label == ClassLabel::COVID19 && opts.covid_offsets) e.offset_days = static_cast<std::uint32_t>(i % 21);
      e.image_path = dir / "images" / (e.sample_id + ".png");
      e.source = "synthetic";
      write_png(e.image_path, g);
      entries.push_back(std::move(e));
    }
  }
  Manifest m(std::move(entries));
  const fs::path manifest_path = dir / "manifest.csv";
  write_file(manifest_path, manifest_to_csv(m, dir));
  return manifest_path;
}

} // namespace cxr
