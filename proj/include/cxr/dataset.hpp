#pragma once

#include "cxr/grid.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cxr {

/// The four diagnostic groups of the screening corpus, in canonical order.
enum class ClassLabel : std::uint8_t { COVID19 = 0, PneumoniaNonCovid = 1, InfiltrationNonCovid = 2, Normal = 3 };

inline constexpr std::array<ClassLabel, 4> kAllClasses = {
    ClassLabel::COVID19, ClassLabel::PneumoniaNonCovid, ClassLabel::InfiltrationNonCovid, ClassLabel::Normal};

/// Manifest token: covid, pneumonia, infiltration, normal.
std::string_view to_token(ClassLabel label);
/// Human-readable name used in tables and plots.
std::string_view display_name(ClassLabel label);
std::optional<ClassLabel> parse_class_label(std::string_view token);
inline int class_index(ClassLabel label) { return static_cast<int>(label); }

enum class CovidStage { Early, Mid, Late };

std::string_view to_string(CovidStage stage);

/// Stage from days since symptom onset: <=3 early, (3,10] mid, >10 late.
CovidStage stage_of(std::uint32_t offset_days);

struct ImageSample {
  std::string sample_id;
  std::string patient_id;
  ClassLabel class_label = ClassLabel::Normal;
  std::optional<std::uint32_t> offset_days;
  Grid pixels;
};

struct ManifestEntry {
  std::string sample_id;
  std::string patient_id;
  ClassLabel class_label = ClassLabel::Normal;
  std::optional<std::uint32_t> offset_days;
  std::filesystem::path image_path;
  std::string source;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Ordered list of corpus entries with unique sample ids.
class Manifest {
public:
  Manifest() = default;
  /// Validates uniqueness and offset placement; throws ManifestError.
  explicit Manifest(std::vector<ManifestEntry> entries);

  const std::vector<ManifestEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const ManifestEntry& operator[](std::size_t i) const { return entries_[i]; }

  std::map<ClassLabel, std::size_t> class_counts() const;
  /// Entries whose label is in `classes`, in manifest order.
  Manifest restricted_to(const std::vector<ClassLabel>& classes) const;

  friend bool operator==(const Manifest&, const Manifest&) = default;

private:
  std::vector<ManifestEntry> entries_;
};

/// Parses the manifest CSV. Relative image paths are resolved against the
/// directory containing the manifest.
Manifest read_manifest(const std::filesystem::path& path);
/// Serialises a manifest. Paths are written as stored, relative to `base`
/// when they lie under it.
std::string manifest_to_csv(const Manifest& manifest, const std::filesystem::path& base = {});

struct FoldPlan {
  std::uint32_t k = 1;
  std::uint64_t seed = 0;
  std::map<std::string, std::uint32_t> assignment;

  /// Indices (into `manifest`) of the samples held out in `fold`.
  std::vector<std::size_t> test_indices(const Manifest& manifest, std::uint32_t fold) const;
  std::vector<std::size_t> train_indices(const Manifest& manifest, std::uint32_t fold) const;

  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

/// `sample_id,fold` rows in manifest order.
std::string fold_plan_to_csv(const FoldPlan& plan, const Manifest& manifest);

// ---------------------------------------------------------------------------
// Ingestion

struct ImageSize {
  std::size_t rows = 400;
  std::size_t cols = 400;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Decodes an image (8/16-bit, gray or colour, or a stored grid), converts to
/// BT.601 luminance, divides by the bit-depth maximum and resamples
/// bilinearly to `target`. Throws IngestionError naming the path.
Grid ingest_image(const std::filesystem::path& path, ImageSize target = {});

/// Bilinear resampling with pixel-centre alignment. Identity when the size
/// already matches.
Grid resize_bilinear(const Grid& src, ImageSize target);

/// Lossless store format for normalised grids: magic "CXRGRID1", two
/// little-endian uint64 dimensions, then row-major little-endian float64.
void write_grid(const std::filesystem::path& path, const Grid& grid);
std::string encode_grid(const Grid& grid);
Grid read_grid(const std::filesystem::path& path);

/// Loads one manifest entry into a sample.
ImageSample load_sample(const ManifestEntry& entry, ImageSize target = {});

// ---------------------------------------------------------------------------
// Sampling and partitions. All are pure functions of (inputs, seed).

/// Uniformly sub-samples every class down to `per_class` entries.
Manifest balance_subsample(const Manifest& manifest, std::size_t per_class, std::uint64_t seed);

/// Stratified k-fold: per-class fold sizes differ by at most one.
FoldPlan stratified_kfold(const Manifest& manifest, std::uint32_t k, std::uint64_t seed);

/// Stratified hold-out. Each class contributes floor(f*n + 0.5) training rows.
std::pair<Manifest, Manifest> holdout_split(const Manifest& manifest, double train_fraction,
                                            std::uint64_t seed);

} // namespace cxr
