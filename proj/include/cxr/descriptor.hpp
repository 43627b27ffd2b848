#pragma once

#include "cxr/dataset.hpp"
#include "cxr/grid.hpp"

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cxr {

enum class OrientationRange { Unsigned180, Signed360 };
enum class CellNormalization { None, L2Unit };

struct HogConfig {
  std::size_t cell_size = 16;
  std::size_t n_bins = 9;
  OrientationRange orientation_range = OrientationRange::Unsigned180;
  CellNormalization cell_normalization = CellNormalization::L2Unit;

  /// Canonical text form, e.g. "hog/cell=16/bins=9/range=unsigned180/norm=l2unit".
  std::string digest() const;

  friend bool operator==(const HogConfig&, const HogConfig&) = default;
};

std::string to_string(OrientationRange r);
std::string to_string(CellNormalization n);
std::optional<OrientationRange> parse_orientation_range(std::string_view s);
std::optional<CellNormalization> parse_cell_normalization(std::string_view s);

struct FeatureVector {
  std::vector<double> values;
  std::string config_digest;
};

/// (rows*cols)/cell^2*bins. Throws ConfigurationError when the grid does not
/// tile exactly or the config is invalid.
std::size_t feature_dim(const HogConfig& config, std::size_t rows, std::size_t cols);

struct Gradients {
  Grid magnitude;
  Grid orientation; // degrees in [0,180) or [0,360)
};

/// Central differences inside, one-sided at the border.
Gradients compute_gradients(const Grid& image, OrientationRange range = OrientationRange::Unsigned180);

/// Concatenated per-cell orientation histograms in row-major cell order.
/// Bin b is centred on b*width degrees; each pixel's magnitude is split
/// linearly between the two nearest centres, wrapping around the range.
FeatureVector hog_descriptor(const Grid& image, const HogConfig& config);

/// Same as calling hog_descriptor once per config, sharing the gradient pass
/// between configs with the same orientation range.
std::vector<FeatureVector> hog_descriptors(const Grid& image, const std::vector<HogConfig>& configs);

// ---------------------------------------------------------------------------
// Feature-matrix files

struct FeatureRow {
  std::string sample_id;
  ClassLabel label = ClassLabel::Normal;
  std::optional<std::uint32_t> offset_days;
  std::vector<double> values;
};

struct FeatureTable {
  HogConfig config;
  std::size_t image_rows = 0;
  std::size_t image_cols = 0;
  std::vector<FeatureRow> rows;

  std::size_t dim() const { return feature_dim(config, image_rows, image_cols); }
};

/// `sample_id,label,offset,f0,...,f{D-1}`; header only when empty.
std::string feature_table_to_csv(const FeatureTable& table);
/// Sidecar JSON recording the HogConfig, image size and digest.
std::string feature_table_sidecar(const FeatureTable& table);

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
void write_feature_table(const std::filesystem::path& dir, const std::string& stem, const FeatureTable& table);
/// Reads a CSV plus its sidecar; verifies the digest and row widths.
FeatureTable read_feature_table(const std::filesystem::path& csv_path);

} // namespace cxr
