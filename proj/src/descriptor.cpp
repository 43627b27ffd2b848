#include "cxr/descriptor.hpp"

#include "cxr/csv.hpp"
#include "cxr/error.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>

namespace cxr {

namespace fs = std::filesystem;

std::string to_string(OrientationRange r) {
  return r == OrientationRange::Unsigned180 ? "unsigned180" : "signed360";
}

std::string to_string(CellNormalization n) { return n == CellNormalization::None ? "none" : "l2unit"; }

std::optional<OrientationRange> parse_orientation_range(std::string_view s) {
  if (s == "unsigned180") return OrientationRange::Unsigned180;
  if (s == "signed360") return OrientationRange::Signed360;
  return std::nullopt;
}

std::optional<CellNormalization> parse_cell_normalization(std::string_view s) {
  if (s == "none") return CellNormalization::None;
  if (s == "l2unit") return CellNormalization::L2Unit;
  return std::nullopt;
}

std::string HogConfig::digest() const {
  return fmt::format("hog/cell={}/bins={}/range={}/norm={}", cell_size, n_bins, to_string(orientation_range),
                     to_string(cell_normalization));
}

std::size_t feature_dim(const HogConfig& config, std::size_t rows, std::size_t cols) {
  if (config.cell_size == 0) throw ConfigurationError("cell_size must be positive");
  if (config.n_bins < 2) throw ConfigurationError(fmt::format("n_bins must be >= 2, got {}", config.n_bins));
  if (rows == 0 || cols == 0) throw ConfigurationError("image has a zero dimension");
  if (rows % config.cell_size != 0 || cols % config.cell_size != 0)
    throw ConfigurationError(
        fmt::format("image {}x{} is not a multiple of cell size {}", rows, cols, config.cell_size));
  return (rows / config.cell_size) * (cols / config.cell_size) * config.n_bins;
}

Gradients compute_gradients(const Grid& image, OrientationRange range) {
  const std::size_t rows = image.rows(), cols = image.cols();
  Gradients g{Grid(rows, cols), Grid(rows, cols)};
  const double full = range == OrientationRange::Unsigned180 ? 180.0 : 360.0;
  constexpr double kDeg = 180.0 / std::numbers::pi;

  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double gx = 0.0, gy = 0.0;
      if (cols > 1) {
        if (c == 0)
          gx = image(r, 1) - image(r, 0);
        else if (c == cols - 1)
          gx = image(r, c) - image(r, c - 1);
        else
          gx = (image(r, c + 1) - image(r, c - 1)) / 2.0;
      }
      if (rows > 1) {
        if (r == 0)
          gy = image(1, c) - image(0, c);
        else if (r == rows - 1)
          gy = image(r, c) - image(r - 1, c);
        else
          gy = (image(r + 1, c) - image(r - 1, c)) / 2.0;
      }
      g.magnitude(r, c) = std::sqrt(gx * gx + gy * gy);
      double theta = std::atan2(gy, gx) * kDeg; // [-180, 180]
      theta = std::fmod(theta + 360.0, full);
      if (theta >= full || theta < 0.0) theta = 0.0;
      g.orientation(r, c) = theta;
    }
  }
  return g;
}

namespace {

FeatureVector histogram_cells(const Gradients& grad, const HogConfig& config) {
  const std::size_t rows = grad.magnitude.rows(), cols = grad.magnitude.cols();
  const std::size_t dim = feature_dim(config, rows, cols);
  const std::size_t cell = config.cell_size, bins = config.n_bins;
  const double full = config.orientation_range == OrientationRange::Unsigned180 ? 180.0 : 360.0;
  const double width = full / static_cast<double>(bins);

  FeatureVector fv;
  fv.values.assign(dim, 0.0);
  fv.config_digest = config.digest();

  const std::size_t cells_x = cols / cell;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t cy = r / cell;
    for (std::size_t c = 0; c < cols; ++c) {
      const double m = grad.magnitude(r, c);
      if (m == 0.0) continue;
      double* hist = fv.values.data() + (cy * cells_x + c / cell) * bins;
      const double pos = grad.orientation(r, c) / width;
      const double fl = std::floor(pos);
      const double t = pos - fl;
      const std::size_t b0 = static_cast<std::size_t>(fl) % bins;
      const std::size_t b1 = (b0 + 1) % bins;
      hist[b0] += m * (1.0 - t);
      hist[b1] += m * t;
    }
  }

  if (config.cell_normalization == CellNormalization::L2Unit) {
    for (std::size_t off = 0; off < dim; off += bins) {
      double ss = 0.0;
      for (std::size_t b = 0; b < bins; ++b) ss += fv.values[off + b] * fv.values[off + b];
      if (ss == 0.0) continue;
      const double inv = 1.0 / std::sqrt(ss);
      for (std::size_t b = 0; b < bins; ++b) fv.values[off + b] *= inv;
    }
  }
  return fv;
}

} // namespace

FeatureVector hog_descriptor(const Grid& image, const HogConfig& config) {
  feature_dim(config, image.rows(), image.cols());
  return histogram_cells(compute_gradients(image, config.orientation_range), config);
}

std::vector<FeatureVector> hog_descriptors(const Grid& image, const std::vector<HogConfig>& configs) {
  for (const auto& cfg : configs) feature_dim(cfg, image.rows(), image.cols());
  std::optional<Gradients> unsigned_grad, signed_grad;
  std::vector<FeatureVector> out;
  out.reserve(configs.size());
  for (const auto& cfg : configs) {
    auto& slot = cfg.orientation_range == OrientationRange::Unsigned180 ? unsigned_grad : signed_grad;
    if (!slot) slot = compute_gradients(image, cfg.orientation_range);
    out.push_back(histogram_cells(*slot, cfg));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string feature_table_to_csv(const FeatureTable& table) {
  const std::size_t dim = table.dim();
  std::string out = "sample_id,label,offset";
  for (std::size_t i = 0; i < dim; ++i) out += fmt::format(",f{}", i);
  out += '\n';
  for (const auto& row : table.rows) {
    if (row.values.size() != dim)
      throw ShapeError(fmt::format("row '{}' has {} features, expected {}", row.sample_id, row.values.size(), dim));
    out += csv_escape(row.sample_id);
    out += ',';
    out += to_token(row.label);
    out += ',';
    if (row.offset_days) out += std::to_string(*row.offset_days);
    for (double v : row.values) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

std::string feature_table_sidecar(const FeatureTable& table) {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["cell_size"] = table.config.cell_size;
  j["n_bins"] = table.config.n_bins;
  j["orientation_range"] = to_string(table.config.orientation_range);
  j["cell_normalization"] = to_string(table.config.cell_normalization);
  j["image_rows"] = table.image_rows;
  j["image_cols"] = table.image_cols;
  j["dim"] = table.dim();
  j["config_digest"] = table.config.digest();
  j["n_samples"] = table.rows.size();
  return j.dump(2) + "\n";
}

void write_feature_table(const fs::path& dir, const std::string& stem, const FeatureTable& table) {
  write_file(dir / (stem + ".csv"), feature_table_to_csv(table));
  write_file(dir / (stem + ".json"), feature_table_sidecar(table));
}

FeatureTable read_feature_table(const fs::path& csv_path) {
  fs::path sidecar = csv_path;
  sidecar.replace_extension(".json");
  std::ifstream in(sidecar);
  if (!in) throw FormatError(fmt::format("missing sidecar '{}'", sidecar.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: {}", sidecar.string(), e.what()));
  }

  FeatureTable table;
  try {
    table.config.cell_size = j.at("cell_size").get<std::size_t>();
    table.config.n_bins = j.at("n_bins").get<std::size_t>();
    auto range = parse_orientation_range(j.at("orientation_range").get<std::string>());
    auto norm = parse_cell_normalization(j.at("cell_normalization").get<std::string>());
    if (!range || !norm) throw FormatError(fmt::format("{}: bad orientation/normalisation tag", sidecar.string()));
    table.config.orientation_range = *range;
    table.config.cell_normalization = *norm;
    table.image_rows = j.at("image_rows").get<std::size_t>();
    table.image_cols = j.at("image_cols").get<std::size_t>();
    if (j.at("config_digest").get<std::string>() != table.config.digest())
      throw FormatError(fmt::format("{}: config_digest does not match recorded HogConfig", sidecar.string()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("{}: {}", sidecar.string(), e.what()));
  }

  const std::size_t dim = table.dim();
  CsvTable csv = read_csv(csv_path);
  if (csv.header.size() != dim + 3 || csv.header[0] != "sample_id" || csv.header[1] != "label" ||
      csv.header[2] != "offset")
    throw FormatError(fmt::format("{}: header does not match a {}-dimensional feature matrix", csv_path.string(), dim));
  for (const auto& r : csv.rows) {
    FeatureRow row;
    row.sample_id = r[0];
    auto label = parse_class_label(r[1]);
    if (!label) throw FormatError(fmt::format("{}: unknown label '{}'", csv_path.string(), r[1]));
    row.label = *label;
    if (!r[2].empty()) row.offset_days = static_cast<std::uint32_t>(std::stoul(r[2]));
    row.values.reserve(dim);
    for (std::size_t i = 0; i < dim; ++i) row.values.push_back(std::stod(r[i + 3]));
    table.rows.push_back(std::move(row));
  }
  return table;
}

} // namespace cxr
