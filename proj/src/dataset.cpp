#include "cxr/dataset.hpp"

#include "cxr/csv.hpp"
#include "cxr/error.hpp"

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace cxr {

namespace fs = std::filesystem;

std::string_view to_token(ClassLabel label) {
  switch (label) {
  case ClassLabel::COVID19: return "covid";
  case ClassLabel::PneumoniaNonCovid: return "pneumonia";
  case ClassLabel::InfiltrationNonCovid: return "infiltration";
  case ClassLabel::Normal: return "normal";
  }
  return "?";
}

std::string_view display_name(ClassLabel label) {
  switch (label) {
  case ClassLabel::COVID19: return "COVID-19";
  case ClassLabel::PneumoniaNonCovid: return "Pneumonia";
  case ClassLabel::InfiltrationNonCovid: return "Infiltration";
  case ClassLabel::Normal: return "Normal";
  }
  return "?";
}

std::optional<ClassLabel> parse_class_label(std::string_view token) {
  for (ClassLabel c : kAllClasses)
    if (to_token(c) == token) return c;
  return std::nullopt;
}

std::string_view to_string(CovidStage stage) {
  switch (stage) {
  case CovidStage::Early: return "early";
  case CovidStage::Mid: return "mid";
  case CovidStage::Late: return "late";
  }
  return "?";
}

CovidStage stage_of(std::uint32_t offset_days) {
  if (offset_days <= 3) return CovidStage::Early;
  if (offset_days <= 10) return CovidStage::Mid;
  return CovidStage::Late;
}

// ---------------------------------------------------------------------------
// Manifest

Manifest::Manifest(std::vector<ManifestEntry> entries) : entries_(std::move(entries)) {
  std::set<std::string_view> seen;
  for (const auto& e : entries_) {
    if (e.sample_id.empty()) throw ManifestError("empty sample_id");
    if (!seen.insert(e.sample_id).second)
      throw ManifestError(fmt::format("duplicate sample_id '{}'", e.sample_id));
    if (e.offset_days && e.class_label != ClassLabel::COVID19)
      throw ManifestError(
          fmt::format("sample '{}': offset_days is only meaningful for covid entries", e.sample_id));
  }
}

std::map<ClassLabel, std::size_t> Manifest::class_counts() const {
  std::map<ClassLabel, std::size_t> counts;
  for (const auto& e : entries_) ++counts[e.class_label];
  return counts;
}

Manifest Manifest::restricted_to(const std::vector<ClassLabel>& classes) const {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries_)
    if (std::find(classes.begin(), classes.end(), e.class_label) != classes.end()) out.push_back(e);
  return Manifest(std::move(out));
}

namespace {

constexpr std::string_view kManifestHeader = "sample_id,patient_id,class_label,offset_days,image_path,source";

std::optional<std::uint32_t> parse_offset(const std::string& field, const std::string& id) {
  if (field.empty()) return std::nullopt;
  std::uint64_t v = 0;
  for (char ch : field) {
    if (ch < '0' || ch > '9')
      throw ManifestError(fmt::format("sample '{}': offset_days '{}' is not a non-negative integer", id, field));
    v = v * 10 + static_cast<std::uint64_t>(ch - '0');
    if (v > UINT32_MAX) throw ManifestError(fmt::format("sample '{}': offset_days out of range", id));
  }
  return static_cast<std::uint32_t>(v);
}

} // namespace

Manifest read_manifest(const fs::path& path) {
  CsvTable table = read_csv(path);
  const char* names[] = {"sample_id", "patient_id", "class_label", "offset_days", "image_path", "source"};
  int col[6];
  for (int i = 0; i < 6; ++i) {
    col[i] = table.column(names[i]);
    if (col[i] < 0)
      throw ManifestError(fmt::format("{}: missing column '{}' (expected header {})", path.string(), names[i],
                                      kManifestHeader));
  }
  const fs::path base = path.parent_path();
  std::vector<ManifestEntry> entries;
  entries.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    ManifestEntry e;
    e.sample_id = row[col[0]];
    e.patient_id = row[col[1]];
    auto label = parse_class_label(row[col[2]]);
    if (!label)
      throw ManifestError(fmt::format("sample '{}': unknown class_label '{}'", e.sample_id, row[col[2]]));
    e.class_label = *label;
    e.offset_days = parse_offset(row[col[3]], e.sample_id);
    fs::path p = row[col[4]];
    e.image_path = p.is_relative() && !base.empty() ? base / p : p;
    e.source = row[col[5]];
    entries.push_back(std::move(e));
  }
  return Manifest(std::move(entries));
}

std::string manifest_to_csv(const Manifest& manifest, const fs::path& base) {
  std::string out(kManifestHeader);
  out += '\n';
  for (const auto& e : manifest.entries()) {
    fs::path p = e.image_path;
    if (!base.empty()) {
      auto rel = p.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") p = rel;
    }
    out += fmt::format("{},{},{},{},{},{}\n", csv_escape(e.sample_id), csv_escape(e.patient_id),
                       to_token(e.class_label), e.offset_days ? std::to_string(*e.offset_days) : "",
                       csv_escape(p.generic_string()), csv_escape(e.source));
  }
  return out;
}

std::vector<std::size_t> FoldPlan::test_indices(const Manifest& manifest, std::uint32_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    auto it = assignment.find(manifest[i].sample_id);
    if (it == assignment.end())
      throw PairingError(fmt::format("sample '{}' is not in the fold plan", manifest[i].sample_id));
    if (it->second == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::train_indices(const Manifest& manifest, std::uint32_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    auto it = assignment.find(manifest[i].sample_id);
    if (it == assignment.end())
      throw PairingError(fmt::format("sample '{}' is not in the fold plan", manifest[i].sample_id));
    if (it->second != fold) out.push_back(i);
  }
  return out;
}

std::string fold_plan_to_csv(const FoldPlan& plan, const Manifest& manifest) {
  std::string out = "sample_id,fold\n";
  for (const auto& e : manifest.entries()) {
    auto it = plan.assignment.find(e.sample_id);
    if (it == plan.assignment.end()) continue;
    out += fmt::format("{},{}\n", csv_escape(e.sample_id), it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ingestion

namespace {

constexpr char kGridMagic[8] = {'C', 'X', 'R', 'G', 'R', 'I', 'D', '1'};

bool has_grid_magic(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char buf[8] = {};
  in.read(buf, 8);
  return in.gcount() == 8 && std::memcmp(buf, kGridMagic, 8) == 0;
}

template <class T>
void put_le(std::string& out, T value) {
  static_assert(std::endian::native == std::endian::little, "store format assumes little-endian host");
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

Grid decode_with_opencv(const fs::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_ANYCOLOR);
  if (img.empty()) throw IngestionError(fmt::format("cannot decode image '{}'", path.string()));
  if (img.rows == 0 || img.cols == 0) throw IngestionError(fmt::format("zero-dimension image '{}'", path.string()));

  double maxval = 0.0;
  switch (img.depth()) {
  case CV_8U: maxval = 255.0; break;
  case CV_16U: maxval = 65535.0; break;
  default:
    throw IngestionError(fmt::format("unsupported bit depth in '{}' (need 8- or 16-bit)", path.string()));
  }
  const int channels = img.channels();
  if (channels != 1 && channels != 3 && channels != 4)
    throw IngestionError(fmt::format("unsupported channel count {} in '{}'", channels, path.string()));

  cv::Mat as_double;
  img.convertTo(as_double, CV_MAKETYPE(CV_64F, channels));

  Grid g(static_cast<std::size_t>(img.rows), static_cast<std::size_t>(img.cols));
  for (int r = 0; r < img.rows; ++r) {
    const double* row = as_double.ptr<double>(r);
    for (int c = 0; c < img.cols; ++c) {
      double v;
      if (channels == 1) {
        v = row[c];
      } else {
        // OpenCV decodes colour as BGR(A)
        const double* px = row + static_cast<std::ptrdiff_t>(c) * channels;
        v = 0.299 * px[2] + 0.587 * px[1] + 0.114 * px[0];
      }
      g(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = std::clamp(v / maxval, 0.0, 1.0);
    }
  }
  return g;
}

} // namespace

std::string encode_grid(const Grid& grid) {
  std::string out(kGridMagic, 8);
  out.reserve(8 + 16 + grid.size() * 8);
  put_le<std::uint64_t>(out, grid.rows());
  put_le<std::uint64_t>(out, grid.cols());
  for (double v : grid.values()) put_le<double>(out, v);
  return out;
}

void write_grid(const fs::path& path, const Grid& grid) { write_file(path, encode_grid(grid)); }

Grid read_grid(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError(fmt::format("cannot open '{}'", path.string()));
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kGridMagic, 8) != 0)
    throw IngestionError(fmt::format("'{}' is not a stored grid", path.string()));
  std::uint64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 8);
  in.read(reinterpret_cast<char*>(&cols), 8);
  if (!in) throw IngestionError(fmt::format("truncated grid header in '{}'", path.string()));
  if (rows == 0 || cols == 0) throw IngestionError(fmt::format("zero-dimension image '{}'", path.string()));
  if (rows > (1u << 16) || cols > (1u << 16))
    throw IngestionError(fmt::format("implausible grid size in '{}'", path.string()));
  Grid g(rows, cols);
  auto values = g.values();
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  if (static_cast<std::size_t>(in.gcount()) != values.size_bytes())
    throw IngestionError(fmt::format("truncated grid data in '{}'", path.string()));
  for (double v : values)
    if (!std::isfinite(v)) throw IngestionError(fmt::format("non-finite pixel in '{}'", path.string()));
  return g;
}

Grid resize_bilinear(const Grid& src, ImageSize target) {
  if (src.empty()) throw IngestionError("cannot resample an empty image");
  if (target.rows == 0 || target.cols == 0) throw IngestionError("zero target size");
  if (src.rows() == target.rows && src.cols() == target.cols) return src;

  struct Tap {
    std::size_t i0, i1;
    double t;
  };
  auto taps = [](std::size_t n_src, std::size_t n_dst) {
    std::vector<Tap> out(n_dst);
    const double scale = static_cast<double>(n_src) / static_cast<double>(n_dst);
    for (std::size_t d = 0; d < n_dst; ++d) {
      double s = (static_cast<double>(d) + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(n_src - 1));
      auto i0 = static_cast<std::size_t>(std::floor(s));
      std::size_t i1 = std::min(i0 + 1, n_src - 1);
      out[d] = {i0, i1, s - static_cast<double>(i0)};
    }
    return out;
  };
  const auto row_taps = taps(src.rows(), target.rows);
  const auto col_taps = taps(src.cols(), target.cols);

  Grid out(target.rows, target.cols);
  for (std::size_t r = 0; r < target.rows; ++r) {
    const auto& rt = row_taps[r];
    for (std::size_t c = 0; c < target.cols; ++c) {
      const auto& ct = col_taps[c];
      const double top = src(rt.i0, ct.i0) + ct.t * (src(rt.i0, ct.i1) - src(rt.i0, ct.i0));
      const double bot = src(rt.i1, ct.i0) + ct.t * (src(rt.i1, ct.i1) - src(rt.i1, ct.i0));
      out(r, c) = std::clamp(top + rt.t * (bot - top), 0.0, 1.0);
    }
  }
  return out;
}

Grid ingest_image(const fs::path& path, ImageSize target) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw IngestionError(fmt::format("no such image file '{}'", path.string()));
  Grid decoded = has_grid_magic(path) ? read_grid(path) : decode_with_opencv(path);
  for (double& v : decoded.values()) v = std::clamp(v, 0.0, 1.0);
  return resize_bilinear(decoded, target);
}

ImageSample load_sample(const ManifestEntry& entry, ImageSize target) {
  ImageSample s;
  s.sample_id = entry.sample_id;
  s.patient_id = entry.patient_id;
  s.class_label = entry.class_label;
  s.offset_days = entry.offset_days;
  s.pixels = ingest_image(entry.image_path, target);
  return s;
}

// ---------------------------------------------------------------------------
// Sampling

namespace {

std::map<ClassLabel, std::vector<std::size_t>> indices_by_class(const Manifest& m) {
  std::map<ClassLabel, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < m.size(); ++i) out[m[i].class_label].push_back(i);
  return out;
}

Manifest select(const Manifest& m, std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  std::vector<ManifestEntry> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(m[i]);
  return Manifest(std::move(out));
}

} // namespace

Manifest balance_subsample(const Manifest& manifest, std::size_t per_class, std::uint64_t seed) {
  if (per_class == 0) throw ConfigurationError("per_class must be positive");
  auto groups = indices_by_class(manifest);
  for (const auto& [label, idx] : groups)
    if (idx.size() < per_class)
      throw InsufficientSamplesError(fmt::format("class '{}' has {} entries, fewer than the requested {}",
                                                 to_token(label), idx.size(), per_class));

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep;
  for (auto& [label, idx] : groups) {
    if (idx.size() > per_class) {
      stable_shuffle(idx, rng);
      idx.resize(per_class);
    }
    keep.insert(keep.end(), idx.begin(), idx.end());
  }
  return select(manifest, std::move(keep));
}

FoldPlan stratified_kfold(const Manifest& manifest, std::uint32_t k, std::uint64_t seed) {
  if (k == 0) throw StratificationError("k must be positive");
  auto groups = indices_by_class(manifest);
  for (const auto& [label, idx] : groups)
    if (idx.size() < k)
      throw StratificationError(
          fmt::format("class '{}' has {} samples, fewer than k = {}", to_token(label), idx.size(), k));

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  std::mt19937_64 rng(seed);
  std::uint32_t start = 0;
  for (auto& [label, idx] : groups) {
    stable_shuffle(idx, rng);
    for (std::size_t i = 0; i < idx.size(); ++i)
      plan.assignment[manifest[idx[i]].sample_id] = static_cast<std::uint32_t>((start + i) % k);
    // rotate the starting fold so remainders spread across folds
    start = static_cast<std::uint32_t>((start + idx.size()) % k);
  }
  return plan;
}

std::pair<Manifest, Manifest> holdout_split(const Manifest& manifest, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw SplitError(fmt::format("train fraction {} outside (0,1)", train_fraction));
  auto groups = indices_by_class(manifest);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train, test;
  for (auto& [label, idx] : groups) {
    const auto n = idx.size();
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 0.5));
    if (n_train == 0 || n_train >= n)
      throw SplitError(fmt::format("class '{}' ({} samples) would leave an empty {} side at fraction {}",
                                   to_token(label), n, n_train == 0 ? "train" : "test", train_fraction));
    stable_shuffle(idx, rng);
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  return {select(manifest, std::move(train)), select(manifest, std::move(test))};
}

} // namespace cxr
