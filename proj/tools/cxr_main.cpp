// Command-line front end: ingest, extract, experiment, export-components.

#include "cxr/csv.hpp"
#include "cxr/error.hpp"
#include "cxr/experiments.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace cxr;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigurationError(fmt::format("cannot read '{}'", p.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string absolute_str(const fs::path& p) { return fs::absolute(p).lexically_normal().generic_string(); }

// Overlay for ingest/extract/export-components: a flat JSON object whose keys
// are long flag names. Values already given on the command line win.
json load_overlay(const std::string& path) {
  if (path.empty()) return json::object();
  json j = json::parse(slurp(path));
  if (!j.is_object()) throw ConfigurationError(fmt::format("{}: expected a JSON object", path));
  return j;
}

template <class T>
void overlay(const json& cfg, const char* key, const CLI::App* app, const char* flag, T& dst) {
  if (app->count(flag) > 0 || !cfg.contains(key) || cfg[key].is_null()) return;
  dst = cfg[key].get<T>();
}

// ---------------------------------------------------------------------------

struct IngestArgs {
  std::string manifest, out, config;
  std::size_t size = 400;
  std::optional<std::size_t> per_class;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
};

int cmd_ingest(IngestArgs a, const CLI::App* app) {
  const json cfg = load_overlay(a.config);
  overlay(cfg, "manifest", app, "--manifest", a.manifest);
  overlay(cfg, "out", app, "--out", a.out);
  overlay(cfg, "size", app, "--size", a.size);
  overlay(cfg, "jobs", app, "--jobs", a.jobs);
  if (!app->count("--per-class") && cfg.contains("per_class") && !cfg["per_class"].is_null())
    a.per_class = cfg["per_class"].get<std::size_t>();
  if (!app->count("--seed") && cfg.contains("seed") && !cfg["seed"].is_null()) a.seed = cfg["seed"].get<std::uint64_t>();
  if (a.manifest.empty() || a.out.empty()) throw ConfigurationError("ingest needs --manifest and --out");
  if (a.per_class && !a.seed) throw ConfigurationError("--per-class sub-sampling needs --seed");
  if (a.size == 0) throw ConfigurationError("--size must be positive");

  Manifest m = read_manifest(a.manifest);
  if (a.per_class) m = balance_subsample(m, *a.per_class, *a.seed);
  const fs::path out = a.out;
  const ImageSize size{a.size, a.size};

  std::vector<std::string> failure(m.size());
  parallel_for(m.size(), a.jobs, [&](std::size_t i) {
    const auto& e = m[i];
    try {
      write_grid(out / "images" / (e.sample_id + ".grid"), ingest_image(e.image_path, size));
    } catch (const std::exception& ex) {
      failure[i] = ex.what();
    }
  });

  std::vector<ManifestEntry> kept;
  std::string log = "sample_id,status,message\n";
  std::size_t n_failed = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto& e = m[i];
    if (failure[i].empty()) {
      ManifestEntry s = e;
      s.image_path = out / "images" / (e.sample_id + ".grid");
      kept.push_back(std::move(s));
      log += fmt::format("{},ok,\n", csv_escape(e.sample_id));
    } else {
      ++n_failed;
      log += fmt::format("{},failed,{}\n", csv_escape(e.sample_id), csv_escape(failure[i]));
    }
  }
  write_file(out / "manifest.csv", manifest_to_csv(Manifest(std::move(kept)), out));
  write_file(out / "ingest_log.csv", log);
  json spec = {{"command", "ingest"},
               {"manifest", absolute_str(a.manifest)},
               {"out", absolute_str(a.out)},
               {"size", a.size},
               {"per_class", a.per_class ? json(*a.per_class) : json(nullptr)},
               {"seed", a.seed ? json(*a.seed) : json(nullptr)},
               {"jobs", a.jobs}};
  write_file(out / "spec.json", spec.dump(2) + "\n");

  fmt::print("ingested {} of {} images into {}\n", m.size() - n_failed, m.size(), out.string());
  if (n_failed > 0) fmt::print(stderr, "warning: {} image(s) failed, see ingest_log.csv\n", n_failed);
  if (!m.empty() && n_failed == m.size()) return 1;
  return 0;
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string store, out, config;
  std::size_t cell = 16, bins = 9;
  std::string range = "unsigned180", norm = "l2unit";
  std::size_t jobs = 1;
};

int cmd_extract(ExtractArgs a, const CLI::App* app) {
  const json cfg = load_overlay(a.config);
  overlay(cfg, "store", app, "--store", a.store);
  overlay(cfg, "out", app, "--out", a.out);
  overlay(cfg, "cell", app, "--cell", a.cell);
  overlay(cfg, "bins", app, "--bins", a.bins);
  overlay(cfg, "range", app, "--range", a.range);
  overlay(cfg, "norm", app, "--norm", a.norm);
  overlay(cfg, "jobs", app, "--jobs", a.jobs);
  if (a.store.empty() || a.out.empty()) throw ConfigurationError("extract needs --store and --out");

  HogConfig hog;
  hog.cell_size = a.cell;
  hog.n_bins = a.bins;
  auto range = parse_orientation_range(a.range);
  auto norm = parse_cell_normalization(a.norm);
  if (!range) throw ConfigurationError(fmt::format("--range: unknown value '{}'", a.range));
  if (!norm) throw ConfigurationError(fmt::format("--norm: unknown value '{}'", a.norm));
  hog.orientation_range = *range;
  hog.cell_normalization = *norm;

  const fs::path store = a.store;
  Manifest m = read_manifest(store / "manifest.csv");
  const fs::path out = a.out;
  FeatureTable table;
  if (m.empty()) {
    // No image to read the size from; record the default store size.
    table.config = hog;
    table.image_rows = table.image_cols = ImageSize{}.rows;
    feature_dim(hog, table.image_rows, table.image_cols);
    fmt::print(stderr, "warning: store '{}' is empty, writing a header-only feature file\n", store.string());
  } else {
    Grid first = read_grid(m[0].image_path);
    ImageSize size{first.rows(), first.cols()};
    table = extract_features(m, size, {hog}, a.jobs).front();
    if (table.image_rows != size.rows || table.image_cols != size.cols)
      fmt::print(stderr, "note: cell {} does not tile {}x{}, using the central {}x{} window\n", a.cell, size.rows,
                 size.cols, table.image_rows, table.image_cols);
  }
  write_feature_table(out, "features", table);
  json spec = {{"command", "extract"},
               {"store", absolute_str(a.store)},
               {"out", absolute_str(a.out)},
               {"cell", a.cell},
               {"bins", a.bins},
               {"range", a.range},
               {"norm", a.norm},
               {"jobs", a.jobs}};
  write_file(out / "spec.json", spec.dump(2) + "\n");
  fmt::print("{} rows x {} features ({}) -> {}\n", table.rows.size(), table.dim(), hog.digest(),
             (out / "features.csv").string());
  return 0;
}

// ---------------------------------------------------------------------------

struct ExperimentArgs {
  std::string name, spec_path, manifest, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
};

int cmd_experiment(const ExperimentArgs& a) {
  std::vector<std::string> errors;
  ExperimentSpec spec;
  if (!a.spec_path.empty()) spec = spec_from_json(slurp(a.spec_path), errors, /*require_seed=*/!a.seed);
  else if (!a.seed) errors.push_back("seed: required (pass --seed or set it in the spec file)");
  if (auto id = parse_experiment_id(a.name)) spec.experiment = *id;
  else errors.push_back(fmt::format("experiment: unknown experiment '{}'", a.name));
  if (a.seed) spec.seed = *a.seed;
  if (!a.manifest.empty()) spec.manifest = a.manifest;
  if (!a.out.empty()) spec.out_dir = a.out;
  if (a.jobs) spec.jobs = *a.jobs;
  if (errors.empty()) errors = validate_spec(spec);
  if (!errors.empty()) {
    fmt::print(stderr, "invalid experiment spec:\n");
    for (const auto& e : errors) fmt::print(stderr, "  {}\n", e);
    return 2;
  }
  RunOutput out = run_experiment(spec);
  fmt::print("{}", out.report_text);
  return 0;
}

// ---------------------------------------------------------------------------

struct ExportArgs {
  std::string features, method = "dcv", out, config;
  double train_fraction = 0.6;
  std::optional<std::uint64_t> seed;
  std::size_t components = 3;
  double pca_variance = 0.95, lda_regularization = 1e-3, dcv_fraction = 0.8, sigma = 0.0;
  bool exact_null = false;
};

int cmd_export(ExportArgs a, const CLI::App* app) {
  const json cfg = load_overlay(a.config);
  overlay(cfg, "features", app, "--features", a.features);
  overlay(cfg, "method", app, "--method", a.method);
  overlay(cfg, "out", app, "--out", a.out);
  overlay(cfg, "train_fraction", app, "--train-fraction", a.train_fraction);
  overlay(cfg, "components", app, "--components", a.components);
  overlay(cfg, "pca_variance", app, "--pca-variance", a.pca_variance);
  overlay(cfg, "lda_regularization", app, "--lda-regularization", a.lda_regularization);
  overlay(cfg, "dcv_fraction", app, "--dcv-fraction", a.dcv_fraction);
  overlay(cfg, "sigma", app, "--sigma", a.sigma);
  overlay(cfg, "exact_null", app, "--exact-null", a.exact_null);
  if (!app->count("--seed") && cfg.contains("seed") && !cfg["seed"].is_null()) a.seed = cfg["seed"].get<std::uint64_t>();
  if (a.features.empty() || a.out.empty()) throw ConfigurationError("export-components needs --features and --out");
  if (!a.seed) throw ConfigurationError("export-components needs --seed (the train/test split is random)");
  auto method = parse_reduction_method(a.method);
  if (!method) throw ConfigurationError(fmt::format("--method: unknown method '{}'", a.method));

  FeatureTable table = read_feature_table(a.features);
  std::vector<ManifestEntry> entries;
  for (const auto& r : table.rows) {
    ManifestEntry e;
    e.sample_id = r.sample_id;
    e.patient_id = r.sample_id;
    e.class_label = r.label;
    e.offset_days = r.offset_days;
    entries.push_back(std::move(e));
  }
  Manifest m(std::move(entries));
  auto [train_m, test_m] = holdout_split(m, a.train_fraction, *a.seed);
  std::set<std::string> train_ids;
  for (const auto& e : train_m.entries()) train_ids.insert(e.sample_id);
  std::vector<std::size_t> tr, te;
  for (std::size_t i = 0; i < m.size(); ++i) (train_ids.contains(m[i].sample_id) ? tr : te).push_back(i);
  LabeledMatrix train = to_labeled(table, tr), test = to_labeled(table, te);

  ReductionModel model;
  switch (*method) {
  case ReductionMethod::PCA: model = fit_pca(train, a.pca_variance); break;
  case ReductionMethod::KPCA: model = fit_kpca(train, KernelSpec::rbf(a.sigma), a.components); break;
  case ReductionMethod::LDA: model = fit_lda(train, a.lda_regularization); break;
  case ReductionMethod::DCV:
    model = fit_dcv(train, DcvParams{a.exact_null ? DcvMode::ExactNull : DcvMode::PseudoNull, a.dcv_fraction});
    break;
  }
  const fs::path out = a.out;
  const std::string base = to_string(*method);
  PointCloud tr_cloud = top_components(model, embed(model, train, false), a.components);
  PointCloud te_cloud = top_components(model, embed(model, test, true), a.components);
  write_file(out / ("model_" + base + ".json"), model_to_json(model));
  write_file(out / ("pointcloud_" + base + "_train.csv"), point_cloud_to_csv(tr_cloud));
  write_file(out / ("pointcloud_" + base + "_test.csv"), point_cloud_to_csv(te_cloud));
  json spec = {{"command", "export-components"},
               {"features", absolute_str(a.features)},
               {"method", base},
               {"out", absolute_str(a.out)},
               {"train_fraction", a.train_fraction},
               {"seed", *a.seed},
               {"components", a.components},
               {"pca_variance", a.pca_variance},
               {"lda_regularization", a.lda_regularization},
               {"dcv_fraction", a.dcv_fraction},
               {"exact_null", a.exact_null},
               {"sigma", a.sigma}};
  write_file(out / "spec.json", spec.dump(2) + "\n");
  for (const auto& w : tr_cloud.warnings) fmt::print(stderr, "warning: {}\n", w);
  auto sep = separability_index(te_cloud);
  fmt::print("{}: {} -> {} dims, {} train / {} test, test separability {}\n", base, model.input_dim, model.output_dim,
             train.n(), test.n(), sep ? fmt::format("{:.6f}", *sep) : std::string("n/a"));
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Chest X-ray screening pipeline: HoG features, subspace reduction, SVM and evaluation"};
  app.require_subcommand(1);

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "Normalise manifest images into a lossless grid store");
  ingest->add_option("--manifest", ia.manifest, "Manifest CSV");
  ingest->add_option("--out", ia.out, "Store directory");
  ingest->add_option("--size", ia.size, "Square target size in pixels")->capture_default_str();
  ingest->add_option("--per-class", ia.per_class, "Balance by sub-sampling each class to N images");
  ingest->add_option("--seed", ia.seed, "Seed for sub-sampling");
  ingest->add_option("--jobs", ia.jobs, "Worker threads")->capture_default_str();
  ingest->add_option("--config", ia.config, "JSON file with default flag values");

  ExtractArgs ea;
  auto* extract = app.add_subcommand("extract", "Compute HoG descriptors for an ingested store");
  extract->add_option("--store", ea.store, "Store directory written by ingest");
  extract->add_option("--out", ea.out, "Output directory");
  extract->add_option("--cell", ea.cell, "Cell size in pixels")->capture_default_str();
  extract->add_option("--bins", ea.bins, "Orientation bins")->capture_default_str();
  extract->add_option("--range", ea.range, "unsigned180 or signed360")->capture_default_str();
  extract->add_option("--norm", ea.norm, "none or l2unit")->capture_default_str();
  extract->add_option("--jobs", ea.jobs, "Worker threads")->capture_default_str();
  extract->add_option("--seed", "Accepted for uniformity; extraction is deterministic");
  extract->add_option("--config", ea.config, "JSON file with default flag values");

  ExperimentArgs xa;
  auto* experiment = app.add_subcommand("experiment", "Run one of: reduce-compare, cellsize, soa, early");
  experiment->add_option("name", xa.name, "Experiment name")->required();
  experiment->add_option("--spec,--config", xa.spec_path, "Experiment spec JSON");
  experiment->add_option("--manifest", xa.manifest, "Manifest CSV (overrides the spec)");
  experiment->add_option("--seed", xa.seed, "Seed (overrides the spec)");
  experiment->add_option("--out", xa.out, "Output directory (overrides the spec)");
  experiment->add_option("--jobs", xa.jobs, "Worker threads (overrides the spec)");

  ExportArgs xe;
  auto* exporter = app.add_subcommand("export-components", "Fit one reduction on a hold-out split and export it");
  exporter->add_option("--features", xe.features, "Feature CSV written by extract");
  exporter->add_option("--method", xe.method, "pca, kpca, lda or dcv")->capture_default_str();
  exporter->add_option("--out", xe.out, "Output directory");
  exporter->add_option("--train-fraction", xe.train_fraction)->capture_default_str();
  exporter->add_option("--seed", xe.seed, "Seed for the hold-out split");
  exporter->add_option("--components", xe.components, "Point-cloud components (and KPCA dims)")->capture_default_str();
  exporter->add_option("--pca-variance", xe.pca_variance)->capture_default_str();
  exporter->add_option("--lda-regularization", xe.lda_regularization)->capture_default_str();
  exporter->add_option("--dcv-fraction", xe.dcv_fraction)->capture_default_str();
  exporter->add_flag("--exact-null", xe.exact_null, "DCV in the exact null space");
  exporter->add_option("--sigma", xe.sigma, "KPCA RBF width, <= 0 for the median heuristic")->capture_default_str();
  exporter->add_option("--jobs", "Accepted for uniformity");
  exporter->add_option("--config", xe.config, "JSON file with default flag values");

  CLI11_PARSE(app, argc, argv);

  try {
    if (ingest->parsed()) return cmd_ingest(ia, ingest);
    if (extract->parsed()) return cmd_extract(ea, extract);
    if (experiment->parsed()) return cmd_experiment(xa);
    if (exporter->parsed()) return cmd_export(xe, exporter);
  } catch (const cxr::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const nlohmann::json::exception& e) {
    fmt::print(stderr, "error: bad configuration file: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 1;
}
