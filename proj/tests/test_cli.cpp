#include "oracles.hpp"

#include "cxr/experiments.hpp"

#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace cxr;

namespace {

const fs::path kRoot = fs::temp_directory_path() / ("cxr_test_cli_" + std::to_string(::getpid()));

struct Run {
  int status = -1;
  std::string out, err;
};

Run run_cli(const std::string& args) {
  const fs::path o = kRoot / "stdout.txt", e = kRoot / "stderr.txt";
  const std::string cmd = std::string(CXR_BINARY) + " " + args + " >" + o.string() + " 2>" + e.string();
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  r.out = slurp(o);
  r.err = slurp(e);
  return r;
}

std::string read(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path corpus(const std::string& name, bool offsets) {
  SyntheticCorpusOptions opts;
  opts.per_class = 4;
  opts.size = {48, 48};
  opts.classes = {ClassLabel::COVID19, ClassLabel::Normal};
  opts.covid_offsets = offsets;
  return write_synthetic_corpus(kRoot / name, opts);
}

} // namespace

TEST_CASE("ingest and extract") {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
  const fs::path manifest = corpus("corpus", true);
  std::ofstream(manifest.parent_path() / "images" / "normal_002.png", std::ios::trunc) << "not an image";

  const fs::path store = kRoot / "store";
  const std::string ingest = "ingest --manifest " + manifest.string() + " --out " + store.string() + " --size 50";
  Run r = run_cli(ingest);
  CHECK(r.status == 0);
  const std::string log = read(store / "ingest_log.csv");
  CHECK(log.starts_with("sample_id,status,message\n"));
  CHECK(log.find("normal_002,failed,") != std::string::npos);
  CHECK(std::count(log.begin(), log.end(), '\n') == 9);
  CHECK(fs::exists(store / "spec.json"));

  auto first = oracle::read_tree(store);
  CHECK(run_cli(ingest).status == 0);
  CHECK(oracle::read_tree(store) == first);

  r = run_cli("extract --store " + store.string() + " --out " + (kRoot / "feat").string() + " --cell 10 --bins 9");
  CHECK(r.status == 0);
  const std::string csv = read(kRoot / "feat" / "features.csv");
  const std::string header = csv.substr(0, csv.find('\n'));
  CHECK(std::count(header.begin(), header.end(), ',') + 1 == 5 * 5 * 9 + 3);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 8);

  r = run_cli("extract --store " + store.string() + " --out " + (kRoot / "crop").string() + " --cell 7");
  CHECK(r.status == 0);
  CHECK(r.err.find("using the central 49x49 window") != std::string::npos);

  r = run_cli("extract --store " + store.string() + " --out " + (kRoot / "bad").string() + " --bins 1");
  CHECK(r.status != 0);
  CHECK(r.err.starts_with("error: "));

  const fs::path empty = kRoot / "empty";
  fs::create_directories(empty);
  std::ofstream(empty / "manifest.csv") << "sample_id,patient_id,class_label,offset_days,image_path,source\n";
  r = run_cli("extract --store " + empty.string() + " --out " + (kRoot / "feat_empty").string() + " --cell 10");
  CHECK(r.status == 0);
  const std::string only = read(kRoot / "feat_empty" / "features.csv");
  CHECK(std::count(only.begin(), only.end(), '\n') == 1);

  r = run_cli("export-components --features " + (kRoot / "feat" / "features.csv").string() + " --method pca --out " +
          (kRoot / "export").string());
  CHECK(r.status != 0); // no seed
  r = run_cli("export-components --features " + (kRoot / "feat" / "features.csv").string() + " --method pca --out " +
          (kRoot / "export").string() + " --seed 3");
  CHECK(r.status == 0);
  CHECK(fs::exists(kRoot / "export" / "model_pca.json"));
}

TEST_CASE("experiment command") {
  fs::create_directories(kRoot);
  const fs::path manifest = corpus("plain", false);
  ExperimentSpec spec;
  spec.manifest = manifest;
  spec.image_size = {48, 48};
  spec.cell_sizes = {8, 16};
  spec.selected_cell_size = 16;
  spec.k = 2;
  spec.seed = 9;
  spec.out_dir = kRoot / "early";
  std::ofstream(kRoot / "spec.json") << spec_to_json(spec);

  Run r = run_cli("experiment early --spec " + (kRoot / "spec.json").string());
  CHECK(r.status == 0);
  CHECK(r.out.find("no staged COVID samples") != std::string::npos);
  CHECK(fs::exists(spec.out_dir / "spec.json"));

  std::ofstream(kRoot / "bad.json") << "{\"experiment\": \"early\", \"k\": \"ten\"}";
  r = run_cli("experiment early --spec " + (kRoot / "bad.json").string());
  CHECK(r.status == 2);
  CHECK(r.err.find("k: ") != std::string::npos);

  r = run_cli("experiment nonsense --seed 1 --manifest " + manifest.string());
  CHECK(r.status == 2);
  fs::remove_all(kRoot);
}
