// Drives run_cli in-process with tiny models and datasets. Covers exit codes,
// artifact layout, determinism of reports, and the sweep/score/plot chains.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "sepad/cli.hpp"
#include "sepad/config.hpp"
#include "sepad/image.hpp"

using namespace sepad;
namespace fs = std::filesystem;

namespace {

struct CliTempDir {
  fs::path path;
  explicit CliTempDir(const char* stem) : path(fs::temp_directory_path() / stem) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~CliTempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string sub(const char* name) const { return (path / name).string(); }
};

int cli(std::initializer_list<std::string> args) {
  std::vector<std::string> store{"sepad"};
  store.insert(store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(store.size());
  for (const std::string& s : store) argv.push_back(s.c_str());
  return run_cli(int(argv.size()), argv.data());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Tiny but complete setup: 32 px scenes, 16 px model input, 4 channels.
const std::initializer_list<std::string> kTinyData = {
    "--set", "canvas=32",    "--set", "n_train=4",  "--set", "n_validation=2",
    "--set", "n_test_good=3", "--set", "n_logical=3", "--set", "n_structural=2",
};
const std::initializer_list<std::string> kTinyModel = {
    "--set", "image_size=16", "--set", "channels=4", "--set", "pdn_widths=4,4,4",
    "--set", "ae_width=8",    "--set", "ae_bottleneck=4",
};

std::vector<std::string> cat(std::initializer_list<std::string> head,
                             std::initializer_list<std::string> a,
                             std::initializer_list<std::string> b = {}) {
  std::vector<std::string> out(head.begin(), head.end());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

int cliv(const std::vector<std::string>& args) {
  std::vector<std::string> store{"sepad"};
  store.insert(store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(store.size());
  for (const std::string& s : store) argv.push_back(s.c_str());
  return run_cli(int(argv.size()), argv.data());
}

// Generates the shared tiny dataset once per test binary run.
std::string tiny_dataset() {
  static CliTempDir dir("sepad_cli_data");
  static bool made = false;
  std::string root = dir.sub("loco");
  if (!made) {
    REQUIRE(cliv(cat({"gen-data", "--out", root, "--seed", "5"}, kTinyData)) == 0);
    made = true;
  }
  return root;
}

}  // namespace

TEST_CASE("cli gen-data writes a loadable deterministic dataset") {
  CliTempDir dir("sepad_cli_gen");
  std::string a = dir.sub("a"), b = dir.sub("b");
  REQUIRE(cliv(cat({"gen-data", "--out", a, "--seed", "5"}, kTinyData)) == 0);
  REQUIRE(cliv(cat({"gen-data", "--out", b, "--seed", "5"}, kTinyData)) == 0);

  CHECK(fs::exists(fs::path(a) / "run_config.txt"));
  CHECK(slurp(a + "/train/good/000.ppm") == slurp(b + "/train/good/000.ppm"));
  CHECK(slurp(a + "/test/logical_anomalies/001.ppm") ==
        slurp(b + "/test/logical_anomalies/001.ppm"));
  CHECK(slurp(a + "/run_config.txt") == slurp(b + "/run_config.txt"));

  // the resolved config written next to the data reproduces the generation
  RunConfig cfg = load_run_config(a + "/run_config.txt");
  CHECK(cfg.data.canvas == 32);
  CHECK(cfg.data.seed == 5);
  CHECK(cfg.data.n_train == 4);
}

TEST_CASE("cli rejects a missing config file with a usage exit code") {
  CliTempDir dir("sepad_cli_nospec");
  CHECK(cli({"gen-data", "--out", dir.sub("x"), "--spec", dir.sub("nowhere.cfg")}) == 2);
  CHECK(cli({"train", "--out", dir.sub("y"), "--config", dir.sub("nowhere.cfg")}) == 2);
}

TEST_CASE("cli rejects out-of-range and malformed overrides at parse time") {
  CliTempDir dir("sepad_cli_badset");
  std::string data = tiny_dataset();
  CHECK(cliv(cat({"train", "--data", data, "--out", dir.sub("r"), "--margin", "2.5"},
                 kTinyModel)) == 2);
  CHECK(cli({"train", "--data", data, "--out", dir.sub("r"), "--set", "margin"}) == 2);
  CHECK(cli({"train", "--data", data, "--out", dir.sub("r"), "--set", "lr=banana"}) == 2);
  CHECK(cli({"train", "--data", data, "--out", dir.sub("r"), "--set", "no_such_key=1"}) == 2);
}

TEST_CASE("cli usage errors: unknown flags, unknown commands, bare call") {
  CHECK(cli({"train", "--frobnicate"}) == 2);
  CHECK(cli({"no-such-command"}) == 2);
  CHECK(cli({}) == 2);
  CHECK(cli({"--help"}) == 0);
  CHECK(cli({"train", "--help"}) == 0);
  CHECK(cli({"--help-keys"}) == 0);
}

TEST_CASE("cli train writes log, checkpoint, and resolved config; dfsc=false logs zeros") {
  CliTempDir dir("sepad_cli_train");
  std::string data = tiny_dataset();
  std::string out = dir.sub("run");
  REQUIRE(cliv(cat({"train", "--data", data, "--out", out, "--iterations", "6", "--set",
                    "dfsc=false"},
                   kTinyModel)) == 0);

  CHECK(fs::exists(fs::path(out) / "model_final.ckpt"));
  RunConfig cfg = load_run_config(out + "/run_config.txt");
  CHECK(cfg.train.weights.dfsc_enabled == false);
  CHECK(cfg.train.iterations == 6);
  CHECK(cfg.model.image_size == 16);

  std::istringstream log(slurp(out + "/loss_log.csv"));
  std::string line;
  REQUIRE(std::getline(log, line));
  CHECK(line == "t,d_sa,d_ta,d_ts_masked,l_dfsc,total,lr");
  int rows = 0;
  while (std::getline(log, line)) {
    // l_dfsc is the 5th comma-separated column and must be exactly 0
    size_t pos = 0;
    for (int i = 0; i < 4; ++i) pos = line.find(',', pos) + 1;
    CHECK(line.substr(pos, line.find(',', pos) - pos) == "0");
    ++rows;
  }
  CHECK(rows == 6);
}

TEST_CASE("cli eval with oracle maps scores every defined metric at one") {
  CliTempDir dir("sepad_cli_oracle");
  std::string data = tiny_dataset();
  std::string out = dir.sub("eval");
  REQUIRE(cli({"eval", "--data", data, "--out", out, "--oracle-maps"}) == 0);

  std::istringstream kv(slurp(out + "/report_kv.txt"));
  std::string key, value;
  std::vector<std::string> keys;
  while (kv >> key >> value) {
    keys.push_back(key);
    // every metric pins at 1 up to the exact-sweep trapezoid accumulation
    if (key.rfind("n_", 0) != 0) CHECK(std::stod(value) == doctest::Approx(1.0).epsilon(1e-12));
  }
  const std::vector<std::string> want = {
      "n_good",        "n_logical",
      "n_structural",  "image_auroc",
      "image_auroc_logical", "image_auroc_structural",
      "pixel_auroc",   "aupro30",
      "spro05",        "aupro30_logical",
      "aupro30_structural",  "spro05_logical",
      "spro05_structural",
  };
  CHECK(keys == want);

  // a second run produces byte-identical reports
  std::string out2 = dir.sub("eval2");
  REQUIRE(cli({"eval", "--data", data, "--out", out2, "--oracle-maps"}) == 0);
  CHECK(slurp(out + "/report.txt") == slurp(out2 + "/report.txt"));
  CHECK(slurp(out + "/report_kv.txt") == slurp(out2 + "/report_kv.txt"));
}

TEST_CASE("cli eval needs a model unless oracle maps are requested") {
  CliTempDir dir("sepad_cli_nomodel");
  std::string data = tiny_dataset();
  CHECK(cli({"eval", "--data", data, "--out", dir.sub("e")}) == 2);
}

TEST_CASE("cli train, eval, score, and plot chain together") {
  CliTempDir dir("sepad_cli_chain");
  std::string data = tiny_dataset();
  std::string run = dir.sub("run");
  REQUIRE(cliv(cat({"train", "--data", data, "--out", run, "--iterations", "4"}, kTinyModel)) ==
          0);
  std::string ckpt = run + "/model_final.ckpt";

  std::string ev = dir.sub("eval");
  REQUIRE(cliv(cat({"eval", "--data", data, "--model", ckpt, "--out", ev}, kTinyModel)) == 0);
  std::string report = slurp(ev + "/report.txt");
  CHECK(report.find("image auroc") != std::string::npos);

  // eval must be idempotent byte for byte
  std::string ev2 = dir.sub("eval2");
  REQUIRE(cliv(cat({"eval", "--data", data, "--model", ckpt, "--out", ev2}, kTinyModel)) == 0);
  CHECK(slurp(ev + "/report.txt") == slurp(ev2 + "/report.txt"));
  CHECK(slurp(ev + "/report_kv.txt") == slurp(ev2 + "/report_kv.txt"));

  std::string maps = dir.sub("maps");
  REQUIRE(cliv(cat({"score", "--data", data, "--model", ckpt, "--out", maps}, kTinyModel)) == 0);
  std::istringstream man(slurp(maps + "/manifest.txt"));
  std::string line;
  int entries = 0;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string map_file, image_path, masks;
    int h = 0, w = 0;
    double score = 0.0;
    REQUIRE((is >> map_file >> h >> w >> score >> image_path >> masks));
    CHECK(h == 16);
    CHECK(w == 16);
    CHECK(fs::exists(fs::path(maps) / map_file));
    CHECK(fs::exists(image_path));
    ++entries;
  }
  CHECK(entries == 8);  // 3 good + 3 logical + 2 structural

  std::string plots = dir.sub("plots");
  REQUIRE(cli({"plot", "--maps", maps, "--out", plots}) == 0);
  Image heat = read_pnm(plots + "/test_good_000_heat.ppm");
  CHECK(heat.width == 16);
  CHECK(heat.height == 16);
  CHECK(heat.channels == 3);
  Image panel = read_pnm(plots + "/test_logical_anomalies_000_panel.ppm");
  CHECK(panel.width == 3 * 16 + 4);
  CHECK(panel.height == 16);

  // plot over a directory with no manifest is a usage error
  CHECK(cli({"plot", "--maps", dir.sub("missing"), "--out", dir.sub("p2")}) == 2);
}

TEST_CASE("cli single-point margin sweep reproduces the standalone train+eval reports") {
  CliTempDir dir("sepad_cli_sweep");
  std::string data = tiny_dataset();

  std::string sweep = dir.sub("sweep");
  REQUIRE(cliv(cat({"sweep", "--data", data, "--out", sweep, "--axis", "margin", "--margins",
                    "0.4", "--iterations", "4"},
                   kTinyModel)) == 0);
  CHECK(fs::exists(fs::path(sweep) / "sweep.txt"));
  std::string table = slurp(sweep + "/sweep.txt");
  CHECK(table.find("margin_0.4") != std::string::npos);

  std::string run = dir.sub("run");
  REQUIRE(cliv(cat({"train", "--data", data, "--out", run, "--iterations", "4", "--margin",
                    "0.4"},
                   kTinyModel)) == 0);
  std::string ev = dir.sub("eval");
  REQUIRE(cliv(cat({"eval", "--data", data, "--model", run + "/model_final.ckpt", "--out", ev,
                    "--set", "margin=0.4", "--set", "iterations=4"},
                   kTinyModel)) == 0);

  CHECK(slurp(sweep + "/margin_0.4/eval/report.txt") == slurp(ev + "/report.txt"));
  CHECK(slurp(sweep + "/margin_0.4/eval/report_kv.txt") == slurp(ev + "/report_kv.txt"));
  CHECK(slurp(sweep + "/margin_0.4/eval/run_config.txt") == slurp(ev + "/run_config.txt"));
}

TEST_CASE("cli ablation sweep emits the five cumulative rows in order") {
  CliTempDir dir("sepad_cli_abl");
  std::string data = tiny_dataset();
  std::string out = dir.sub("abl");
  REQUIRE(cliv(cat({"sweep", "--data", data, "--out", out, "--axis", "ablation", "--iterations",
                    "3"},
                   kTinyModel)) == 0);
  std::string table = slurp(out + "/sweep.txt");
  size_t a = table.find("baseline");
  size_t b = table.find("plus_in_relu");
  size_t c = table.find("plus_sigmoid");
  size_t d = table.find("plus_dfsc");
  size_t e = table.find("plus_momentum");
  REQUIRE(a != std::string::npos);
  REQUIRE(b != std::string::npos);
  REQUIRE(c != std::string::npos);
  REQUIRE(d != std::string::npos);
  REQUIRE(e != std::string::npos);
  CHECK(a < b);
  CHECK(b < c);
  CHECK(c < d);
  CHECK(d < e);

  // each point leaves its own fully resolved config
  RunConfig base = load_run_config(out + "/baseline/train/run_config.txt");
  CHECK(base.model.instance_norm_relu == false);
  CHECK(base.sigmoid_projection == false);
  CHECK(base.train.weights.dfsc_enabled == false);
  RunConfig full = load_run_config(out + "/plus_momentum/train/run_config.txt");
  CHECK(full.model.instance_norm_relu == true);
  CHECK(full.sigmoid_projection == true);
  CHECK(full.train.weights.dfsc_enabled == true);

  CHECK(cli({"sweep", "--data", data, "--out", dir.sub("bad"), "--axis", "sideways"}) == 2);
}

TEST_CASE("cli falls back to the data root environment variable") {
  CliTempDir dir("sepad_cli_env");
  std::string data = tiny_dataset();

  unsetenv("SEPAD_DATA_ROOT");
  CHECK(cliv(cat({"train", "--out", dir.sub("r1"), "--iterations", "1"}, kTinyModel)) == 2);

  setenv("SEPAD_DATA_ROOT", data.c_str(), 1);
  CHECK(cliv(cat({"train", "--out", dir.sub("r2"), "--iterations", "1"}, kTinyModel)) == 0);
  unsetenv("SEPAD_DATA_ROOT");
}
