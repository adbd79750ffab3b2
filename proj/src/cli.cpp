// Command line driver: dataset generation, teacher pretraining, training,
// evaluation, map export, sweeps, and qualitative plots. All numeric work
// lives in the library; this file is flag plumbing plus orchestration.
//
// Configuration precedence per command: defaults, then --config file, then
// --set KEY=VALUE in order, then typed convenience flags. The fully resolved
// config is written as run_config.txt next to each command's outputs.

#include "sepad/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "sepad/config.hpp"
#include "sepad/dataset.hpp"
#include "sepad/image.hpp"
#include "sepad/kernels.hpp"
#include "sepad/losses.hpp"
#include "sepad/metrics.hpp"
#include "sepad/nets.hpp"
#include "sepad/scorer.hpp"
#include "sepad/trainer.hpp"

namespace sepad {
namespace {

namespace fs = std::filesystem;

int exit_code_for(Error::Kind k) {
  switch (k) {
    case Error::Kind::config:
      return 2;
    case Error::Kind::io:
    case Error::Kind::format:
    case Error::Kind::truncated:
    case Error::Kind::version:
    case Error::Kind::data:
      return 3;
    case Error::Kind::shape:
    case Error::Kind::numeric:
      return 4;
  }
  return 4;
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).generic_string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Error::Kind::io, "cannot create " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  f.write(body.data(), std::streamsize(body.size()));
  if (!f) throw Error(Error::Kind::io, "cannot write " + path);
}

// Config file + overrides shared by every subcommand.
struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flag_sets;  // typed flags, applied last
};

RunConfig build_config(const CommonOpts& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) cfg = load_run_config(o.config_path);
  for (const std::string& s : o.sets) {
    size_t eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(Error::Kind::config, "--set wants KEY=VALUE, got '" + s + "'");
    }
    apply_override(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [key, value] : o.flag_sets) apply_override(cfg, key, value);
  cfg.validate();
  return cfg;
}

std::string resolve_data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("SEPAD_DATA_ROOT"); env != nullptr && *env != '\0') {
    return env;
  }
  throw Error(Error::Kind::config, "no dataset root given: pass --data or set SEPAD_DATA_ROOT");
}

Tensor load_input(const std::string& path, int size) { return preprocess(read_pnm(path), size); }

Tensor resize_to(const Tensor& map, int h, int w) {
  if (map.dim(0) == h && map.dim(1) == w) return map;
  Tensor out({h, w});
  kern::resize_bilinear_forward(map.ptr(), 1, map.dim(0), map.dim(1), h, w, out.ptr());
  return out;
}

DefectCategory category_of(SampleLabel l) {
  if (l == SampleLabel::logical_anomaly) return DefectCategory::logical;
  if (l == SampleLabel::structural_anomaly) return DefectCategory::structural;
  return DefectCategory::none;
}

// --- gen-data ----------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
  DatasetIndex index = gen_mini_loco(cfg.data, out_dir);
  save_run_config(cfg, join(out_dir, "run_config.txt"));

  int good = 0, logical = 0, structural = 0;
  std::set<std::string> types;
  for (const SampleRef* s : index.in_split(Split::test)) {
    if (s->label == SampleLabel::good) ++good;
    else if (s->label == SampleLabel::logical_anomaly) ++logical;
    else ++structural;
    for (const AnnotationRef& a : s->annotations) types.insert(a.defect_type);
  }
  std::string type_list;
  for (const std::string& t : types) {
    if (!type_list.empty()) type_list += ", ";
    type_list += t;
  }
  std::printf("dataset %s: canvas %d, seed %llu\n", out_dir.c_str(), cfg.data.canvas,
              (unsigned long long)cfg.data.seed);
  std::printf("  train %zu  validation %zu  test %d good + %d logical + %d structural\n",
              index.in_split(Split::train).size(), index.in_split(Split::validation).size(),
              good, logical, structural);
  std::printf("  defect types: %s\n", type_list.c_str());
  return 0;
}

// --- pretrain-teacher ---------------------------------------------------------

// The teacher ships with seed-deterministic random weights; this command
// instead distills it from a frozen descriptor network of the same layout
// with doubled hidden widths and its own seed, by matching features on the
// training images (plain AdamW, constant rate). The result is a teacher
// adapted to the image statistics while everything stays self-contained.
int cmd_pretrain(const RunConfig& cfg, const std::string& data_root, const std::string& out_dir) {
  DatasetIndex index = load_loco_layout(data_root);
  std::vector<std::string> paths;
  for (const SampleRef* s : index.in_split(Split::train)) paths.push_back(s->image_path);

  TripletModel model = make_model(cfg.model, cfg.train.seed);

  ModelConfig wide = cfg.model;
  wide.pdn.widths = cfg.model.resolved_widths();
  for (int& w : wide.pdn.widths) w *= 2;
  wide.teacher_seed = derive_seed(cfg.model.teacher_seed, 101);
  TripletModel desc = make_model(wide, derive_seed(cfg.train.seed, 202));

  ParamSet m1, m2;  // AdamW moment estimates for the teacher arrays
  for (const auto& [name, t] : model.teacher.items) {
    m1.add(name, Tensor(t.shape));
    m2.add(name, Tensor(t.shape));
  }

  ensure_dir(out_dir);
  save_run_config(cfg, join(out_dir, "run_config.txt"));

  std::string log = "t,loss\n";
  const int64_t count = int64_t(paths.size());
  const int64_t every = std::max<int64_t>(1, cfg.train.iterations / 10);
  std::vector<int64_t> order;
  int64_t cached_epoch = -1;
  for (int64_t t = 0; t < cfg.train.iterations; ++t) {
    int64_t epoch = t / count;
    if (epoch != cached_epoch) {
      order = epoch_order(count, derive_seed(cfg.train.seed, 0x7e3ull), epoch);
      cached_epoch = epoch;
    }
    Tensor img = load_input(paths[size_t(order[size_t(t % count)])], cfg.model.image_size);

    ad::Tape tape;
    std::vector<ad::Var> tv = bind_params(tape, model.teacher, true);
    std::vector<ad::Var> dv = bind_params(tape, desc.teacher, false);
    ad::Var x = tape.constant(std::move(img));
    ad::Var loss = msd(teacher_graph(cfg.model, tv, x), teacher_graph(wide, dv, x));
    double lv = loss.scalar();
    if (!std::isfinite(lv)) {
      throw Error(Error::Kind::numeric, "non-finite teacher loss at step " + std::to_string(t));
    }
    tape.backward(loss);
    for (size_t i = 0; i < model.teacher.items.size(); ++i) {
      adamw_apply(model.teacher.items[i].second, tape.grad(tv[i]), m1.items[i].second,
                  m2.items[i].second, t + 1, cfg.train.lr, cfg.train);
    }

    char row[64];
    std::snprintf(row, sizeof(row), "%lld,%.17g\n", (long long)t, lv);
    log += row;
    if (t % every == 0 || t + 1 == cfg.train.iterations) {
      std::printf("pretrain step %6lld  loss %.6f\n", (long long)t, lv);
    }
  }
  write_text(join(out_dir, "pretrain_log.csv"), log);
  std::string ckpt = join(out_dir, "teacher.ckpt");
  save_model(model, ckpt);
  std::printf("teacher checkpoint %s\n", ckpt.c_str());
  return 0;
}

// --- train --------------------------------------------------------------------

std::string train_run(const RunConfig& cfg, const std::string& data_root,
                      const std::string& out_dir, const std::string& teacher_path, bool chatty) {
  DatasetIndex index = load_loco_layout(data_root);
  std::vector<std::string> paths;
  for (const SampleRef* s : index.in_split(Split::train)) paths.push_back(s->image_path);

  TripletModel model = make_model(cfg.model, cfg.train.seed);
  if (!teacher_path.empty()) {
    TripletModel pre = load_model(teacher_path);
    require_matching_config(cfg.model, pre.config);
    model.teacher = std::move(pre.teacher);
  }

  ensure_dir(out_dir);
  save_run_config(cfg, join(out_dir, "run_config.txt"));

  Trainer trainer(std::move(model), cfg.train);
  TrainDataSource src;
  src.count = int64_t(paths.size());
  src.fetch = [paths = std::move(paths), size = cfg.model.image_size](int64_t i) {
    return load_input(paths[size_t(i)], size);
  };

  const int64_t every = std::max<int64_t>(1, cfg.train.iterations / 10);
  std::string final_path = run_training(
      trainer, src, out_dir, [&](int64_t t, const LossBundle& lb, double lr) {
        if (chatty && (t % every == 0 || t + 1 == cfg.train.iterations)) {
          std::printf("step %6lld  lr %.3g  total %.5f  sa %.5f  ta %.5f  ts %.5f  dfsc %.5f\n",
                      (long long)t, lr, lb.total, lb.d_sa, lb.d_ta, lb.d_ts_masked, lb.l_dfsc);
        }
      });
  if (chatty) std::printf("final checkpoint %s\n", final_path.c_str());
  return final_path;
}

// --- eval ---------------------------------------------------------------------

EvalReport eval_run(const RunConfig& cfg, const std::string& data_root,
                    const std::string& model_path, const std::string& out_dir, bool oracle_maps) {
  DatasetIndex index = load_loco_layout(data_root);

  TripletModel model;
  CalibrationStats stats;
  if (!oracle_maps) {
    model = load_model(model_path);
    std::vector<Tensor> val;
    for (const SampleRef* s : index.in_split(Split::validation)) {
      val.push_back(load_input(s->image_path, model.config.image_size));
    }
    stats = calibrate(model, val, cfg.cal_q_low, cfg.cal_q_high);
  }

  std::vector<EvalItem> items;
  for (const SampleRef* s : index.in_split(Split::test)) {
    Image raw = read_pnm(s->image_path);
    EvalItem item;
    item.anomalous = s->label != SampleLabel::good;
    item.category = category_of(s->label);

    Tensor mask;  // union of the defect regions, empty for good images
    for (const AnnotationRef& a : s->annotations) {
      DefectAnnotation ann = load_annotation(a);
      if (ann.region.dim(0) != raw.height || ann.region.dim(1) != raw.width) {
        throw Error(Error::Kind::data, "mask resolution differs from image for " + s->id);
      }
      if (mask.numel() == 0) mask = Tensor({raw.height, raw.width});
      for (int64_t i = 0; i < ann.region.numel(); ++i) {
        if (ann.region.data[size_t(i)] != 0.0) mask.data[size_t(i)] = 1.0;
      }
      item.annotations.push_back(std::move(ann));
    }

    if (oracle_maps) {
      // Ground truth stands in for the model: separable scores and perfect
      // maps, so every defined metric must come out 1.0. Checks the metric
      // plumbing end to end.
      item.score = item.anomalous ? 1.0 : 0.0;
      item.map = item.anomalous ? mask : Tensor({raw.height, raw.width});
    } else {
      ScoreResult r = score_image(model, stats, preprocess(raw, model.config.image_size),
                                  cfg.sigmoid_projection);
      item.score = r.score;
      item.map = resize_to(r.map, raw.height, raw.width);
    }
    item.mask = std::move(mask);
    items.push_back(std::move(item));
  }

  EvalReport rep = evaluate(items);
  ensure_dir(out_dir);
  write_text(join(out_dir, "report.txt"), format_report(rep));
  write_text(join(out_dir, "report_kv.txt"), report_kv(rep));
  save_run_config(cfg, join(out_dir, "run_config.txt"));
  return rep;
}

// --- score --------------------------------------------------------------------

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "validation") return Split::validation;
  if (name == "test") return Split::test;
  throw Error(Error::Kind::config,
              "unknown split '" + name + "' (want train, validation, or test)");
}

int cmd_score(const RunConfig& cfg, const std::string& data_root, const std::string& model_path,
              const std::string& out_dir, const std::string& split_name) {
  Split split = parse_split(split_name);
  DatasetIndex index = load_loco_layout(data_root);
  TripletModel model = load_model(model_path);

  std::vector<Tensor> val;
  for (const SampleRef* s : index.in_split(Split::validation)) {
    val.push_back(load_input(s->image_path, model.config.image_size));
  }
  CalibrationStats stats = calibrate(model, val, cfg.cal_q_low, cfg.cal_q_high);

  ensure_dir(out_dir);
  // Manifest fields are space separated: map file, height, width, image
  // score, source image path, then the mask paths joined by ';' or '-'.
  std::string manifest;
  int n = 0;
  for (const SampleRef* s : index.in_split(split)) {
    ScoreResult r = score_image(model, stats, load_input(s->image_path, model.config.image_size),
                                cfg.sigmoid_projection);
    std::string stem = s->id;
    std::replace(stem.begin(), stem.end(), '/', '_');
    std::string map_file = stem + ".f32map";
    write_map_f32(join(out_dir, map_file), r.map);

    std::string masks;
    for (const AnnotationRef& a : s->annotations) {
      if (!masks.empty()) masks += ';';
      masks += a.mask_path;
    }
    if (masks.empty()) masks = "-";

    char nums[96];
    std::snprintf(nums, sizeof(nums), " %d %d %.17g ", r.map.dim(0), r.map.dim(1), r.score);
    manifest += map_file;
    manifest += nums;
    manifest += s->image_path;
    manifest += ' ';
    manifest += masks;
    manifest += '\n';
    ++n;
  }
  write_text(join(out_dir, "manifest.txt"), manifest);
  save_run_config(cfg, join(out_dir, "run_config.txt"));
  std::printf("wrote %d maps under %s\n", n, out_dir.c_str());
  return 0;
}

// --- sweep --------------------------------------------------------------------

std::vector<double> parse_margin_list(const std::string& csv) {
  std::vector<double> out;
  size_t pos = 0;
  while (pos <= csv.size()) {
    size_t comma = csv.find(',', pos);
    std::string item = csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
    const char* begin = item.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (item.empty() || end != begin + item.size() || !std::isfinite(v)) {
      throw Error(Error::Kind::config, "bad --margins entry '" + item + "'");
    }
    out.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

int cmd_sweep(const RunConfig& base, const std::string& data_root, const std::string& out_dir,
              const std::string& axis, const std::string& margins_csv) {
  struct Point {
    std::string name;
    RunConfig cfg;
  };
  std::vector<Point> pts;

  if (axis == "margin") {
    std::vector<double> grid = margins_csv.empty() ? std::vector<double>{0.0, 0.2, 0.4, 1.0, 2.0}
                                                   : parse_margin_list(margins_csv);
    for (double m : grid) {
      Point p;
      p.cfg = base;
      p.cfg.train.weights.margin = m;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "margin_%g", m);
      p.name = buf;
      pts.push_back(std::move(p));
    }
  } else if (axis == "ablation") {
    // Cumulative ladder from a stripped baseline: instance norm + decoder
    // ReLU, sigmoid projection, the margin constraint, then the EMA student.
    RunConfig c = base;
    c.model.instance_norm_relu = false;
    c.sigmoid_projection = false;
    c.train.weights.dfsc_enabled = false;
    c.train.ema_mode = EmaMode::off;
    auto push = [&](const char* name) { pts.push_back({name, c}); };
    push("baseline");
    c.model.instance_norm_relu = true;
    push("plus_in_relu");
    c.sigmoid_projection = true;
    push("plus_sigmoid");
    c.train.weights.dfsc_enabled = true;
    push("plus_dfsc");
    c.train.ema_mode = EmaMode::shadow;
    push("plus_momentum");
  } else {
    throw Error(Error::Kind::config, "unknown sweep axis '" + axis + "' (want margin or ablation)");
  }
  for (const Point& p : pts) p.cfg.validate();

  ensure_dir(out_dir);
  auto num = [](double v, int width) {
    char b[32];
    if (std::isnan(v)) std::snprintf(b, sizeof(b), "%*s", width, "na");
    else std::snprintf(b, sizeof(b), "%*.4f", width, v);
    return std::string(b);
  };
  std::string table = "point             image_auroc  logical  structural  pixel_auroc\n";
  for (const Point& p : pts) {
    std::printf("[%s]\n", p.name.c_str());
    std::string pdir = join(out_dir, p.name);
    std::string ckpt = train_run(p.cfg, data_root, join(pdir, "train"), "", true);
    EvalReport rep = eval_run(p.cfg, data_root, ckpt, join(pdir, "eval"), false);
    char name_col[32];
    std::snprintf(name_col, sizeof(name_col), "%-16s", p.name.c_str());
    table += name_col;
    table += "  " + num(rep.image_auroc, 11);
    table += "  " + num(rep.image_auroc_logical, 7);
    table += "  " + num(rep.image_auroc_structural, 10);
    table += "  " + num(rep.pixel_auroc, 11);
    table += "\n";
  }
  write_text(join(out_dir, "sweep.txt"), table);
  std::fputs(table.c_str(), stdout);
  save_run_config(base, join(out_dir, "run_config.txt"));
  return 0;
}

// --- plot ---------------------------------------------------------------------

Image resize_rgb(const Image& in, int h, int w) {
  if (in.height == h && in.width == w) return in;
  Tensor t = to_tensor(in);
  Tensor out({in.channels, h, w});
  kern::resize_bilinear_forward(t.ptr(), in.channels, in.height, in.width, h, w, out.ptr());
  return to_image(out);
}

void blit(Image& dst, const Image& src, int x0) {
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      for (int c = 0; c < 3; ++c) dst.at(y, x0 + x, c) = src.at(y, x, c);
    }
  }
}

int cmd_plot(const RunConfig& cfg, const std::string& maps_dir, const std::string& out_dir) {
  std::string man_path = join(maps_dir, "manifest.txt");
  if (!fs::exists(man_path)) {
    throw Error(Error::Kind::config, "no manifest.txt under " + maps_dir);
  }
  std::ifstream f(man_path);
  if (!f) throw Error(Error::Kind::io, "cannot read " + man_path);

  struct Entry {
    std::string map_file;
    int h = 0, w = 0;
    double score = 0.0;
    std::string image_path, masks;
  };
  std::vector<Entry> entries;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    Entry e;
    if (!(is >> e.map_file >> e.h >> e.w >> e.score >> e.image_path >> e.masks) || e.h <= 0 ||
        e.w <= 0) {
      throw Error(Error::Kind::format, "bad manifest line: " + line);
    }
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw Error(Error::Kind::config, "empty manifest: " + man_path);

  ensure_dir(out_dir);
  for (const Entry& e : entries) {
    Tensor map = read_map_f32(join(maps_dir, e.map_file), e.h, e.w);
    Image heat = heatmap(map);
    std::string stem = e.map_file;
    if (stem.size() > 7 && stem.substr(stem.size() - 7) == ".f32map") {
      stem.resize(stem.size() - 7);
    }
    write_pnm(join(out_dir, stem + "_heat.ppm"), heat);

    Image input = resize_rgb(read_pnm(e.image_path), e.h, e.w);
    Image gt = make_image(e.w, e.h, 3, 0);
    if (e.masks != "-") {
      size_t pos = 0;
      while (pos <= e.masks.size()) {
        size_t semi = e.masks.find(';', pos);
        std::string mpath =
            e.masks.substr(pos, semi == std::string::npos ? semi : semi - pos);
        Image m = read_pnm(mpath);
        if (m.channels != 1) {
          throw Error(Error::Kind::format, "mask is not single channel: " + mpath);
        }
        std::vector<double> mv(m.pixels.begin(), m.pixels.end());
        Tensor mt = resize_to(Tensor::from({m.height, m.width}, std::move(mv)), e.h, e.w);
        for (int y = 0; y < e.h; ++y) {
          for (int x = 0; x < e.w; ++x) {
            if (mt.data[size_t(y) * size_t(e.w) + size_t(x)] > 127.5) {
              for (int c = 0; c < 3; ++c) gt.at(y, x, c) = 255;
            }
          }
        }
        if (semi == std::string::npos) break;
        pos = semi + 1;
      }
    }

    // input | ground truth | heatmap with 2 px white separators
    Image panel = make_image(3 * e.w + 4, e.h, 3, 255);
    blit(panel, input, 0);
    blit(panel, gt, e.w + 2);
    blit(panel, heat, 2 * e.w + 4);
    write_pnm(join(out_dir, stem + "_panel.ppm"), panel);
  }
  save_run_config(cfg, join(out_dir, "run_config.txt"));
  std::printf("wrote %zu panels under %s\n", entries.size(), out_dir.c_str());
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"distillation-triplet anomaly detection on synthetic pegboard scenes"};
  app.require_subcommand(0, 1);

  auto add_common = [](CLI::App* sub, CommonOpts& o, bool spec_alias = false) {
    CLI::Option* c = sub->add_option("--config", o.config_path, "flat key/value config file");
    if (spec_alias) {
      sub->add_option("--spec", o.config_path, "alias for --config")->excludes(c);
    }
    sub->add_option("--set", o.sets,
                    "override one config key, KEY=VALUE (repeatable; see --help-keys)");
  };
  auto flag_opt = [](CLI::App* sub, CommonOpts& o, const std::string& flag, const char* key,
                     const std::string& help) {
    sub->add_option_function<std::string>(
        flag, [&o, key](const std::string& v) { o.flag_sets.emplace_back(key, v); }, help);
  };

  bool help_keys = false;
  app.add_flag("--help-keys", help_keys, "list every config key with its current default");

  struct {
    CommonOpts common;
    std::string out;
  } gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic pegboard dataset");
  add_common(gen_cmd, gen.common, /*spec_alias=*/true);
  gen_cmd->add_option("--out", gen.out, "dataset root to create")->required();
  flag_opt(gen_cmd, gen.common, "--seed", "data_seed", "dataset seed (key data_seed)");
  flag_opt(gen_cmd, gen.common, "--canvas", "canvas", "image side in pixels (key canvas)");
  flag_opt(gen_cmd, gen.common, "--noise", "noise", "photometric noise amplitude (key noise)");
  flag_opt(gen_cmd, gen.common, "--n-train", "n_train", "training image count");
  flag_opt(gen_cmd, gen.common, "--n-validation", "n_validation", "validation image count");
  flag_opt(gen_cmd, gen.common, "--n-test-good", "n_test_good", "good test image count");
  flag_opt(gen_cmd, gen.common, "--n-logical", "n_logical", "logical anomaly count");
  flag_opt(gen_cmd, gen.common, "--n-structural", "n_structural", "structural anomaly count");

  struct {
    CommonOpts common;
    std::string data, out;
  } pre;
  CLI::App* pre_cmd = app.add_subcommand(
      "pretrain-teacher", "distill the teacher from a wide fixed descriptor network");
  add_common(pre_cmd, pre.common);
  pre_cmd->add_option("--data", pre.data, "dataset root (default $SEPAD_DATA_ROOT)");
  pre_cmd->add_option("--out", pre.out, "output directory")->required();
  flag_opt(pre_cmd, pre.common, "--iterations", "iterations", "optimizer steps");
  flag_opt(pre_cmd, pre.common, "--lr", "lr", "learning rate");
  flag_opt(pre_cmd, pre.common, "--seed", "seed", "training seed");
  flag_opt(pre_cmd, pre.common, "--image-size", "image_size", "input resolution");

  struct {
    CommonOpts common;
    std::string data, out, teacher;
  } tr;
  CLI::App* tr_cmd =
      app.add_subcommand("train", "train student and auto-encoder against the frozen teacher");
  add_common(tr_cmd, tr.common);
  tr_cmd->add_option("--data", tr.data, "dataset root (default $SEPAD_DATA_ROOT)");
  tr_cmd->add_option("--out", tr.out, "run directory")->required();
  tr_cmd->add_option("--teacher", tr.teacher, "pretrained teacher checkpoint");
  flag_opt(tr_cmd, tr.common, "--iterations", "iterations", "optimizer steps");
  flag_opt(tr_cmd, tr.common, "--lr", "lr", "peak learning rate");
  flag_opt(tr_cmd, tr.common, "--seed", "seed", "training seed");
  flag_opt(tr_cmd, tr.common, "--margin", "margin", "feature-similarity margin, 0..2");
  flag_opt(tr_cmd, tr.common, "--alpha", "alpha", "margin constraint weight");
  flag_opt(tr_cmd, tr.common, "--image-size", "image_size", "input resolution");
  flag_opt(tr_cmd, tr.common, "--channels", "channels", "feature channels per head");

  struct {
    CommonOpts common;
    std::string data, model, out;
    bool oracle = false;
  } ev;
  CLI::App* ev_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(ev_cmd, ev.common);
  ev_cmd->add_option("--data", ev.data, "dataset root (default $SEPAD_DATA_ROOT)");
  ev_cmd->add_option("--model", ev.model, "checkpoint to evaluate");
  ev_cmd->add_option("--out", ev.out, "report directory")->required();
  ev_cmd->add_flag("--oracle-maps", ev.oracle,
                   "score from ground truth instead of the model (metric plumbing check)");

  struct {
    CommonOpts common;
    std::string data, model, out, split = "test";
  } sc;
  CLI::App* sc_cmd = app.add_subcommand("score", "export anomaly maps for one split");
  add_common(sc_cmd, sc.common);
  sc_cmd->add_option("--data", sc.data, "dataset root (default $SEPAD_DATA_ROOT)");
  sc_cmd->add_option("--model", sc.model, "checkpoint to score with")->required();
  sc_cmd->add_option("--out", sc.out, "output directory")->required();
  sc_cmd->add_option("--split", sc.split, "train, validation, or test (default test)");

  struct {
    CommonOpts common;
    std::string data, out, axis, margins;
  } sw;
  CLI::App* sw_cmd =
      app.add_subcommand("sweep", "train and evaluate across one axis of settings");
  add_common(sw_cmd, sw.common);
  sw_cmd->add_option("--data", sw.data, "dataset root (default $SEPAD_DATA_ROOT)");
  sw_cmd->add_option("--out", sw.out, "sweep directory")->required();
  sw_cmd->add_option("--axis", sw.axis, "margin or ablation")->required();
  sw_cmd->add_option("--margins", sw.margins,
                     "comma separated margins (margin axis; default 0.0,0.2,0.4,1.0,2.0)");
  flag_opt(sw_cmd, sw.common, "--iterations", "iterations", "optimizer steps per point");
  flag_opt(sw_cmd, sw.common, "--seed", "seed", "training seed");

  struct {
    CommonOpts common;
    std::string maps, out;
  } pl;
  CLI::App* pl_cmd =
      app.add_subcommand("plot", "render heatmaps and input/truth/map panels from scored maps");
  add_common(pl_cmd, pl.common);
  pl_cmd->add_option("--maps", pl.maps, "directory with manifest.txt from the score command")
      ->required();
  pl_cmd->add_option("--out", pl.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (help_keys) {
      RunConfig defaults;
      std::fputs(render_run_config(defaults).c_str(), stdout);
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::fputs(app.help().c_str(), stdout);
      return 2;
    }
    if (app.got_subcommand(gen_cmd)) {
      return cmd_gen_data(build_config(gen.common), gen.out);
    }
    if (app.got_subcommand(pre_cmd)) {
      return cmd_pretrain(build_config(pre.common), resolve_data_root(pre.data), pre.out);
    }
    if (app.got_subcommand(tr_cmd)) {
      train_run(build_config(tr.common), resolve_data_root(tr.data), tr.out, tr.teacher, true);
      return 0;
    }
    if (app.got_subcommand(ev_cmd)) {
      if (!ev.oracle && ev.model.empty()) {
        throw Error(Error::Kind::config, "eval needs --model (or --oracle-maps)");
      }
      RunConfig cfg = build_config(ev.common);
      EvalReport rep =
          eval_run(cfg, resolve_data_root(ev.data), ev.model, ev.out, ev.oracle);
      std::fputs(format_report(rep).c_str(), stdout);
      return 0;
    }
    if (app.got_subcommand(sc_cmd)) {
      return cmd_score(build_config(sc.common), resolve_data_root(sc.data), sc.model, sc.out,
                       sc.split);
    }
    if (app.got_subcommand(sw_cmd)) {
      return cmd_sweep(build_config(sw.common), resolve_data_root(sw.data), sw.out, sw.axis,
                       sw.margins);
    }
    if (app.got_subcommand(pl_cmd)) {
      return cmd_plot(build_config(pl.common), pl.maps, pl.out);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.kind);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 2;
}

}  // namespace sepad
