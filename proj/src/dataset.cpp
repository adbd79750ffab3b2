#include "sepad/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sepad/errors.hpp"
#include "sepad/rng.hpp"

namespace fs = std::filesystem;

namespace sepad {

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    default: return "test";
  }
}

const char* label_name(SampleLabel l) {
  switch (l) {
    case SampleLabel::good: return "good";
    case SampleLabel::logical_anomaly: return "logical_anomaly";
    default: return "structural_anomaly";
  }
}

std::vector<const SampleRef*> DatasetIndex::in_split(Split s) const {
  std::vector<const SampleRef*> out;
  for (const SampleRef& r : samples) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

namespace {

constexpr uint8_t kColors[4][3] = {
    {200, 40, 40},    // red
    {40, 180, 60},    // green
    {50, 80, 200},    // blue
    {210, 200, 50},   // yellow
};
constexpr int kPartner[2] = {2, 3};  // red->blue, green->yellow

const char* const kLogicalTypes[4] = {"missing_object", "extra_object", "misplaced_object",
                                      "mismatched_pair"};
const char* const kStructuralTypes[2] = {"scratch", "blot"};

struct Square {
  int x = 0, y = 0, side = 0, color = 0;
  double brightness = 1.0;
};

struct Layout {
  int canvas, cell, margin, smin, smax;
  explicit Layout(int s)
      : canvas(s),
        cell(s / 2),
        margin(std::max(2, s / 32)),
        smin(std::max(4, s / 8)),
        smax(std::max(5, s / 6)) {}
  int cell_x0(int idx) const { return (idx % 2) * cell; }
  int cell_y0(int idx) const { return (idx / 2) * cell; }
};

Square sample_square(Rng& rng, const Layout& lay, int cell_idx, int color) {
  Square sq;
  sq.side = rng.uniform_int(lay.smin, lay.smax);
  const int span = lay.cell - 2 * lay.margin - sq.side;
  if (span < 0) {
    throw Error(Error::Kind::config, "pegboard: cells too small for the squares");
  }
  sq.x = lay.cell_x0(cell_idx) + lay.margin + rng.uniform_int(0, span);
  sq.y = lay.cell_y0(cell_idx) + lay.margin + rng.uniform_int(0, span);
  sq.color = color;
  sq.brightness = rng.uniform(0.85, 1.15);
  return sq;
}

struct Scene {
  int bg = 90;
  std::vector<Square> squares;  // normal scenes: cell order TL, TR, BL, BR
};

Scene sample_scene(Rng& rng, const Layout& lay) {
  Scene sc;
  sc.bg = 80 + rng.uniform_int(0, 20);
  const int top[2] = {rng.uniform_int(0, 1), rng.uniform_int(0, 1)};
  for (int idx = 0; idx < 4; ++idx) {
    const int col = idx % 2;
    const int color = idx < 2 ? top[col] : kPartner[top[col]];
    sc.squares.push_back(sample_square(rng, lay, idx, color));
  }
  return sc;
}

void paint_square(Image& img, const Square& sq) {
  uint8_t rgb[3];
  for (int c = 0; c < 3; ++c) {
    const long v = std::lround(double(kColors[sq.color][c]) * sq.brightness);
    rgb[c] = uint8_t(v < 0 ? 0 : (v > 255 ? 255 : v));
  }
  for (int y = sq.y; y < sq.y + sq.side; ++y) {
    for (int x = sq.x; x < sq.x + sq.side; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
    }
  }
}

Image render_scene(const Scene& sc, const Layout& lay) {
  Image img = make_image(lay.canvas, lay.canvas, 3, uint8_t(sc.bg));
  for (const Square& sq : sc.squares) paint_square(img, sq);
  return img;
}

void add_noise(Image& img, Rng& rng, int amp) {
  if (amp <= 0) return;
  for (uint8_t& px : img.pixels) {
    const int v = int(px) + rng.uniform_int(-amp, amp);
    px = uint8_t(v < 0 ? 0 : (v > 255 ? 255 : v));
  }
}

// True when the rectangles are separated by at least a 2 px background gap,
// so same-colored squares never merge into one connected blob.
bool far_enough(const Square& a, const Square& b) {
  return a.x + a.side + 2 <= b.x || b.x + b.side + 2 <= a.x || a.y + a.side + 2 <= b.y ||
         b.y + b.side + 2 <= a.y;
}

void mark_rect(Image& mask, int x0, int y0, int w, int h) {
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) mask.at(y, x, 0) = 255;
  }
}

void mark_square(Image& mask, const Square& sq) { mark_rect(mask, sq.x, sq.y, sq.side, sq.side); }

struct Defect {
  std::string type;
  Image mask;
};

Defect apply_logical(Scene& sc, Rng& rng, const Layout& lay, int kind) {
  Defect d;
  d.mask = make_image(lay.canvas, lay.canvas, 1, 0);
  switch (kind) {
    case 0: {  // one square gone; the mask is the whole legal cell
      d.type = "missing_object";
      const int k = rng.uniform_int(0, 3);
      sc.squares.erase(sc.squares.begin() + k);
      mark_rect(d.mask, lay.cell_x0(k), lay.cell_y0(k), lay.cell, lay.cell);
      break;
    }
    case 1: {  // fifth square shares a cell; color differs so blobs stay apart
      d.type = "extra_object";
      const int k = rng.uniform_int(0, 3);
      int color = rng.uniform_int(0, 2);
      if (color >= sc.squares[size_t(k)].color) ++color;
      for (int attempt = 0;; ++attempt) {
        if (attempt >= 100) {
          throw Error(Error::Kind::config, "pegboard: no room for an extra square");
        }
        const Square sq = sample_square(rng, lay, k, color);
        bool ok = true;
        for (const Square& other : sc.squares) {
          if (!far_enough(sq, other)) {
            ok = false;
            break;
          }
        }
        if (ok) {
          sc.squares.push_back(sq);
          mark_square(d.mask, sq);
          break;
        }
      }
      break;
    }
    case 2: {  // square slides onto the vertical cell border of its row
      d.type = "misplaced_object";
      const int k = rng.uniform_int(0, 3);
      Square& sq = sc.squares[size_t(k)];
      for (int attempt = 0;; ++attempt) {
        if (attempt >= 100) {
          throw Error(Error::Kind::config, "pegboard: cannot place a straddling square");
        }
        Square moved = sq;
        // at least 2 px on each side of the border, so it sits in no cell
        moved.x = rng.uniform_int(lay.cell + 2 - moved.side, lay.cell - 2);
        moved.y = lay.cell_y0(k) + lay.margin +
                  rng.uniform_int(0, lay.cell - 2 * lay.margin - moved.side);
        bool ok = true;
        for (int i = 0; i < 4; ++i) {
          if (i != k && !far_enough(moved, sc.squares[size_t(i)])) {
            ok = false;
            break;
          }
        }
        if (ok) {
          sq = moved;
          mark_square(d.mask, sq);
          break;
        }
      }
      break;
    }
    default: {  // one bottom square painted with the other column's partner
      d.type = "mismatched_pair";
      const int col = rng.uniform_int(0, 1);
      Square& bottom = sc.squares[size_t(2 + col)];
      bottom.color = bottom.color == 2 ? 3 : 2;
      mark_square(d.mask, bottom);
      break;
    }
  }
  return d;
}

void invert_pixel(Image& img, int x, int y) {
  for (int c = 0; c < 3; ++c) img.at(y, x, c) = uint8_t(255 - img.at(y, x, c));
}

double seg_dist2(double px, double py, double ax, double ay, double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
  const double qx = ax + t * dx - px, qy = ay + t * dy - py;
  return qx * qx + qy * qy;
}

// Damages the rendered image in place; the mask is exactly the repainted set.
Defect apply_structural(Image& img, Rng& rng, const Layout& lay, int kind) {
  Defect d;
  d.mask = make_image(lay.canvas, lay.canvas, 1, 0);
  const int s = lay.canvas;
  if (kind == 0) {
    d.type = "scratch";
    int x0 = 2, y0 = 2, x1 = s - 3, y1 = y0;
    for (int attempt = 0; attempt < 100; ++attempt) {
      x0 = rng.uniform_int(2, s - 3);
      y0 = rng.uniform_int(2, s - 3);
      x1 = rng.uniform_int(2, s - 3);
      y1 = rng.uniform_int(2, s - 3);
      const int64_t dx = x1 - x0, dy = y1 - y0;
      if (dx * dx + dy * dy >= int64_t(s / 4) * int64_t(s / 4)) break;
    }
    const double half = std::max(1.0, double(s) / 64.0) * 0.5;
    const int pad = int(half) + 1;
    const int bx0 = std::max(0, std::min(x0, x1) - pad);
    const int bx1 = std::min(s - 1, std::max(x0, x1) + pad);
    const int by0 = std::max(0, std::min(y0, y1) - pad);
    const int by1 = std::min(s - 1, std::max(y0, y1) + pad);
    for (int y = by0; y <= by1; ++y) {
      for (int x = bx0; x <= bx1; ++x) {
        if (seg_dist2(x, y, x0, y0, x1, y1) <= half * half) {
          invert_pixel(img, x, y);
          d.mask.at(y, x, 0) = 255;
        }
      }
    }
  } else {
    d.type = "blot";
    const int r = rng.uniform_int(std::max(2, s / 16), std::max(3, s / 10));
    const int cx = rng.uniform_int(r + 1, s - r - 2);
    const int cy = rng.uniform_int(r + 1, s - r - 2);
    for (int y = cy - r; y <= cy + r; ++y) {
      for (int x = cx - r; x <= cx + r; ++x) {
        const int dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy <= r * r) {
          invert_pixel(img, x, y);
          d.mask.at(y, x, 0) = 255;
        }
      }
    }
  }
  return d;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) {
    throw Error(Error::Kind::io, "cannot create directory " + p.generic_string() + ": " + ec.message());
  }
}

std::string zero3(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d", i);
  return buf;
}

// Per-image seed streams; the bases keep the splits independent.
constexpr uint64_t kTagTrain = 1000000;
constexpr uint64_t kTagValidation = 2000000;
constexpr uint64_t kTagTestGood = 3000000;
constexpr uint64_t kTagLogical = 4000000;
constexpr uint64_t kTagStructural = 5000000;

std::vector<fs::path> sorted_files(const fs::path& dir, const char* ext) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::map<std::string, SaturationRule> parse_defects_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(Error::Kind::data, "missing defect configuration: " + path.generic_string());
  }
  std::map<std::string, SaturationRule> rules;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::string type;
    if (!(ss >> type)) continue;
    const std::string where = path.generic_string() + ":" + std::to_string(lineno) + ": ";
    std::string mode;
    double value = 0.0;
    if (!(ss >> mode >> value)) {
      throw Error(Error::Kind::format,
                  where + "want '<defect_type> <absolute|relative> <value>'");
    }
    std::string extra;
    if (ss >> extra) throw Error(Error::Kind::format, where + "trailing fields");
    SaturationRule r;
    if (mode == "relative") {
      r.relative = true;
    } else if (mode == "absolute") {
      r.relative = false;
    } else {
      throw Error(Error::Kind::format, where + "unknown saturation mode '" + mode + "'");
    }
    if (!std::isfinite(value) || value <= 0.0) {
      throw Error(Error::Kind::format, where + "saturation value must be positive");
    }
    if (r.relative && value > 1.0) {
      throw Error(Error::Kind::format, where + "relative saturation value must be <= 1");
    }
    r.value = value;
    if (!rules.emplace(type, r).second) {
      throw Error(Error::Kind::format, where + "duplicate defect type '" + type + "'");
    }
  }
  if (rules.empty()) {
    throw Error(Error::Kind::format, "no defect rules in " + path.generic_string());
  }
  return rules;
}

}  // namespace

void MiniLocoSpec::validate() const {
  if (canvas < 32 || canvas > 2048 || canvas % 2 != 0) {
    throw Error(Error::Kind::config,
                "mini-loco: canvas must be an even size in [32, 2048], got " +
                    std::to_string(canvas));
  }
  if (noise < 0 || noise > 60) {
    throw Error(Error::Kind::config,
                "mini-loco: noise must be in [0, 60], got " + std::to_string(noise));
  }
  const int counts[5] = {n_train, n_validation, n_test_good, n_logical, n_structural};
  for (int c : counts) {
    if (c < 1) throw Error(Error::Kind::config, "mini-loco: every split needs at least one image");
  }
}

DatasetIndex gen_mini_loco(const MiniLocoSpec& spec, const std::string& out_dir) {
  spec.validate();
  const Layout lay(spec.canvas);
  const fs::path root(out_dir);

  DatasetIndex index;
  index.root = out_dir;
  for (const char* t : kLogicalTypes) index.defect_rules[t] = SaturationRule{};
  for (const char* t : kStructuralTypes) index.defect_rules[t] = SaturationRule{};

  for (const char* rel : {"train/good", "validation/good", "test/good", "test/logical_anomalies",
                          "test/structural_anomalies"}) {
    ensure_dir(root / rel);
  }

  {
    const fs::path cfg_path = root / "defects_config.txt";
    std::ofstream cfg(cfg_path, std::ios::trunc);
    if (!cfg) throw Error(Error::Kind::io, "cannot write " + cfg_path.generic_string());
    cfg << "# defect_type saturation_mode saturation_value\n";
    for (const char* t : kLogicalTypes) cfg << t << " relative 0.5\n";
    for (const char* t : kStructuralTypes) cfg << t << " relative 0.5\n";
    if (!cfg) throw Error(Error::Kind::io, "short write to " + cfg_path.generic_string());
  }

  const auto add_good = [&](const char* dir, Split split, int count, uint64_t base) {
    for (int i = 0; i < count; ++i) {
      Rng rng(derive_seed(spec.seed, base + uint64_t(i)));
      const Scene sc = sample_scene(rng, lay);
      Image img = render_scene(sc, lay);
      add_noise(img, rng, spec.noise);
      SampleRef ref;
      ref.id = std::string(dir) + "/" + zero3(i);
      ref.image_path = (root / (ref.id + ".ppm")).generic_string();
      ref.split = split;
      ref.label = SampleLabel::good;
      write_pnm(ref.image_path, img);
      index.samples.push_back(std::move(ref));
    }
  };
  add_good("train/good", Split::train, spec.n_train, kTagTrain);
  add_good("validation/good", Split::validation, spec.n_validation, kTagValidation);
  add_good("test/good", Split::test, spec.n_test_good, kTagTestGood);

  const auto add_anomalies = [&](const char* adir, SampleLabel label, int count, uint64_t base) {
    for (int i = 0; i < count; ++i) {
      Rng rng(derive_seed(spec.seed, base + uint64_t(i)));
      Scene sc = sample_scene(rng, lay);
      Image img;
      Defect d;
      if (label == SampleLabel::logical_anomaly) {
        d = apply_logical(sc, rng, lay, i % 4);
        img = render_scene(sc, lay);
      } else {
        img = render_scene(sc, lay);
        d = apply_structural(img, rng, lay, i % 2);
      }
      add_noise(img, rng, spec.noise);

      SampleRef ref;
      ref.id = std::string("test/") + adir + "/" + zero3(i);
      ref.image_path = (root / (ref.id + ".ppm")).generic_string();
      ref.split = Split::test;
      ref.label = label;
      write_pnm(ref.image_path, img);

      const fs::path gt_dir = root / "ground_truth" / adir / zero3(i);
      ensure_dir(gt_dir);
      AnnotationRef a;
      a.mask_path = (gt_dir / ("0_" + d.type + ".pgm")).generic_string();
      a.defect_type = d.type;
      a.rule = index.defect_rules.at(d.type);
      write_pnm(a.mask_path, d.mask);
      ref.annotations.push_back(std::move(a));
      index.samples.push_back(std::move(ref));
    }
  };
  add_anomalies("logical_anomalies", SampleLabel::logical_anomaly, spec.n_logical, kTagLogical);
  add_anomalies("structural_anomalies", SampleLabel::structural_anomaly, spec.n_structural,
                kTagStructural);

  std::sort(index.samples.begin(), index.samples.end(),
            [](const SampleRef& a, const SampleRef& b) { return a.id < b.id; });
  return index;
}

DatasetIndex load_loco_layout(const std::string& root_str) {
  const fs::path root(root_str);
  if (!fs::is_directory(root)) {
    throw Error(Error::Kind::data, "dataset root is not a directory: " + root.generic_string());
  }

  DatasetIndex index;
  index.root = root_str;
  index.defect_rules = parse_defects_config(root / "defects_config.txt");

  // train/ and validation/ must hold nothing but good/.
  for (const char* parent : {"train", "validation"}) {
    const fs::path p = root / parent;
    if (!fs::is_directory(p)) {
      throw Error(Error::Kind::data, "missing split directory: " + p.generic_string());
    }
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.path().filename() != "good") {
        throw Error(Error::Kind::data,
                    "unexpected entry in anomaly-free split: " + e.path().generic_string());
      }
    }
  }

  struct DirSpec {
    const char* rel;
    Split split;
    SampleLabel label;
  };
  const DirSpec dirs[5] = {
      {"train/good", Split::train, SampleLabel::good},
      {"validation/good", Split::validation, SampleLabel::good},
      {"test/good", Split::test, SampleLabel::good},
      {"test/logical_anomalies", Split::test, SampleLabel::logical_anomaly},
      {"test/structural_anomalies", Split::test, SampleLabel::structural_anomaly},
  };

  std::map<std::string, std::vector<std::string>> claimed;  // anomaly dir -> image stems
  for (const DirSpec& d : dirs) {
    const fs::path dir = root / d.rel;
    if (!fs::is_directory(dir)) {
      throw Error(Error::Kind::data, "missing image directory: " + dir.generic_string());
    }
    const std::vector<fs::path> files = sorted_files(dir, ".ppm");
    if (files.empty()) {
      throw Error(Error::Kind::data, "no images in " + dir.generic_string());
    }
    for (const fs::path& f : files) {
      SampleRef ref;
      const std::string stem = f.stem().string();
      ref.id = std::string(d.rel) + "/" + stem;
      ref.image_path = f.generic_string();
      ref.split = d.split;
      ref.label = d.label;
      if (d.label != SampleLabel::good) {
        const char* adir =
            d.label == SampleLabel::logical_anomaly ? "logical_anomalies" : "structural_anomalies";
        const fs::path gt = root / "ground_truth" / adir / stem;
        if (!fs::is_directory(gt)) {
          throw Error(Error::Kind::data, "missing ground truth for " + ref.image_path +
                                             " (want " + gt.generic_string() + ")");
        }
        const std::vector<fs::path> masks = sorted_files(gt, ".pgm");
        if (masks.empty()) {
          throw Error(Error::Kind::data, "no masks under " + gt.generic_string());
        }
        for (const fs::path& m : masks) {
          AnnotationRef a;
          a.mask_path = m.generic_string();
          const std::string mstem = m.stem().string();
          const size_t us = mstem.find('_');
          if (us == std::string::npos || us + 1 >= mstem.size()) {
            throw Error(Error::Kind::data,
                        "mask name must be '<index>_<defect_type>.pgm': " + a.mask_path);
          }
          a.defect_type = mstem.substr(us + 1);
          const auto it = index.defect_rules.find(a.defect_type);
          if (it == index.defect_rules.end()) {
            throw Error(Error::Kind::data, "no saturation rule for defect type '" + a.defect_type +
                                               "' (" + a.mask_path + ")");
          }
          a.rule = it->second;
          ref.annotations.push_back(std::move(a));
        }
        claimed[adir].push_back(stem);
      }
      index.samples.push_back(std::move(ref));
    }
  }

  const fs::path gt_root = root / "ground_truth";
  if (fs::is_directory(gt_root)) {
    for (const auto& sub : fs::directory_iterator(gt_root)) {
      const std::string adir = sub.path().filename().string();
      const std::vector<std::string>& used = claimed[adir];
      for (const auto& e : fs::directory_iterator(sub.path())) {
        const std::string stem = e.path().filename().string();
        if (std::find(used.begin(), used.end(), stem) == used.end()) {
          throw Error(Error::Kind::data, "orphan ground truth entry: " + e.path().generic_string());
        }
      }
    }
  }

  std::sort(index.samples.begin(), index.samples.end(),
            [](const SampleRef& a, const SampleRef& b) { return a.id < b.id; });
  return index;
}

DefectAnnotation load_annotation(const AnnotationRef& ref) {
  const Image m = read_pnm(ref.mask_path);
  if (m.channels != 1) {
    throw Error(Error::Kind::format, "mask must be single-channel: " + ref.mask_path);
  }
  Tensor region({m.height, m.width});
  int64_t area = 0;
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      const uint8_t v = m.at(y, x, 0);
      if (v != 0 && v != 255) {
        throw Error(Error::Kind::format, "mask pixels must be 0 or 255: " + ref.mask_path);
      }
      if (v) {
        region.data[size_t(y) * size_t(m.width) + size_t(x)] = 1.0;
        ++area;
      }
    }
  }
  if (area == 0) {
    throw Error(Error::Kind::data, "empty mask region: " + ref.mask_path);
  }
  double sat = ref.rule.relative ? ref.rule.value * double(area) : ref.rule.value;
  sat = std::min(double(area), std::max(1.0, sat));
  return DefectAnnotation{std::move(region), sat};
}

}  // namespace sepad
