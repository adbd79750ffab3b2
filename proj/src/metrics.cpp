#include "sepad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "sepad/errors.hpp"

namespace sepad {

using Kind = Error::Kind;

double roc_auc(const std::vector<LabeledScore>& scores) {
  int64_t n_pos = 0, n_neg = 0;
  for (const LabeledScore& s : scores) {
    if (!std::isfinite(s.score)) throw Error(Kind::data, "roc_auc: non-finite score");
    (s.anomalous ? n_pos : n_neg)++;
  }
  if (n_pos == 0 || n_neg == 0)
    throw Error(Kind::data, "roc_auc: both labels must be present");

  std::vector<size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), size_t(0));
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return scores[a].score < scores[b].score; });

  // average 1-based ranks over tie groups; sums of halves stay exact
  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < idx.size()) {
    size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]].score == scores[idx[i]].score) ++j;
    const double rank = 0.5 * (double(i + 1) + double(j + 1));
    for (size_t k = i; k <= j; ++k)
      if (scores[idx[k]].anomalous) pos_rank_sum += rank;
    i = j + 1;
  }
  const double np = double(n_pos), nn = double(n_neg);
  return (pos_rank_sum - np * (np + 1.0) * 0.5) / (np * nn);
}

double pixel_roc_auc(const std::vector<Tensor>& maps, const std::vector<Tensor>& masks) {
  if (maps.size() != masks.size())
    throw Error(Kind::shape, "pixel_roc_auc: map/mask count mismatch");
  std::vector<LabeledScore> pool;
  for (size_t i = 0; i < maps.size(); ++i) {
    if (maps[i].shape != masks[i].shape)
      throw Error(Kind::shape, "pixel_roc_auc: map/mask shape mismatch at index " +
                                   std::to_string(i));
    for (long j = 0; j < maps[i].numel(); ++j)
      pool.push_back({maps[i].data[size_t(j)], masks[i].data[size_t(j)] != 0.0,
                      DefectCategory::none});
  }
  return roc_auc(pool);
}

namespace {

struct PixelEvent {
  double score;
  int32_t region;  // -1: normal pixel; otherwise global region index
};

struct Curve {
  // polyline points (fpr, mean overlap), starting at (0, 0)
  std::vector<double> fpr;
  std::vector<double> value;
};

// Exact sweep over every distinct score. Pixels with score equal to the
// threshold count as detected; a pixel inside k regions feeds all k overlap
// counters while pixels outside every region feed the FPR.
Curve sweep_curve(const std::vector<Tensor>& maps, const RegionsPerImage& regions,
                  bool use_saturation) {
  if (maps.size() != regions.size())
    throw Error(Kind::shape, "pro sweep: map/region count mismatch");

  std::vector<PixelEvent> events;
  std::vector<double> saturation;
  int64_t total_normal = 0;

  for (size_t img = 0; img < maps.size(); ++img) {
    const Tensor& map = maps[img];
    const long n = map.numel();
    for (long j = 0; j < n; ++j)
      if (!std::isfinite(map.data[size_t(j)]))
        throw Error(Kind::numeric, "pro sweep: non-finite map value");

    std::vector<char> in_any(size_t(n), 0);
    for (const DefectAnnotation& ann : regions[img]) {
      if (ann.region.shape != map.shape)
        throw Error(Kind::shape, "pro sweep: region/map shape mismatch");
      double area = 0.0;
      const int32_t rid = int32_t(saturation.size());
      for (long j = 0; j < n; ++j) {
        if (ann.region.data[size_t(j)] != 0.0) {
          area += 1.0;
          in_any[size_t(j)] = 1;
          events.push_back({map.data[size_t(j)], rid});
        }
      }
      if (area == 0.0) throw Error(Kind::data, "pro sweep: empty defect region");
      double sat = use_saturation ? ann.saturation_area : area;
      if (!(sat >= 1.0) || sat > area)
        throw Error(Kind::data, "pro sweep: saturation_area must lie in [1, area]");
      saturation.push_back(sat);
    }
    for (long j = 0; j < n; ++j)
      if (!in_any[size_t(j)]) {
        events.push_back({map.data[size_t(j)], -1});
        ++total_normal;
      }
  }

  if (saturation.empty()) throw Error(Kind::data, "pro sweep: no defect regions");
  if (total_normal == 0) throw Error(Kind::data, "pro sweep: no normal pixels");

  std::sort(events.begin(), events.end(), [](const PixelEvent& a, const PixelEvent& b) {
    return a.score > b.score;
  });

  std::vector<int64_t> count(saturation.size(), 0);
  double overlap_sum = 0.0;
  int64_t cum_normal = 0;

  Curve c;
  c.fpr.push_back(0.0);
  c.value.push_back(0.0);

  const double n_regions = double(saturation.size());
  size_t i = 0;
  while (i < events.size()) {
    size_t j = i;
    while (j + 1 < events.size() && events[j + 1].score == events[i].score) ++j;
    for (size_t k = i; k <= j; ++k) {
      const int32_t r = events[k].region;
      if (r < 0) {
        ++cum_normal;
      } else {
        const double sat = saturation[size_t(r)];
        const double before = std::min(1.0, double(count[size_t(r)]) / sat);
        ++count[size_t(r)];
        const double after = std::min(1.0, double(count[size_t(r)]) / sat);
        overlap_sum += after - before;
      }
    }
    c.fpr.push_back(double(cum_normal) / double(total_normal));
    c.value.push_back(overlap_sum / n_regions);
    i = j + 1;
  }
  return c;
}

double integrate_to_limit(const Curve& c, double fpr_limit) {
  double area = 0.0;
  for (size_t i = 1; i < c.fpr.size(); ++i) {
    const double f0 = c.fpr[i - 1], v0 = c.value[i - 1];
    const double f1 = c.fpr[i], v1 = c.value[i];
    if (f1 <= fpr_limit) {
      area += (f1 - f0) * (v0 + v1) * 0.5;
      continue;
    }
    if (f0 >= fpr_limit) break;
    const double vi = v0 + (v1 - v0) * (fpr_limit - f0) / (f1 - f0);
    area += (fpr_limit - f0) * (v0 + vi) * 0.5;
    break;
  }
  return area / fpr_limit;
}

double swept_area(const std::vector<Tensor>& maps, const RegionsPerImage& regions,
                  double fpr_limit, bool use_saturation) {
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0))
    throw Error(Kind::config, "fpr_limit must lie in (0, 1]");
  return integrate_to_limit(sweep_curve(maps, regions, use_saturation), fpr_limit);
}

}  // namespace

double aupro(const std::vector<Tensor>& maps, const RegionsPerImage& regions,
             double fpr_limit) {
  return swept_area(maps, regions, fpr_limit, false);
}

double spro(const std::vector<Tensor>& maps, const RegionsPerImage& regions,
            double fpr_limit) {
  return swept_area(maps, regions, fpr_limit, true);
}

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

double auc_or_nan(const std::vector<LabeledScore>& scores) {
  bool pos = false, neg = false;
  for (const LabeledScore& s : scores) (s.anomalous ? pos : neg) = true;
  if (!pos || !neg) return kNaN;
  return roc_auc(scores);
}

struct MetricInputs {
  std::vector<LabeledScore> image_scores;
  std::vector<Tensor> maps;
  RegionsPerImage regions;
};

void add_item(MetricInputs& mi, const EvalItem& it) {
  mi.image_scores.push_back({it.score, it.anomalous, it.category});
  mi.maps.push_back(it.map);
  mi.regions.push_back(it.annotations);
}

double pro_or_nan(const MetricInputs& mi, double limit, bool sat) {
  bool any_region = false;
  for (const auto& r : mi.regions) any_region |= !r.empty();
  if (!any_region || mi.maps.empty()) return kNaN;
  return sat ? spro(mi.maps, mi.regions, limit) : aupro(mi.maps, mi.regions, limit);
}

}  // namespace

EvalReport evaluate(const std::vector<EvalItem>& items) {
  EvalReport r;
  MetricInputs all, logical, structural;
  std::vector<Tensor> px_maps, px_masks;

  for (const EvalItem& it : items) {
    if (it.map.shape.empty()) throw Error(Kind::data, "evaluate: item without a map");
    if (!it.anomalous) {
      ++r.n_good;
      add_item(all, it);
      add_item(logical, it);
      add_item(structural, it);
      px_maps.push_back(it.map);
      px_masks.push_back(it.mask.shape.empty() ? Tensor::zeros(it.map.shape) : it.mask);
      continue;
    }
    if (it.mask.shape.empty())
      throw Error(Kind::data, "evaluate: anomalous item without a mask");
    add_item(all, it);
    if (it.category == DefectCategory::structural) {
      ++r.n_structural;
      add_item(structural, it);
    } else {
      ++r.n_logical;
      add_item(logical, it);
    }
    px_maps.push_back(it.map);
    px_masks.push_back(it.mask);
  }

  r.image_auroc = auc_or_nan(all.image_scores);
  r.image_auroc_logical = r.n_logical ? auc_or_nan(logical.image_scores) : kNaN;
  r.image_auroc_structural = r.n_structural ? auc_or_nan(structural.image_scores) : kNaN;

  bool px_pos = false, px_neg = false;
  for (const Tensor& m : px_masks)
    for (double v : m.data) (v != 0.0 ? px_pos : px_neg) = true;
  r.pixel_auroc = (px_pos && px_neg) ? pixel_roc_auc(px_maps, px_masks) : kNaN;

  r.aupro30 = pro_or_nan(all, 0.30, false);
  r.spro05 = pro_or_nan(all, 0.05, true);
  r.aupro30_logical = r.n_logical ? pro_or_nan(logical, 0.30, false) : kNaN;
  r.aupro30_structural = r.n_structural ? pro_or_nan(structural, 0.30, false) : kNaN;
  r.spro05_logical = r.n_logical ? pro_or_nan(logical, 0.05, true) : kNaN;
  r.spro05_structural = r.n_structural ? pro_or_nan(structural, 0.05, true) : kNaN;
  return r;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  if (std::isnan(v)) return "   na  ";
  std::snprintf(buf, sizeof buf, "%7.4f", v);
  return buf;
}

std::string fmt_kv(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string format_report(const EvalReport& r) {
  std::string s;
  char line[160];
  std::snprintf(line, sizeof line, "images: %d good, %d logical, %d structural\n",
                r.n_good, r.n_logical, r.n_structural);
  s += line;
  s += "metric              overall  logical  structural\n";
  s += "image auroc         " + fmt(r.image_auroc) + "  " + fmt(r.image_auroc_logical) +
       "  " + fmt(r.image_auroc_structural) + "\n";
  s += "pixel auroc         " + fmt(r.pixel_auroc) + "\n";
  s += "aupro @ fpr 0.30    " + fmt(r.aupro30) + "  " + fmt(r.aupro30_logical) + "  " +
       fmt(r.aupro30_structural) + "\n";
  s += "spro  @ fpr 0.05    " + fmt(r.spro05) + "  " + fmt(r.spro05_logical) + "  " +
       fmt(r.spro05_structural) + "\n";
  return s;
}

std::string report_kv(const EvalReport& r) {
  std::string s;
  s += "n_good " + std::to_string(r.n_good) + "\n";
  s += "n_logical " + std::to_string(r.n_logical) + "\n";
  s += "n_structural " + std::to_string(r.n_structural) + "\n";
  s += "image_auroc " + fmt_kv(r.image_auroc) + "\n";
  s += "image_auroc_logical " + fmt_kv(r.image_auroc_logical) + "\n";
  s += "image_auroc_structural " + fmt_kv(r.image_auroc_structural) + "\n";
  s += "pixel_auroc " + fmt_kv(r.pixel_auroc) + "\n";
  s += "aupro30 " + fmt_kv(r.aupro30) + "\n";
  s += "spro05 " + fmt_kv(r.spro05) + "\n";
  s += "aupro30_logical " + fmt_kv(r.aupro30_logical) + "\n";
  s += "aupro30_structural " + fmt_kv(r.aupro30_structural) + "\n";
  s += "spro05_logical " + fmt_kv(r.spro05_logical) + "\n";
  s += "spro05_structural " + fmt_kv(r.spro05_structural) + "\n";
  return s;
}

}  // namespace sepad
