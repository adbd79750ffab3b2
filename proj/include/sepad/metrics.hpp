#pragma once

// Evaluation metrics: image/pixel AUROC (rank-based Mann-Whitney), AUPRO and
// saturation-aware sPRO via an exact sweep over all distinct score values.

#include <string>
#include <vector>

#include "sepad/tensor.hpp"

namespace sepad {

enum class DefectCategory { none, logical, structural };

struct LabeledScore {
  double score = 0.0;
  bool anomalous = false;
  DefectCategory category = DefectCategory::none;
};

struct DefectAnnotation {
  Tensor region;                 // H x W, nonzero inside the defect region
  double saturation_area = 0.0;  // >= 1 and <= region pixel count
};

// P(anomalous score > normal score) + half the tie mass. Throws on
// single-class input or non-finite scores.
double roc_auc(const std::vector<LabeledScore>& scores);

// roc_auc over all pixels pooled across images; masks are nonzero at
// anomalous pixels and must match their map's shape.
double pixel_roc_auc(const std::vector<Tensor>& maps, const std::vector<Tensor>& masks);

// Per-image defect regions; an image with no regions contributes only normal
// pixels (to the false positive rate denominator).
using RegionsPerImage = std::vector<std::vector<DefectAnnotation>>;

// Area under the mean per-region overlap curve against FPR, integrated by
// trapezoid over the exact threshold sweep up to fpr_limit (with an
// interpolated endpoint) and normalized by fpr_limit. aupro saturates each
// region at its full area; spro honors the annotation's saturation_area.
double aupro(const std::vector<Tensor>& maps, const RegionsPerImage& regions,
             double fpr_limit);
double spro(const std::vector<Tensor>& maps, const RegionsPerImage& regions,
            double fpr_limit);

// One scored test image with everything the metrics need.
struct EvalItem {
  double score = 0.0;  // image-level anomaly score
  bool anomalous = false;
  DefectCategory category = DefectCategory::none;
  Tensor map;   // H x W combined anomaly map
  Tensor mask;  // H x W ground truth (empty tensor allowed for good images)
  std::vector<DefectAnnotation> annotations;
};

// NaN marks splits that are undefined for the given item set (for example no
// structural anomalies present).
struct EvalReport {
  double image_auroc = 0.0;
  double image_auroc_logical = 0.0;
  double image_auroc_structural = 0.0;
  double pixel_auroc = 0.0;
  double aupro30 = 0.0;
  double spro05 = 0.0;
  double aupro30_logical = 0.0;
  double aupro30_structural = 0.0;
  double spro05_logical = 0.0;
  double spro05_structural = 0.0;
  int n_good = 0;
  int n_logical = 0;
  int n_structural = 0;
};

EvalReport evaluate(const std::vector<EvalItem>& items);

// Human-readable table and machine-readable "key value" lines.
std::string format_report(const EvalReport& r);
std::string report_kv(const EvalReport& r);

}  // namespace sepad
