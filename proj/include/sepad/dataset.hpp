#pragma once

// Dataset layout loader and the synthetic "pegboard" generator.
//
// On-disk layout (shared with the public logical-anomaly benchmarks):
//   <root>/defects_config.txt
//   <root>/train/good/*.ppm
//   <root>/validation/good/*.ppm
//   <root>/test/{good,logical_anomalies,structural_anomalies}/*.ppm
//   <root>/ground_truth/<anomaly_dir>/<image_id>/<k>_<defect_type>.pgm
//
// Images are binary PPM, masks are binary PGM with values 0/255. Each line of
// defects_config.txt is "<defect_type> <saturation_mode> <saturation_value>"
// where saturation_mode is "absolute" (pixel count) or "relative" (fraction
// of the region area).
//
// Pegboard scenes: a 2x2 grid of cells on a gray board, one colored square
// per cell. Top cells hold red or green squares; the bottom square in each
// column must hold the partner color (red->blue, green->yellow). A scene is
// normal iff
//   rule 1 (count):    exactly four squares are present,
//   rule 2 (position): every square lies fully inside a single cell with at
//                      least a one-pixel margin to the cell border,
//   rule 3 (pairing):  wherever a column has exactly one top and one bottom
//                      square, top is red or green and bottom is its partner.
// Logical anomalies violate exactly one rule: missing_object / extra_object
// break rule 1, misplaced_object breaks rule 2, mismatched_pair breaks rule
// 3. Structural anomalies (scratch, blot) damage pixels of otherwise legal
// scenes; their masks cover exactly the repainted pixels. Logical masks mark
// the offending square, or the whole empty cell for missing_object.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sepad/image.hpp"
#include "sepad/metrics.hpp"
#include "sepad/tensor.hpp"

namespace sepad {

enum class Split { train, validation, test };
enum class SampleLabel { good, logical_anomaly, structural_anomaly };

const char* split_name(Split s);
const char* label_name(SampleLabel l);

struct SaturationRule {
  bool relative = true;  // false: value is a pixel count
  double value = 0.5;
};

struct AnnotationRef {
  std::string mask_path;
  std::string defect_type;  // e.g. "missing_object", "scratch"
  SaturationRule rule;

  bool operator==(const AnnotationRef& o) const {
    return mask_path == o.mask_path && defect_type == o.defect_type &&
           rule.relative == o.rule.relative && rule.value == o.rule.value;
  }
};

struct SampleRef {
  std::string id;  // e.g. "test/logical_anomalies/003"
  std::string image_path;
  Split split = Split::train;
  SampleLabel label = SampleLabel::good;
  std::vector<AnnotationRef> annotations;  // empty for good samples
};

struct DatasetIndex {
  std::string root;
  std::vector<SampleRef> samples;  // sorted by id
  std::map<std::string, SaturationRule> defect_rules;

  std::vector<const SampleRef*> in_split(Split s) const;
};

// Walks the layout above. Missing directories, images without masks, orphan
// ground-truth entries and malformed config lines raise Error::Kind::data or
// Error::Kind::format with the offending paths in the message.
DatasetIndex load_loco_layout(const std::string& root);

// Reads one mask and resolves its saturation rule against the region area.
DefectAnnotation load_annotation(const AnnotationRef& ref);

// Synthetic pegboard dataset.
struct MiniLocoSpec {
  int canvas = 256;  // square canvas edge; 64 is the fast profile
  int n_train = 200;
  int n_validation = 40;
  int n_test_good = 40;
  int n_logical = 40;
  int n_structural = 40;
  int noise = 8;  // photometric noise amplitude, 0..60
  uint64_t seed = 1;

  void validate() const;  // Error::Kind::config on bad or unsatisfiable values
};

// Renders the full dataset under out_dir and returns the matching index.
// Output is a pure function of the spec: regenerating with the same spec
// writes byte-identical files.
DatasetIndex gen_mini_loco(const MiniLocoSpec& spec, const std::string& out_dir);

}  // namespace sepad
