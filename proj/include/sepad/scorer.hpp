#pragma once

// Scoring pipeline: raw channel-mean squared difference maps from the triplet
// (EMA student at inference), quantile calibration on validation images,
// sigmoid projection to (0,1), combination, and upsampling to input size.

#include <string>
#include <vector>

#include "sepad/nets.hpp"
#include "sepad/tensor.hpp"

namespace sepad {

struct BranchStats {
  double q_low = 0.0;   // quantile 0.9 of pooled validation map values
  double q_high = 0.0;  // quantile 0.995
  bool degenerate() const { return !(q_high > q_low); }
};

struct CalibrationStats {
  BranchStats global;  // S_A vs A branch
  BranchStats local;   // T vs S_T branch
};

// Per-location channel mean of squared differences; C x H x W -> H x W.
Tensor global_map(const Tensor& s_a, const Tensor& a);
Tensor local_map(const Tensor& t, const Tensor& s_t);

struct RawMaps {
  Tensor global;  // H/4 x W/4
  Tensor local;
};

// One forward of teacher, EMA student, and auto-encoder.
RawMaps raw_maps(const TripletModel& m, const Tensor& image);

// Pools raw map values over the validation set per branch. Order-free.
CalibrationStats calibrate(const TripletModel& m,
                           const std::vector<Tensor>& validation_images, double q_low = 0.9,
                           double q_high = 0.995);

// sigmoid((x - q_low) / (q_high - q_low)); strictly monotone, range (0,1)
// away from the saturated tails of double precision. sigmoid=false keeps the
// linear quantile normalization (ablation; values may leave (0,1)).
// Degenerate stats produce a constant 0.5 map and a warning on stderr.
Tensor normalize_map(const Tensor& raw, const BranchStats& stats, bool sigmoid = true);

// Element-wise arithmetic mean of the two projected maps.
Tensor combine(const Tensor& global_norm, const Tensor& local_norm);

// Maximum pixel value of a non-empty map.
double image_score(const Tensor& map);

struct ScoreResult {
  Tensor map;  // combined anomaly map, bilinearly resized to the input H x W
  double score = 0.0;
};

ScoreResult score_image(const TripletModel& m, const CalibrationStats& stats,
                        const Tensor& image, bool sigmoid = true);

// Raw little-endian float32 H x W plane, for the map export interface.
void write_map_f32(const std::string& path, const Tensor& map);
Tensor read_map_f32(const std::string& path, int h, int w);

}  // namespace sepad
