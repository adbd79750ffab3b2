#pragma once

// Flat key-value run configuration: one merged view of model, training,
// loss, scoring, and dataset-generation settings.
//
// File format: one "key value" pair per line ('=' between them is also
// accepted), '#' starts a comment, blank lines are skipped. Unknown keys and
// malformed or out-of-range values are hard errors. `momentum_update` is a
// boolean alias for `ema_mode` (true -> shadow, false -> off); the rendered
// form always uses the canonical `ema_mode` key.

#include <string>
#include <vector>

#include "sepad/dataset.hpp"
#include "sepad/nets.hpp"
#include "sepad/trainer.hpp"

namespace sepad {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  MiniLocoSpec data;
  // scoring ablation: sigmoid projection vs plain linear normalization
  bool sigmoid_projection = true;
  // calibration quantiles for map normalization
  double cal_q_low = 0.9;
  double cal_q_high = 0.995;

  void validate() const;
};

// All recognized keys, in render order.
std::vector<std::string> run_config_keys();

// Sets one key on the config (same setter the parser uses). Throws
// Error(config) on unknown keys or unparsable values.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Parses text, applies every pair onto the defaults, then validates.
// `origin` names the source in error messages ("file.cfg:12: ...").
RunConfig parse_run_config(const std::string& text, const std::string& origin);
RunConfig load_run_config(const std::string& path);

// Fully-resolved, commented document; parse_run_config(render_run_config(c))
// reproduces c exactly.
std::string render_run_config(const RunConfig& cfg);
void save_run_config(const RunConfig& cfg, const std::string& path);

}  // namespace sepad
