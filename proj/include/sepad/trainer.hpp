#pragma once

// Training loop: AdamW on student + auto-encoder, frozen teacher, warmup +
// late-drop learning rate, EMA shadow student, per-step loss log, periodic
// checkpoints. Deterministic: (seed, config, data) fixes every logged value.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sepad/losses.hpp"
#include "sepad/nets.hpp"
#include "sepad/tensor.hpp"

namespace sepad {

// How the averaged student used at inference is maintained.
//   shadow: gradient steps hit the online student; a separate EMA copy serves
//           inference (default).
//   inplace: each step's result is blended back into the online parameters.
//   off: no averaging; inference uses the online student directly.
enum class EmaMode { shadow, inplace, off };

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  int64_t iterations = 2000;
  double warmup_beta2 = 0.997;     // warmup constant in 1 - exp(-(1-b)*t)
  double lr_drop_fraction = 0.9;   // fraction of iterations after which ...
  double lr_drop_factor = 0.1;     // ... the rate is multiplied by this
  double ema_momentum = 0.99;
  int batch_size = 1;              // the method is defined for batch 1
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  EmaMode ema_mode = EmaMode::shadow;
  int checkpoint_percent = 10;     // checkpoint every N percent of iterations
  LossWeights weights;
  uint64_t seed = 0;

  void validate() const;
};

double lr_at(int64_t t, const TrainConfig& cfg);

// One AdamW update (decoupled weight decay) of a single array. Moment
// estimates and the parameter stay float32-representable. t_step starts at 1.
void adamw_apply(Tensor& w, const Tensor& g, Tensor& m, Tensor& v, int64_t t_step, double lr,
                 const TrainConfig& cfg);

// shadow <- momentum*shadow + (1-momentum)*online, element-wise, then snapped
// to float32 grid. Throws on layout mismatch.
void ema_update(const ParamSet& online, ParamSet& shadow, double momentum);

// Deterministic permutation of [0, count) for one epoch of the sample stream.
std::vector<int64_t> epoch_order(int64_t count, uint64_t seed, int64_t epoch);

// Owns the model plus the AdamW moment estimates for student + auto-encoder.
// model.step counts optimizer steps taken and indexes the lr schedule.
struct Trainer {
  TripletModel model;
  TrainConfig cfg;
  ParamSet moments;  // "m." / "v." prefixed copies of each trainable param

  Trainer(TripletModel m, TrainConfig c);

  // One optimizer step on one preprocessed image: forward all three networks,
  // backward, AdamW update with decoupled weight decay, EMA update, advance
  // model.step. Non-finite losses abort with the step index and components.
  LossBundle train_step(const Tensor& image);

  void save(const std::string& path) const;
  static Trainer load(const std::string& path, const TrainConfig& cfg);
};

// Deterministic sample stream: fetch(i) returns the i-th preprocessed
// training image (3 x H x W) and must be pure for a fixed dataset.
struct TrainDataSource {
  int64_t count = 0;
  std::function<Tensor(int64_t)> fetch;
};

// Runs trainer.model.step .. cfg.iterations-1, writing one CSV record per
// step to <out_dir>/loss_log.csv and checkpoints under <out_dir>/. Returns
// the path of the final checkpoint. An optional per-step callback observes
// the logged bundle (for tests and progress display).
std::string run_training(Trainer& trainer, const TrainDataSource& data,
                         const std::string& out_dir,
                         const std::function<void(int64_t, const LossBundle&, double)>&
                             on_step = nullptr);

}  // namespace sepad
