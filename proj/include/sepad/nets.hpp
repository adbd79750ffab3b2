#pragma once

// Model zoo: frozen teacher patch descriptor, dual-head student, and a
// bottlenecked auto-encoder, all built from the same conv/pool/norm ops.
// Every forward runs through the gradient tape; inference entry points bind
// parameters as constants on a throwaway tape.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sepad/autodiff.hpp"
#include "sepad/tensor.hpp"

namespace sepad {

struct PdnConfig {
  int in_channels = 3;
  int out_channels = 64;   // C: feature channels per head
  std::vector<int> widths; // three hidden widths; empty picks a default ladder
};

std::vector<int> default_pdn_widths(int out_channels);

struct AeConfig {
  int width = 0;       // hidden conv width; 0 -> max(16, C/2)
  int bottleneck = 0;  // bottleneck channels; 0 -> C
};

struct ModelConfig {
  PdnConfig pdn;
  AeConfig ae;
  int image_size = 64;  // training resolution; power of two, >= 8
  bool separate_student_heads = false;
  bool instance_norm_relu = true;  // auto-encoder IN layers + decoder-opening ReLU
  uint64_t teacher_seed = 7777;

  void validate() const;
  std::vector<int> resolved_widths() const;
  int resolved_ae_width() const;
  int resolved_ae_bottleneck() const;
  int encoder_stages() const;  // halvings from image_size down to 1x1
  int decoder_stages() const;  // doublings from 1x1 up to image_size/4
};

// Ordered name -> array store; iteration order is construction order and is
// the canonical parameter order everywhere (training, checkpoints).
struct ParamSet {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(std::string name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  int64_t total_elements() const;
};

struct TripletModel {
  ModelConfig config;
  ParamSet teacher;        // frozen after construction
  ParamSet student;        // one trunk with 2C outputs (or two heads)
  ParamSet autoencoder;
  ParamSet student_shadow; // EMA copy of student, used at inference
  int64_t step = 0;
};

TripletModel make_model(const ModelConfig& cfg, uint64_t seed);

// Inference forwards. Input is 3xHxW with H, W divisible by 4; outputs are
// CxH/4xW/4. The student returns (S_T, S_A).
Tensor teacher_forward(const TripletModel& m, const Tensor& image);
std::pair<Tensor, Tensor> student_forward(const TripletModel& m, const Tensor& image);
Tensor autoencoder_forward(const TripletModel& m, const Tensor& image);
std::pair<Tensor, Tensor> ema_shadow_forward(const TripletModel& m, const Tensor& image);

// Tape-level builders for training. bind_params creates one Var per ParamSet
// item in canonical order.
std::vector<ad::Var> bind_params(ad::Tape& t, const ParamSet& ps, bool requires_grad);
ad::Var teacher_graph(const ModelConfig& cfg, const std::vector<ad::Var>& p, ad::Var image);
std::pair<ad::Var, ad::Var> student_graph(const ModelConfig& cfg,
                                          const std::vector<ad::Var>& p, ad::Var image);
ad::Var ae_graph(const ModelConfig& cfg, const std::vector<ad::Var>& p, ad::Var image);

// Checkpoint archive: magic + format version + text manifest (config, step)
// + named little-endian float32 arrays. Parameters are kept float32-
// representable during training, so the round trip is bit-exact. `extra`
// carries additional named arrays (optimizer state) that travel with the
// model; on load, extras are skipped when the caller passes nullptr.
void save_model(const TripletModel& m, const std::string& path,
                const ParamSet* extra = nullptr);
TripletModel load_model(const std::string& path, ParamSet* extra = nullptr);

// Throws Error(config) naming the first differing field.
void require_matching_config(const ModelConfig& expected, const ModelConfig& loaded);

}  // namespace sepad
