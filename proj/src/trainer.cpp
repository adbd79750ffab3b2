#include "sepad/trainer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <utility>

#include "sepad/autodiff.hpp"
#include "sepad/errors.hpp"
#include "sepad/rng.hpp"

namespace sepad {

using Kind = Error::Kind;

void TrainConfig::validate() const {
  if (batch_size != 1) throw Error(Kind::config, "batch_size must be 1");
  if (!(ema_momentum > 0.0 && ema_momentum < 1.0))
    throw Error(Kind::config, "ema_momentum must lie in (0, 1)");
  if (lr <= 0.0) throw Error(Kind::config, "lr must be positive");
  if (weight_decay < 0.0) throw Error(Kind::config, "weight_decay must be >= 0");
  if (iterations < 0) throw Error(Kind::config, "iterations must be >= 0");
  if (!(warmup_beta2 > 0.0 && warmup_beta2 < 1.0))
    throw Error(Kind::config, "warmup_beta2 must lie in (0, 1)");
  if (!(lr_drop_fraction >= 0.0 && lr_drop_fraction <= 1.0))
    throw Error(Kind::config, "lr_drop_fraction must lie in [0, 1]");
  if (lr_drop_factor <= 0.0 || lr_drop_factor > 1.0)
    throw Error(Kind::config, "lr_drop_factor must lie in (0, 1]");
  if (checkpoint_percent <= 0 || checkpoint_percent > 100)
    throw Error(Kind::config, "checkpoint_percent must lie in (0, 100]");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw Error(Kind::config, "adam betas must lie in [0, 1)");
  weights.validate();
}

double lr_at(int64_t t, const TrainConfig& cfg) {
  const double warm = 1.0 - std::exp(-(1.0 - cfg.warmup_beta2) * double(t));
  const bool dropped = double(t) >= cfg.lr_drop_fraction * double(cfg.iterations);
  return cfg.lr * warm * (dropped ? cfg.lr_drop_factor : 1.0);
}

void ema_update(const ParamSet& online, ParamSet& shadow, double momentum) {
  if (online.items.size() != shadow.items.size())
    throw Error(Kind::shape, "ema_update: parameter list sizes differ");
  for (size_t i = 0; i < online.items.size(); ++i) {
    const auto& [name, src] = online.items[i];
    auto& [sname, dst] = shadow.items[i];
    if (name != sname || src.shape != dst.shape)
      throw Error(Kind::shape, "ema_update: layout mismatch at " + name);
    for (size_t j = 0; j < src.data.size(); ++j)
      dst.data[j] = momentum * dst.data[j] + (1.0 - momentum) * src.data[j];
    dst.snap_f32();
  }
}

std::vector<int64_t> epoch_order(int64_t count, uint64_t seed, int64_t epoch) {
  if (count <= 0) throw Error(Kind::data, "epoch_order: empty sample set");
  std::vector<int64_t> order(size_t(count), 0);
  std::iota(order.begin(), order.end(), int64_t(0));
  Rng rng(derive_seed(seed, uint64_t(epoch)));
  for (int64_t i = count - 1; i > 0; --i) {
    int64_t j = rng.uniform_int(0, i);
    std::swap(order[size_t(i)], order[size_t(j)]);
  }
  return order;
}

Trainer::Trainer(TripletModel m, TrainConfig c) : model(std::move(m)), cfg(std::move(c)) {
  cfg.validate();
  auto add_moments = [&](const char* section, const ParamSet& ps) {
    for (const auto& [name, t] : ps.items) {
      moments.add(std::string("m.") + section + "." + name, Tensor::zeros(t.shape));
      moments.add(std::string("v.") + section + "." + name, Tensor::zeros(t.shape));
    }
  };
  add_moments("student", model.student);
  add_moments("ae", model.autoencoder);
}

void adamw_apply(Tensor& w, const Tensor& g, Tensor& m, Tensor& v, int64_t t_step, double lr,
                 const TrainConfig& cfg) {
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double corr1 = 1.0 - std::pow(b1, double(t_step));
  const double corr2 = 1.0 - std::pow(b2, double(t_step));
  for (size_t j = 0; j < w.data.size(); ++j) {
    double mj = b1 * m.data[j] + (1.0 - b1) * g.data[j];
    double vj = b2 * v.data[j] + (1.0 - b2) * g.data[j] * g.data[j];
    mj = double(float(mj));
    vj = double(float(vj));
    m.data[j] = mj;
    v.data[j] = vj;
    const double mhat = mj / corr1;
    const double vhat = vj / corr2;
    double wj = w.data[j];
    wj = wj * (1.0 - lr * cfg.weight_decay) - lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    w.data[j] = double(float(wj));
  }
}

namespace {

struct Trainable {
  Tensor* param;
  ad::Var var;
  Tensor* m;
  Tensor* v;
};

void adamw_step(std::vector<Trainable>& params, ad::Tape& tape, double lr,
                const TrainConfig& cfg, int64_t t_step) {
  for (Trainable& p : params) {
    const Tensor g = tape.grad(p.var);
    adamw_apply(*p.param, g, *p.m, *p.v, t_step, lr, cfg);
  }
}

}  // namespace

LossBundle Trainer::train_step(const Tensor& image) {
  ad::Tape tape;
  std::vector<ad::Var> tp = bind_params(tape, model.teacher, false);
  std::vector<ad::Var> sp = bind_params(tape, model.student, true);
  std::vector<ad::Var> ap = bind_params(tape, model.autoencoder, true);
  ad::Var img = tape.constant(image);

  ad::Var t_map = teacher_graph(model.config, tp, img);
  auto [s_t, s_a] = student_graph(model.config, sp, img);
  ad::Var a_map = ae_graph(model.config, ap, img);

  LossGraph g = total_loss(t_map, s_t, s_a, a_map, cfg.weights);
  const LossBundle& b = g.values;
  if (!std::isfinite(b.total) || !std::isfinite(b.d_sa) || !std::isfinite(b.d_ta) ||
      !std::isfinite(b.d_ts_masked) || !std::isfinite(b.l_dfsc)) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "non-finite loss at step %" PRId64
                  ": d_sa=%g d_ta=%g d_ts_masked=%g l_dfsc=%g total=%g",
                  model.step, b.d_sa, b.d_ta, b.d_ts_masked, b.l_dfsc, b.total);
    throw Error(Kind::numeric, buf);
  }

  tape.backward(g.total);

  std::vector<Tensor> pre_blend;
  if (cfg.ema_mode == EmaMode::inplace) {
    pre_blend.reserve(model.student.items.size());
    for (const auto& [name, t] : model.student.items) pre_blend.push_back(t);
  }

  std::vector<Trainable> params;
  params.reserve(sp.size() + ap.size());
  for (size_t i = 0; i < sp.size(); ++i)
    params.push_back({&model.student.items[i].second, sp[i],
                      &moments.at("m.student." + model.student.items[i].first),
                      &moments.at("v.student." + model.student.items[i].first)});
  for (size_t i = 0; i < ap.size(); ++i)
    params.push_back({&model.autoencoder.items[i].second, ap[i],
                      &moments.at("m.ae." + model.autoencoder.items[i].first),
                      &moments.at("v.ae." + model.autoencoder.items[i].first)});

  const double lr = lr_at(model.step, cfg);
  adamw_step(params, tape, lr, cfg, model.step + 1);

  switch (cfg.ema_mode) {
    case EmaMode::shadow:
      ema_update(model.student, model.student_shadow, cfg.ema_momentum);
      break;
    case EmaMode::inplace:
      for (size_t i = 0; i < model.student.items.size(); ++i) {
        Tensor& w = model.student.items[i].second;
        const Tensor& old = pre_blend[i];
        for (size_t j = 0; j < w.data.size(); ++j)
          w.data[j] = cfg.ema_momentum * old.data[j] +
                      (1.0 - cfg.ema_momentum) * w.data[j];
        w.snap_f32();
        model.student_shadow.items[i].second = w;
      }
      break;
    case EmaMode::off:
      for (size_t i = 0; i < model.student.items.size(); ++i)
        model.student_shadow.items[i].second = model.student.items[i].second;
      break;
  }

  ++model.step;
  return b;
}

void Trainer::save(const std::string& path) const { save_model(model, path, &moments); }

Trainer Trainer::load(const std::string& path, const TrainConfig& cfg) {
  ParamSet extra;
  TripletModel m = load_model(path, &extra);
  Trainer tr(std::move(m), cfg);
  if (!extra.items.empty()) {
    if (extra.items.size() != tr.moments.items.size())
      throw Error(Kind::shape, "checkpoint optimizer state does not match the model");
    for (size_t i = 0; i < extra.items.size(); ++i) {
      auto& [name, t] = tr.moments.items[i];
      if (extra.items[i].first != name || extra.items[i].second.shape != t.shape)
        throw Error(Kind::shape, "optimizer state mismatch at " + name);
      t = std::move(extra.items[i].second);
    }
  }
  return tr;
}

std::string run_training(Trainer& trainer, const TrainDataSource& data,
                         const std::string& out_dir,
                         const std::function<void(int64_t, const LossBundle&, double)>&
                             on_step) {
  const TrainConfig& cfg = trainer.cfg;
  cfg.validate();
  const int64_t start = trainer.model.step;
  if (start < cfg.iterations && (data.count <= 0 || !data.fetch))
    throw Error(Kind::data, "run_training: empty training dataset");

  std::filesystem::create_directories(out_dir);
  const std::string log_path = out_dir + "/loss_log.csv";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw Error(Kind::io, "cannot open " + log_path);
  log << "t,d_sa,d_ta,d_ts_masked,l_dfsc,total,lr\n";

  const int64_t interval =
      std::max<int64_t>(1, cfg.iterations * cfg.checkpoint_percent / 100);

  std::vector<int64_t> order;
  int64_t order_epoch = -1;
  char row[512];
  for (int64_t t = start; t < cfg.iterations; ++t) {
    const int64_t epoch = t / data.count;
    if (epoch != order_epoch) {
      order = epoch_order(data.count, cfg.seed, epoch);
      order_epoch = epoch;
    }
    Tensor img = data.fetch(order[size_t(t % data.count)]);
    const double lr = lr_at(t, cfg);
    LossBundle b = trainer.train_step(img);
    std::snprintf(row, sizeof row,
                  "%" PRId64 ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", t, b.d_sa,
                  b.d_ta, b.d_ts_masked, b.l_dfsc, b.total, lr);
    log << row;
    if (on_step) on_step(t, b, lr);
    if ((t + 1) % interval == 0 && (t + 1) < cfg.iterations) {
      std::snprintf(row, sizeof row, "%s/ckpt_%08" PRId64 ".ckpt", out_dir.c_str(),
                    t + 1);
      trainer.save(row);
    }
  }
  log.flush();
  if (!log) throw Error(Kind::io, "failed writing " + log_path);

  const std::string final_path = out_dir + "/model_final.ckpt";
  trainer.save(final_path);
  return final_path;
}

}  // namespace sepad
