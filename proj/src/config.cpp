#include "sepad/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sepad/errors.hpp"

namespace sepad {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& why) {
  throw Error(Error::Kind::config, "key '" + key + "': bad value '" + value + "' (" + why + ")");
}

int64_t parse_i64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const int64_t v = std::stoll(value, &used);
    if (used != value.size()) bad_value(key, value, "trailing characters");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    bad_value(key, value, "want an integer");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  if (!value.empty() && value[0] == '-') bad_value(key, value, "want a non-negative integer");
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(value, &used);
    if (used != value.size()) bad_value(key, value, "trailing characters");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    bad_value(key, value, "want a non-negative integer");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  const int64_t v = parse_i64(key, value);
  if (v < int64_t(INT32_MIN) || v > int64_t(INT32_MAX)) bad_value(key, value, "out of range");
  return int(v);
}

double parse_f64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) bad_value(key, value, "trailing characters");
    return v;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    bad_value(key, value, "want a number");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "want true or false");
}

std::vector<int> parse_widths(const std::string& key, const std::string& value) {
  if (value == "0") return {};
  std::vector<int> widths;
  std::stringstream ss(value);
  std::string part;
  while (std::getline(ss, part, ',')) widths.push_back(parse_int(key, part));
  if (widths.empty()) bad_value(key, value, "want 0 or a comma-separated width list");
  return widths;
}

// Shortest decimal form that parses back to the same double.
std::string fmt_f64(double v) {
  char buf[64];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

std::string fmt_widths(const std::vector<int>& w) {
  if (w.empty()) return "0";
  std::string out;
  for (size_t i = 0; i < w.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(w[i]);
  }
  return out;
}

std::string fmt_ema(EmaMode m) {
  switch (m) {
    case EmaMode::shadow: return "shadow";
    case EmaMode::inplace: return "inplace";
    default: return "off";
  }
}

struct KeySpec {
  const char* section;
  const char* key;
  void (*set)(RunConfig&, const std::string&);
  std::string (*get)(const RunConfig&);
};

// X(section, key, setter-expr, getter-expr); `c` is the config, `v` the value
// string, `k` the key string.
#define CONFIG_KEYS(X)                                                                           \
  X("model", image_size, c.model.image_size = parse_int(k, v),                                   \
    std::to_string(c.model.image_size))                                                          \
  X("model", channels, c.model.pdn.out_channels = parse_int(k, v),                               \
    std::to_string(c.model.pdn.out_channels))                                                    \
  X("model", pdn_widths, c.model.pdn.widths = parse_widths(k, v), fmt_widths(c.model.pdn.widths))\
  X("model", ae_width, c.model.ae.width = parse_int(k, v), std::to_string(c.model.ae.width))     \
  X("model", ae_bottleneck, c.model.ae.bottleneck = parse_int(k, v),                             \
    std::to_string(c.model.ae.bottleneck))                                                       \
  X("model", separate_student_heads, c.model.separate_student_heads = parse_bool(k, v),          \
    fmt_bool(c.model.separate_student_heads))                                                    \
  X("model", instance_norm_relu, c.model.instance_norm_relu = parse_bool(k, v),                  \
    fmt_bool(c.model.instance_norm_relu))                                                        \
  X("model", teacher_seed, c.model.teacher_seed = parse_u64(k, v),                               \
    std::to_string(c.model.teacher_seed))                                                        \
  X("training", lr, c.train.lr = parse_f64(k, v), fmt_f64(c.train.lr))                           \
  X("training", weight_decay, c.train.weight_decay = parse_f64(k, v),                            \
    fmt_f64(c.train.weight_decay))                                                               \
  X("training", iterations, c.train.iterations = parse_i64(k, v),                                \
    std::to_string(c.train.iterations))                                                          \
  X("training", warmup_beta2, c.train.warmup_beta2 = parse_f64(k, v),                            \
    fmt_f64(c.train.warmup_beta2))                                                               \
  X("training", lr_drop_fraction, c.train.lr_drop_fraction = parse_f64(k, v),                    \
    fmt_f64(c.train.lr_drop_fraction))                                                           \
  X("training", lr_drop_factor, c.train.lr_drop_factor = parse_f64(k, v),                        \
    fmt_f64(c.train.lr_drop_factor))                                                             \
  X("training", ema_momentum, c.train.ema_momentum = parse_f64(k, v),                            \
    fmt_f64(c.train.ema_momentum))                                                               \
  X("training", adam_beta1, c.train.adam_beta1 = parse_f64(k, v), fmt_f64(c.train.adam_beta1))   \
  X("training", adam_beta2, c.train.adam_beta2 = parse_f64(k, v), fmt_f64(c.train.adam_beta2))   \
  X("training", adam_eps, c.train.adam_eps = parse_f64(k, v), fmt_f64(c.train.adam_eps))         \
  X("training", checkpoint_percent, c.train.checkpoint_percent = parse_int(k, v),                \
    std::to_string(c.train.checkpoint_percent))                                                  \
  X("training", ema_mode, c.train.ema_mode = parse_ema(k, v), fmt_ema(c.train.ema_mode))         \
  X("training", seed, c.train.seed = parse_u64(k, v), std::to_string(c.train.seed))              \
  X("loss", alpha, c.train.weights.alpha = parse_f64(k, v), fmt_f64(c.train.weights.alpha))      \
  X("loss", margin, c.train.weights.margin = parse_f64(k, v), fmt_f64(c.train.weights.margin))   \
  X("loss", q_ts, c.train.weights.q_ts = parse_f64(k, v), fmt_f64(c.train.weights.q_ts))         \
  X("loss", q_ta, c.train.weights.q_ta = parse_f64(k, v), fmt_f64(c.train.weights.q_ta))         \
  X("loss", dfsc, c.train.weights.dfsc_enabled = parse_bool(k, v),                               \
    fmt_bool(c.train.weights.dfsc_enabled))                                                      \
  X("loss", dfsc_all_locations, c.train.weights.dfsc_all_locations = parse_bool(k, v),           \
    fmt_bool(c.train.weights.dfsc_all_locations))                                                \
  X("loss", stopgrad_sa_to_a, c.train.weights.stopgrad_sa_to_a = parse_bool(k, v),               \
    fmt_bool(c.train.weights.stopgrad_sa_to_a))                                                  \
  X("scoring", sigmoid_projection, c.sigmoid_projection = parse_bool(k, v),                      \
    fmt_bool(c.sigmoid_projection))                                                              \
  X("scoring", cal_q_low, c.cal_q_low = parse_f64(k, v), fmt_f64(c.cal_q_low))                   \
  X("scoring", cal_q_high, c.cal_q_high = parse_f64(k, v), fmt_f64(c.cal_q_high))                \
  X("dataset", canvas, c.data.canvas = parse_int(k, v), std::to_string(c.data.canvas))           \
  X("dataset", n_train, c.data.n_train = parse_int(k, v), std::to_string(c.data.n_train))        \
  X("dataset", n_validation, c.data.n_validation = parse_int(k, v),                              \
    std::to_string(c.data.n_validation))                                                         \
  X("dataset", n_test_good, c.data.n_test_good = parse_int(k, v),                                \
    std::to_string(c.data.n_test_good))                                                          \
  X("dataset", n_logical, c.data.n_logical = parse_int(k, v), std::to_string(c.data.n_logical))  \
  X("dataset", n_structural, c.data.n_structural = parse_int(k, v),                              \
    std::to_string(c.data.n_structural))                                                         \
  X("dataset", noise, c.data.noise = parse_int(k, v), std::to_string(c.data.noise))              \
  X("dataset", data_seed, c.data.seed = parse_u64(k, v), std::to_string(c.data.seed))

EmaMode parse_ema(const std::string& key, const std::string& value) {
  if (value == "shadow") return EmaMode::shadow;
  if (value == "inplace") return EmaMode::inplace;
  if (value == "off") return EmaMode::off;
  bad_value(key, value, "want shadow, inplace, or off");
}

const std::vector<KeySpec>& key_table() {
  static const std::vector<KeySpec> table = {
#define X(sec, name, set_expr, get_expr)                                  \
  KeySpec{sec, #name, [](RunConfig& c, const std::string& v) {            \
            const std::string k = #name;                                  \
            (void)k;                                                      \
            set_expr;                                                     \
          },                                                              \
          [](const RunConfig& c) -> std::string { return get_expr; }},
      CONFIG_KEYS(X)
#undef X
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
  if (!(cal_q_low >= 0.0 && cal_q_low <= 1.0) || !(cal_q_high >= 0.0 && cal_q_high <= 1.0)) {
    throw Error(Error::Kind::config, "calibration quantiles must lie in [0, 1]");
  }
  if (cal_q_low > cal_q_high) {
    throw Error(Error::Kind::config, "cal_q_low must not exceed cal_q_high");
  }
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const KeySpec& spec : key_table()) keys.push_back(spec.key);
  return keys;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "momentum_update") {  // boolean alias for the ema_mode toggle
    cfg.train.ema_mode = parse_bool(key, value) ? EmaMode::shadow : EmaMode::off;
    return;
  }
  for (const KeySpec& spec : key_table()) {
    if (key == spec.key) {
      spec.set(cfg, value);
      return;
    }
  }
  throw Error(Error::Kind::config, "unknown config key '" + key + "'");
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const size_t eq = line.find('=');
    if (eq != std::string::npos) line[eq] = ' ';
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    std::string value, word;
    while (ls >> word) {
      if (!value.empty()) value += " ";
      value += word;
    }
    try {
      if (value.empty()) {
        throw Error(Error::Kind::config, "key '" + key + "' has no value");
      }
      apply_override(cfg, key, value);
    } catch (const Error& e) {
      throw Error(e.kind, origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  // a bad path is a usage error, not an I/O failure
  if (!std::filesystem::exists(path)) {
    throw Error(Error::Kind::config, "config file not found: " + path);
  }
  std::ifstream in(path);
  if (!in) throw Error(Error::Kind::io, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

std::string render_run_config(const RunConfig& cfg) {
  std::string out = "# resolved run configuration\n";
  const char* section = "";
  for (const KeySpec& spec : key_table()) {
    if (std::string(section) != spec.section) {
      section = spec.section;
      out += "\n# ";
      out += section;
      out += "\n";
    }
    out += spec.key;
    out += " ";
    out += spec.get(cfg);
    out += "\n";
  }
  return out;
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Error::Kind::io, "cannot write config file " + path);
  out << render_run_config(cfg);
  if (!out) throw Error(Error::Kind::io, "short write to " + path);
}

}  // namespace sepad
