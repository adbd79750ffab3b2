#include "sepad/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "sepad/errors.hpp"
#include "sepad/rng.hpp"

namespace sepad {

using ad::Var;

namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

int ilog2(int v) {
  int r = 0;
  while ((1 << r) < v) ++r;
  return r;
}

constexpr double kInEps = 1e-5;

}  // namespace

std::vector<int> default_pdn_widths(int out_channels) {
  const int a = std::max(16, out_channels / 4);
  const int b = std::max(16, out_channels / 2);
  return {a, a, b};
}

void ModelConfig::validate() const {
  if (pdn.in_channels < 1)
    throw Error(Error::Kind::config, "in_channels must be >= 1");
  if (pdn.out_channels < 1)
    throw Error(Error::Kind::config, "out_channels must be >= 1");
  if (!pdn.widths.empty() && pdn.widths.size() != 3)
    throw Error(Error::Kind::config, "pdn widths must list exactly 3 entries, got " +
                                         std::to_string(pdn.widths.size()));
  for (int w : pdn.widths)
    if (w < 1) throw Error(Error::Kind::config, "pdn width must be >= 1");
  if (!is_pow2(image_size) || image_size < 8)
    throw Error(Error::Kind::config, "image_size must be a power of two >= 8, got " +
                                         std::to_string(image_size));
  if (ae.width < 0 || ae.bottleneck < 0)
    throw Error(Error::Kind::config, "auto-encoder widths must be positive");
}

std::vector<int> ModelConfig::resolved_widths() const {
  return pdn.widths.empty() ? default_pdn_widths(pdn.out_channels) : pdn.widths;
}

int ModelConfig::resolved_ae_width() const {
  return ae.width > 0 ? ae.width : std::max(16, pdn.out_channels / 2);
}

int ModelConfig::resolved_ae_bottleneck() const {
  return ae.bottleneck > 0 ? ae.bottleneck : pdn.out_channels;
}

int ModelConfig::encoder_stages() const { return ilog2(image_size); }

int ModelConfig::decoder_stages() const { return ilog2(image_size / 4); }

void ParamSet::add(std::string name, Tensor t) {
  if (has(name)) throw Error(Error::Kind::config, "duplicate parameter name " + name);
  items.emplace_back(std::move(name), std::move(t));
}

Tensor& ParamSet::at(const std::string& name) {
  for (auto& [n, t] : items)
    if (n == name) return t;
  throw Error(Error::Kind::config, "unknown parameter " + name);
}

const Tensor& ParamSet::at(const std::string& name) const {
  for (const auto& [n, t] : items)
    if (n == name) return t;
  throw Error(Error::Kind::config, "unknown parameter " + name);
}

bool ParamSet::has(const std::string& name) const {
  for (const auto& [n, t] : items)
    if (n == name) return true;
  return false;
}

int64_t ParamSet::total_elements() const {
  int64_t n = 0;
  for (const auto& [name, t] : items) n += t.numel();
  return n;
}

// --- construction ------------------------------------------------------------

namespace {

Tensor he_init(std::vector<int> shape, Rng& rng) {
  int64_t fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  return Tensor::randn(std::move(shape), rng, std::sqrt(2.0 / double(fan_in)));
}

void add_conv(ParamSet& ps, const std::string& name, int co, int ci, int k, Rng& rng) {
  ps.add(name + ".w", he_init({co, ci, k, k}, rng));
  ps.add(name + ".b", Tensor::zeros({co}));
}

void add_pdn(ParamSet& ps, const std::string& prefix, int cin, const std::vector<int>& w,
             int cout, Rng& rng) {
  add_conv(ps, prefix + "conv0", w[0], cin, 4, rng);
  add_conv(ps, prefix + "conv1", w[1], w[0], 4, rng);
  add_conv(ps, prefix + "conv2", w[2], w[1], 3, rng);
  add_conv(ps, prefix + "conv3", cout, w[2], 4, rng);
}

void add_ae(ParamSet& ps, const ModelConfig& cfg, Rng& rng) {
  const int width = cfg.resolved_ae_width();
  const int bott = cfg.resolved_ae_bottleneck();
  const int n_enc = cfg.encoder_stages();
  const int n_dec = cfg.decoder_stages();
  for (int i = 0; i < n_enc; ++i) {
    const int ci = i == 0 ? cfg.pdn.in_channels : width;
    const int co = i == n_enc - 1 ? bott : width;
    add_conv(ps, "enc" + std::to_string(i), co, ci, 3, rng);
    if (i < n_enc - 1 && cfg.instance_norm_relu) {
      ps.add("enc" + std::to_string(i) + ".g", Tensor::full({co}, 1.0));
      ps.add("enc" + std::to_string(i) + ".bt", Tensor::zeros({co}));
    }
  }
  for (int j = 0; j < n_dec; ++j) {
    const int ci = j == 0 ? bott : width;
    add_conv(ps, "dec" + std::to_string(j), width, ci, 3, rng);
    if (cfg.instance_norm_relu) {
      ps.add("dec" + std::to_string(j) + ".g", Tensor::full({width}, 1.0));
      ps.add("dec" + std::to_string(j) + ".bt", Tensor::zeros({width}));
    }
  }
  add_conv(ps, "out", cfg.pdn.out_channels, width, 3, rng);
}

void snap_all(ParamSet& ps) {
  for (auto& [name, t] : ps.items) t.snap_f32();
}

}  // namespace

TripletModel make_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  TripletModel m;
  m.config = cfg;
  const std::vector<int> w = cfg.resolved_widths();

  Rng teacher_rng(derive_seed(cfg.teacher_seed, 0x7e));
  add_pdn(m.teacher, "", cfg.pdn.in_channels, w, cfg.pdn.out_channels, teacher_rng);

  Rng student_rng(derive_seed(seed, 0x57));
  if (cfg.separate_student_heads) {
    add_pdn(m.student, "head_t.", cfg.pdn.in_channels, w, cfg.pdn.out_channels, student_rng);
    add_pdn(m.student, "head_a.", cfg.pdn.in_channels, w, cfg.pdn.out_channels, student_rng);
  } else {
    add_pdn(m.student, "", cfg.pdn.in_channels, w, 2 * cfg.pdn.out_channels, student_rng);
  }

  Rng ae_rng(derive_seed(seed, 0xae));
  add_ae(m.autoencoder, cfg, ae_rng);

  snap_all(m.teacher);
  snap_all(m.student);
  snap_all(m.autoencoder);
  m.student_shadow = m.student;
  return m;
}

// --- graphs --------------------------------------------------------------------

std::vector<Var> bind_params(ad::Tape& t, const ParamSet& ps, bool requires_grad) {
  std::vector<Var> vars;
  vars.reserve(ps.items.size());
  for (const auto& [name, tensor] : ps.items) vars.push_back(t.leaf(tensor, requires_grad));
  return vars;
}

namespace {

struct Cursor {
  const std::vector<Var>* v;
  size_t i = 0;
  Var next() {
    if (i >= v->size()) throw_shape("network graph ran past its parameter list");
    return (*v)[i++];
  }
};

void check_image(const Tensor& img, const ModelConfig& cfg) {
  if (img.ndim() != 3 || img.dim(0) != cfg.pdn.in_channels)
    throw_shape("expected a " + std::to_string(cfg.pdn.in_channels) + "xHxW image, got " +
                img.shape_str());
  if (img.dim(1) % 4 != 0 || img.dim(2) % 4 != 0)
    throw_shape("image extent must be divisible by 4, got " + img.shape_str());
}

Var pdn_stack(Cursor& c, Var x) {
  Var w0 = c.next(), b0 = c.next();
  x = ad::conv2d(ad::pad2d(x, 1, 2, 1, 2), w0, b0, 1, 0);
  x = ad::avg_pool2d(ad::relu(x), 2, 2);
  Var w1 = c.next(), b1 = c.next();
  x = ad::conv2d(ad::pad2d(x, 1, 2, 1, 2), w1, b1, 1, 0);
  x = ad::avg_pool2d(ad::relu(x), 2, 2);
  Var w2 = c.next(), b2 = c.next();
  x = ad::relu(ad::conv2d(x, w2, b2, 1, 1));
  Var w3 = c.next(), b3 = c.next();
  return ad::conv2d(ad::pad2d(x, 1, 2, 1, 2), w3, b3, 1, 0);
}

}  // namespace

Var teacher_graph(const ModelConfig& cfg, const std::vector<Var>& p, Var image) {
  check_image(image.value(), cfg);
  Cursor c{&p};
  return pdn_stack(c, image);
}

std::pair<Var, Var> student_graph(const ModelConfig& cfg, const std::vector<Var>& p,
                                  Var image) {
  check_image(image.value(), cfg);
  Cursor c{&p};
  if (cfg.separate_student_heads) {
    Var s_t = pdn_stack(c, image);
    Var s_a = pdn_stack(c, image);
    return {s_t, s_a};
  }
  Var trunk = pdn_stack(c, image);
  const int cc = cfg.pdn.out_channels;
  return {ad::slice_channels(trunk, 0, cc), ad::slice_channels(trunk, cc, 2 * cc)};
}

Var ae_graph(const ModelConfig& cfg, const std::vector<Var>& p, Var image) {
  check_image(image.value(), cfg);
  const int n_enc = cfg.encoder_stages();
  const int n_dec = cfg.decoder_stages();
  const int h4 = image.value().dim(1) / 4;
  const int w4 = image.value().dim(2) / 4;
  Cursor c{&p};
  Var x = image;
  for (int i = 0; i < n_enc; ++i) {
    Var w = c.next(), b = c.next();
    x = ad::conv2d(x, w, b, 2, 1);
    if (i < n_enc - 1) {
      if (cfg.instance_norm_relu) {
        Var g = c.next(), bt = c.next();
        x = ad::instance_norm(x, g, bt, kInEps);
      }
      x = ad::relu(x);
    }
  }
  if (cfg.instance_norm_relu) x = ad::relu(x);  // decoder opens with a bare ReLU
  for (int j = 0; j < n_dec; ++j) {
    const int th = std::max(1, h4 >> (n_dec - 1 - j));
    const int tw = std::max(1, w4 >> (n_dec - 1 - j));
    x = ad::bilinear_resize(x, th, tw);
    Var w = c.next(), b = c.next();
    x = ad::conv2d(x, w, b, 1, 1);
    if (cfg.instance_norm_relu) {
      Var g = c.next(), bt = c.next();
      x = ad::instance_norm(x, g, bt, kInEps);
    }
    x = ad::relu(x);
  }
  Var w = c.next(), b = c.next();
  return ad::conv2d(x, w, b, 1, 1);
}

// --- inference ---------------------------------------------------------------

Tensor teacher_forward(const TripletModel& m, const Tensor& image) {
  ad::Tape t;
  std::vector<Var> p = bind_params(t, m.teacher, false);
  return teacher_graph(m.config, p, t.constant(image)).value();
}

std::pair<Tensor, Tensor> student_forward(const TripletModel& m, const Tensor& image) {
  ad::Tape t;
  std::vector<Var> p = bind_params(t, m.student, false);
  auto [s_t, s_a] = student_graph(m.config, p, t.constant(image));
  return {s_t.value(), s_a.value()};
}

Tensor autoencoder_forward(const TripletModel& m, const Tensor& image) {
  ad::Tape t;
  std::vector<Var> p = bind_params(t, m.autoencoder, false);
  return ae_graph(m.config, p, t.constant(image)).value();
}

std::pair<Tensor, Tensor> ema_shadow_forward(const TripletModel& m, const Tensor& image) {
  ad::Tape t;
  std::vector<Var> p = bind_params(t, m.student_shadow, false);
  auto [s_t, s_a] = student_graph(m.config, p, t.constant(image));
  return {s_t.value(), s_a.value()};
}

// --- checkpointing -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'E', 'P', 'D', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff), (unsigned char)((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t take_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (is.gcount() != 4) throw Error(Error::Kind::truncated, "checkpoint ended early");
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

void put_f32(std::ostream& os, const Tensor& t) {
  std::vector<unsigned char> buf(size_t(t.numel()) * 4);
  for (long i = 0; i < t.numel(); ++i) {
    float f = float(t.data[size_t(i)]);
    uint32_t u;
    std::memcpy(&u, &f, 4);
    buf[size_t(i) * 4 + 0] = (unsigned char)(u & 0xff);
    buf[size_t(i) * 4 + 1] = (unsigned char)((u >> 8) & 0xff);
    buf[size_t(i) * 4 + 2] = (unsigned char)((u >> 16) & 0xff);
    buf[size_t(i) * 4 + 3] = (unsigned char)((u >> 24) & 0xff);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

void take_f32(std::istream& is, Tensor& t) {
  std::vector<unsigned char> buf(size_t(t.numel()) * 4);
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (size_t(is.gcount()) != buf.size())
    throw Error(Error::Kind::truncated, "checkpoint ended early inside an array");
  for (long i = 0; i < t.numel(); ++i) {
    uint32_t u = uint32_t(buf[size_t(i) * 4 + 0]) | (uint32_t(buf[size_t(i) * 4 + 1]) << 8) |
                 (uint32_t(buf[size_t(i) * 4 + 2]) << 16) |
                 (uint32_t(buf[size_t(i) * 4 + 3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    t.data[size_t(i)] = double(f);
  }
}

void put_array(std::ostream& os, const std::string& name, const Tensor& t) {
  put_u32(os, uint32_t(name.size()));
  os.write(name.data(), std::streamsize(name.size()));
  put_u32(os, uint32_t(t.ndim()));
  for (int d : t.shape) put_u32(os, uint32_t(d));
  put_f32(os, t);
}

std::string manifest_text(const TripletModel& m) {
  const ModelConfig& c = m.config;
  std::ostringstream os;
  os << "in_channels=" << c.pdn.in_channels << "\n";
  os << "out_channels=" << c.pdn.out_channels << "\n";
  os << "widths=";
  const std::vector<int> w = c.resolved_widths();
  for (size_t i = 0; i < w.size(); ++i) os << (i ? "," : "") << w[i];
  os << "\n";
  os << "ae_width=" << c.resolved_ae_width() << "\n";
  os << "ae_bottleneck=" << c.resolved_ae_bottleneck() << "\n";
  os << "image_size=" << c.image_size << "\n";
  os << "separate_student_heads=" << (c.separate_student_heads ? 1 : 0) << "\n";
  os << "instance_norm_relu=" << (c.instance_norm_relu ? 1 : 0) << "\n";
  os << "teacher_seed=" << c.teacher_seed << "\n";
  os << "step=" << m.step << "\n";
  return os.str();
}

std::map<std::string, std::string> parse_manifest(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(Error::Kind::format, "checkpoint manifest line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& need(const std::map<std::string, std::string>& kv, const std::string& k) {
  auto it = kv.find(k);
  if (it == kv.end())
    throw Error(Error::Kind::format, "checkpoint manifest is missing " + k);
  return it->second;
}

}  // namespace

void save_model(const TripletModel& m, const std::string& path, const ParamSet* extra) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(Error::Kind::io, "cannot open " + path + " for writing");
  os.write(kMagic, 8);
  put_u32(os, kVersion);
  const std::string manifest = manifest_text(m);
  put_u32(os, uint32_t(manifest.size()));
  os.write(manifest.data(), std::streamsize(manifest.size()));

  uint32_t count = uint32_t(m.teacher.items.size() + m.student.items.size() +
                            m.autoencoder.items.size() + m.student_shadow.items.size() +
                            (extra ? extra->items.size() : 0));
  put_u32(os, count);
  for (const auto& [n, t] : m.teacher.items) put_array(os, "teacher/" + n, t);
  for (const auto& [n, t] : m.student.items) put_array(os, "student/" + n, t);
  for (const auto& [n, t] : m.autoencoder.items) put_array(os, "ae/" + n, t);
  for (const auto& [n, t] : m.student_shadow.items) put_array(os, "shadow/" + n, t);
  if (extra)
    for (const auto& [n, t] : extra->items) put_array(os, "extra/" + n, t);
  if (!os) throw Error(Error::Kind::io, "write failed for " + path);
}

TripletModel load_model(const std::string& path, ParamSet* extra) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Error::Kind::io, "cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8) throw Error(Error::Kind::truncated, "checkpoint shorter than its header");
  if (std::memcmp(magic, kMagic, 8) != 0)
    throw Error(Error::Kind::format, path + " is not a model checkpoint (bad magic)");
  const uint32_t version = take_u32(is);
  if (version != kVersion)
    throw Error(Error::Kind::version, "unsupported checkpoint version " +
                                          std::to_string(version) + " (expected " +
                                          std::to_string(kVersion) + ")");
  const uint32_t mlen = take_u32(is);
  std::string manifest(mlen, '\0');
  is.read(manifest.data(), mlen);
  if (uint32_t(is.gcount()) != mlen)
    throw Error(Error::Kind::truncated, "checkpoint ended inside the manifest");
  const auto kv = parse_manifest(manifest);

  ModelConfig cfg;
  cfg.pdn.in_channels = std::stoi(need(kv, "in_channels"));
  cfg.pdn.out_channels = std::stoi(need(kv, "out_channels"));
  {
    std::istringstream ws(need(kv, "widths"));
    std::string tok;
    while (std::getline(ws, tok, ',')) cfg.pdn.widths.push_back(std::stoi(tok));
  }
  cfg.ae.width = std::stoi(need(kv, "ae_width"));
  cfg.ae.bottleneck = std::stoi(need(kv, "ae_bottleneck"));
  cfg.image_size = std::stoi(need(kv, "image_size"));
  cfg.separate_student_heads = need(kv, "separate_student_heads") == "1";
  cfg.instance_norm_relu = need(kv, "instance_norm_relu") == "1";
  cfg.teacher_seed = std::stoull(need(kv, "teacher_seed"));

  TripletModel m = make_model(cfg, 0);
  m.step = std::stoll(need(kv, "step"));

  const uint32_t count = take_u32(is);
  size_t filled = 0;
  const size_t expected = m.teacher.items.size() + m.student.items.size() +
                          m.autoencoder.items.size() + m.student_shadow.items.size();
  for (uint32_t a = 0; a < count; ++a) {
    const uint32_t nlen = take_u32(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    if (uint32_t(is.gcount()) != nlen)
      throw Error(Error::Kind::truncated, "checkpoint ended inside an array name");
    const uint32_t ndim = take_u32(is);
    std::vector<int> shape;
    for (uint32_t i = 0; i < ndim; ++i) shape.push_back(int(take_u32(is)));
    Tensor t = Tensor::zeros(shape);
    take_f32(is, t);

    const size_t slash = name.find('/');
    if (slash == std::string::npos)
      throw Error(Error::Kind::format, "checkpoint array without a section: " + name);
    const std::string section = name.substr(0, slash);
    const std::string pname = name.substr(slash + 1);
    ParamSet* ps = nullptr;
    if (section == "teacher") ps = &m.teacher;
    else if (section == "student") ps = &m.student;
    else if (section == "ae") ps = &m.autoencoder;
    else if (section == "shadow") ps = &m.student_shadow;
    else if (section == "extra") {
      if (extra) extra->add(pname, std::move(t));
      continue;
    } else {
      throw Error(Error::Kind::format, "checkpoint has unknown section " + section);
    }
    if (!ps->has(pname))
      throw_shape("checkpoint array " + name + " does not exist in a " +
                  std::to_string(cfg.pdn.out_channels) + "-channel model");
    Tensor& dst = ps->at(pname);
    if (dst.shape != t.shape)
      throw_shape("checkpoint array " + name + " has shape " + t.shape_str() +
                  ", model expects " + dst.shape_str());
    dst = std::move(t);
    ++filled;
  }
  if (filled != expected)
    throw Error(Error::Kind::truncated,
                "checkpoint carries " + std::to_string(filled) + " model arrays, expected " +
                    std::to_string(expected));
  return m;
}

void require_matching_config(const ModelConfig& expected, const ModelConfig& loaded) {
  auto fail = [](const std::string& field, const std::string& a, const std::string& b) {
    throw Error(Error::Kind::config,
                "checkpoint config mismatch on " + field + ": expected " + a + ", found " + b);
  };
  if (expected.pdn.in_channels != loaded.pdn.in_channels)
    fail("in_channels", std::to_string(expected.pdn.in_channels),
         std::to_string(loaded.pdn.in_channels));
  if (expected.pdn.out_channels != loaded.pdn.out_channels)
    fail("out_channels", std::to_string(expected.pdn.out_channels),
         std::to_string(loaded.pdn.out_channels));
  if (expected.resolved_widths() != loaded.resolved_widths()) fail("widths", "", "");
  if (expected.resolved_ae_width() != loaded.resolved_ae_width())
    fail("ae_width", std::to_string(expected.resolved_ae_width()),
         std::to_string(loaded.resolved_ae_width()));
  if (expected.resolved_ae_bottleneck() != loaded.resolved_ae_bottleneck())
    fail("ae_bottleneck", std::to_string(expected.resolved_ae_bottleneck()),
         std::to_string(loaded.resolved_ae_bottleneck()));
  if (expected.image_size != loaded.image_size)
    fail("image_size", std::to_string(expected.image_size), std::to_string(loaded.image_size));
  if (expected.separate_student_heads != loaded.separate_student_heads)
    fail("separate_student_heads", std::to_string(expected.separate_student_heads),
         std::to_string(loaded.separate_student_heads));
  if (expected.instance_norm_relu != loaded.instance_norm_relu)
    fail("instance_norm_relu", std::to_string(expected.instance_norm_relu),
         std::to_string(loaded.instance_norm_relu));
  if (expected.teacher_seed != loaded.teacher_seed)
    fail("teacher_seed", std::to_string(expected.teacher_seed),
         std::to_string(loaded.teacher_seed));
}

}  // namespace sepad
