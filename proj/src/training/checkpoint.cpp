#include "capsed/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace capsed {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'E', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void u64(std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os_.write(b, 8);
  }
  void u32(std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os_.write(b, 4);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void vec(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::vector<unsigned char> bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}
  std::uint64_t u64() { return le(8); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t size() {
    const auto n = u64();
    if (n > bytes_.size()) fail("implausible length");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    const std::size_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> vec() {
    std::vector<double> v(size());
    for (auto& x : v) x = f64();
    return v;
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& why) const { throw std::runtime_error(source_ + ": " + why); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail("truncated checkpoint");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = n - 1; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::vector<unsigned char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

void write_model_config(Writer& w, const ModelConfig& c) {
  for (auto v : {c.bands, c.frames, c.conv_channels, c.conv_kernel, c.primary_channels, c.primary_dim,
                 c.primary_kernel, c.classes, c.event_dim, c.routing_iterations, c.gru_hidden, c.fc_hidden}) {
    w.u64(v);
  }
  w.u64(c.pools.size());
  for (auto p : c.pools) w.u64(p);
  for (double v : {c.dropout, c.bce_weight, c.margin_weight, c.margin.m_plus, c.margin.m_minus, c.margin.lambda}) {
    w.f64(v);
  }
}

ModelConfig read_model_config(Reader& r) {
  ModelConfig c;
  for (auto* v : {&c.bands, &c.frames, &c.conv_channels, &c.conv_kernel, &c.primary_channels, &c.primary_dim,
                  &c.primary_kernel, &c.classes, &c.event_dim, &c.routing_iterations, &c.gru_hidden, &c.fc_hidden}) {
    *v = r.u64();
  }
  c.pools.resize(r.size());
  for (auto& p : c.pools) p = r.u64();
  for (auto* v : {&c.dropout, &c.bce_weight, &c.margin_weight, &c.margin.m_plus, &c.margin.m_minus, &c.margin.lambda}) {
    *v = r.f64();
  }
  return c;
}

}  // namespace

Checkpoint make_checkpoint(const CapsuleSed& model, const FeatureConfig& features, std::size_t window,
                           std::vector<std::string> labels, NormalizationStats normalizer, double threshold,
                           const Adam* optimizer) {
  Checkpoint c;
  c.model = model.config();
  c.features = features;
  c.window = window;
  c.labels = std::move(labels);
  c.normalizer = std::move(normalizer);
  c.threshold = threshold;
  for (const auto& p : model.parameters()) {
    c.parameter_names.push_back(p.name);
    c.parameter_shapes.push_back(p.value.shape());
  }
  c.state = capture_state(model);
  if (optimizer) c.optimizer = OptimizerState{optimizer->config(), optimizer->steps(), optimizer->moments()};
  return c;
}

CapsuleSed restore_model(const Checkpoint& checkpoint) {
  CapsuleSed model(checkpoint.model, 0);
  const auto& params = model.parameters();
  if (params.size() != checkpoint.parameter_names.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(checkpoint.parameter_names.size()) +
                             " parameters, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != checkpoint.parameter_names[i] || params[i].value.shape() != checkpoint.parameter_shapes[i]) {
      throw std::runtime_error("checkpoint parameter " + checkpoint.parameter_names[i] + " does not match model");
    }
  }
  restore_state(model, checkpoint.state);
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  Writer w(out);
  w.u32(kVersion);
  write_model_config(w, c.model);

  const auto& f = c.features;
  w.u64(static_cast<std::uint64_t>(f.sample_rate));
  w.f64(f.frame_seconds);
  w.u64(f.fft_size);
  w.u64(f.bands);
  w.f64(f.min_hz);
  w.f64(f.max_hz);
  w.f64(f.log_floor);
  w.u64(c.window);

  if (c.parameter_names.size() != c.state.parameters.size() || c.parameter_shapes.size() != c.state.parameters.size()) {
    throw std::invalid_argument("save_checkpoint: parameter names, shapes and values disagree");
  }
  w.u64(c.state.parameters.size());
  for (std::size_t i = 0; i < c.state.parameters.size(); ++i) {
    w.str(c.parameter_names[i]);
    w.u64(c.parameter_shapes[i].size());
    for (auto d : c.parameter_shapes[i]) w.u64(d);
    w.vec(c.state.parameters[i]);
  }
  w.u64(c.state.batchnorm.size());
  for (const auto& s : c.state.batchnorm) {
    w.u32(s.initialized ? 1 : 0);
    w.vec(s.mean);
    w.vec(s.var);
  }

  w.u32(c.optimizer ? 1 : 0);
  if (c.optimizer) {
    const auto& o = *c.optimizer;
    for (double v : {o.config.learning_rate, o.config.beta1, o.config.beta2, o.config.epsilon}) w.f64(v);
    w.u64(o.steps);
    w.u64(o.moments.size());
    for (const auto& m : o.moments) {
      w.str(m.name);
      w.vec(m.m);
      w.vec(m.v);
    }
  }

  w.vec(c.normalizer.mean);
  w.vec(c.normalizer.std);
  w.f64(c.threshold);
  w.u64(c.labels.size());
  for (const auto& l : c.labels) w.str(l);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, path.string());
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kVersion) r.fail("unsupported checkpoint version " + std::to_string(version));

  Checkpoint c;
  c.model = read_model_config(r);
  auto& f = c.features;
  f.sample_rate = static_cast<int>(r.u64());
  f.frame_seconds = r.f64();
  f.fft_size = r.u64();
  f.bands = r.u64();
  f.min_hz = r.f64();
  f.max_hz = r.f64();
  f.log_floor = r.f64();
  c.window = r.u64();

  const std::size_t n = r.size();
  for (std::size_t i = 0; i < n; ++i) {
    c.parameter_names.push_back(r.str());
    Shape shape(r.size());
    for (auto& d : shape) d = r.u64();
    c.parameter_shapes.push_back(shape);
    c.state.parameters.push_back(r.vec());
    if (c.state.parameters.back().size() != shape_numel(shape)) r.fail("parameter " + c.parameter_names.back() + " size mismatch");
  }
  c.state.batchnorm.resize(r.size());
  for (auto& s : c.state.batchnorm) {
    s.initialized = r.u32() != 0;
    s.mean = r.vec();
    s.var = r.vec();
  }

  if (r.u32() != 0) {
    OptimizerState o;
    o.config.learning_rate = r.f64();
    o.config.beta1 = r.f64();
    o.config.beta2 = r.f64();
    o.config.epsilon = r.f64();
    o.steps = r.u64();
    o.moments.resize(r.size());
    for (auto& m : o.moments) {
      m.name = r.str();
      m.m = r.vec();
      m.v = r.vec();
    }
    c.optimizer = std::move(o);
  }

  c.normalizer.mean = r.vec();
  c.normalizer.std = r.vec();
  c.threshold = r.f64();
  c.labels.resize(r.size());
  for (auto& l : c.labels) l = r.str();
  if (!r.done()) r.fail("trailing bytes after checkpoint");
  c.model.validate();
  return c;
}

}  // namespace capsed
