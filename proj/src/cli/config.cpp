#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "capsed/cli.hpp"

namespace capsed {

namespace pt = boost::property_tree;

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("config: bad value '" + text + "' for " + key);
  return value;
}

template <class T>
std::string format_number(T value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    if (first == std::string::npos) throw std::invalid_argument("config: empty list element in " + key);
    out.push_back(parse_number<T>(key, item.substr(first, last - first + 1)));
  }
  return out;
}

template <class T>
std::string format_list(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + format_number(values[i]);
  return out;
}

struct Binding {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class Access>
Binding number(std::string key, Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<RunConfig&>()))>;
  return {key, [access, key](RunConfig& c, const std::string& v) { access(c) = parse_number<T>(key, v); },
          [access](const RunConfig& c) { return format_number(access(const_cast<RunConfig&>(c))); }};
}

template <class Access>
Binding list(std::string key, Access access) {
  using T = typename std::remove_cvref_t<decltype(access(std::declval<RunConfig&>()))>::value_type;
  return {key, [access, key](RunConfig& c, const std::string& v) { access(c) = parse_list<T>(key, v); },
          [access](const RunConfig& c) { return format_list(access(const_cast<RunConfig&>(c))); }};
}

template <class Access>
Binding path(std::string key, Access access) {
  return {key, [access](RunConfig& c, const std::string& v) { access(c) = v; },
          [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)).string(); }};
}

#define FIELD(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> all{
      number("run.seed", FIELD(seed)),
      number("run.threads", FIELD(threads)),
      number("run.repeats", FIELD(repeats)),
      path("run.output", FIELD(output)),
      path("data.manifest", FIELD(manifest)),
      number("data.train_clips", FIELD(splits.train)),
      number("data.val_clips", FIELD(splits.val)),
      number("data.test_clips", FIELD(splits.test)),
      number("data.clip_seconds", FIELD(corpus.clip_seconds)),
      number("data.max_polyphony", FIELD(corpus.max_polyphony)),
      number("data.events_per_second", FIELD(corpus.events_per_second)),
      number("data.noise_floor", FIELD(corpus.noise_floor)),
      number("features.sample_rate", FIELD(features.sample_rate)),
      number("features.fft_size", FIELD(features.fft_size)),
      number("features.bands", FIELD(features.bands)),
      number("features.min_hz", FIELD(features.min_hz)),
      number("features.max_hz", FIELD(features.max_hz)),
      number("features.log_floor", FIELD(features.log_floor)),
      number("model.conv_channels", FIELD(model.conv_channels)),
      list("model.pools", FIELD(model.pools)),
      number("model.conv_kernel", FIELD(model.conv_kernel)),
      number("model.primary_channels", FIELD(model.primary_channels)),
      number("model.primary_dim", FIELD(model.primary_dim)),
      number("model.primary_kernel", FIELD(model.primary_kernel)),
      number("model.event_dim", FIELD(model.event_dim)),
      number("model.routing_iterations", FIELD(model.routing_iterations)),
      number("model.gru_hidden", FIELD(model.gru_hidden)),
      number("model.fc_hidden", FIELD(model.fc_hidden)),
      number("model.dropout", FIELD(model.dropout)),
      number("model.bce_weight", FIELD(model.bce_weight)),
      number("model.margin_weight", FIELD(model.margin_weight)),
      number("model.m_plus", FIELD(model.margin.m_plus)),
      number("model.m_minus", FIELD(model.margin.m_minus)),
      number("model.lambda", FIELD(model.margin.lambda)),
      number("train.learning_rate", FIELD(train.adam.learning_rate)),
      number("train.beta1", FIELD(train.adam.beta1)),
      number("train.beta2", FIELD(train.adam.beta2)),
      number("train.epsilon", FIELD(train.adam.epsilon)),
      number("train.batch_size", FIELD(train.batch_size)),
      number("train.patience", FIELD(train.patience)),
      number("train.max_epochs", FIELD(train.max_epochs)),
      number("train.window", FIELD(train.window)),
      number("train.hop", FIELD(train.train_hop)),
      list("train.thresholds", FIELD(train.thresholds.candidates)),
  };
  return all;
}

#undef FIELD

const Binding& find_binding(const std::string& key) {
  for (const auto& b : bindings())
    if (b.key == key) return b;
  throw std::invalid_argument("config: unknown key " + key);
}

void apply(RunConfig& config, const std::string& key, const std::string& value) {
  find_binding(key).set(config, value);
}

}  // namespace

ModelConfig RunConfig::model_config(std::size_t classes) const {
  ModelConfig m = model;
  m.bands = features.bands;
  m.frames = train.window;
  m.classes = classes;
  return m;
}

void RunConfig::validate() const {
  features.validate();
  CorpusConfig c = corpus;
  c.sample_rate = features.sample_rate;
  c.n_clips = splits.total();
  c.validate();
  train.validate();
  model_config(c.classes.size()).validate();
  if (splits.train == 0) throw std::invalid_argument("config: data.train_clips must be positive");
  if (repeats < 2) throw std::invalid_argument("config: run.repeats must be at least 2");
}

RunConfig parse_run_config(std::istream& in, std::span<const std::string> overrides) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  RunConfig config;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw std::invalid_argument("config: key " + section + " is outside any section");
    for (const auto& [key, value] : body) apply(config, section + "." + key, value.data());
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config: override '" + o + "' is not key=value");
    apply(config, o.substr(0, eq), o.substr(eq + 1));
  }
  config.corpus.sample_rate = config.features.sample_rate;
  config.corpus.n_clips = config.splits.total();
  config.corpus.seed = config.seed;
  config.train.seed = config.seed;
  config.validate();
  return config;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& file, std::span<const std::string> overrides) {
  if (!file) {
    std::istringstream empty;
    return parse_run_config(empty, overrides);
  }
  std::ifstream in(*file);
  if (!in) throw std::runtime_error("config file not found: " + file->string());
  return parse_run_config(in, overrides);
}

void write_run_config(std::ostream& os, const RunConfig& config) {
  pt::ptree tree;
  for (const auto& b : bindings()) tree.put(pt::ptree::path_type(b.key, '.'), b.get(config));
  pt::write_ini(os, tree);
}

}  // namespace capsed
