#include "rego/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "rego/errors.hpp"

namespace rego {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool valid_name(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-';
  });
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ConfigError("config key " + key + ": '" + text + "' is not a valid number");
  return v;
}

}  // namespace

std::vector<ConfigEntry> parse_config_text(const std::string& text) {
  std::vector<ConfigEntry> out;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!valid_name(section)) throw ConfigError("config line " + std::to_string(line_no) + ": bad section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (!valid_name(key)) throw ConfigError("config line " + std::to_string(line_no) + ": bad key '" + key + "'");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    out.push_back({section.empty() ? key : section + "." + key, value, line_no});
  }
  return out;
}

Config::Config(std::vector<ConfigKey> schema) : schema_(std::move(schema)) {
  for (const auto& k : schema_) values_[k.name] = {k.default_value, "default"};
}

bool Config::known(const std::string& key) const { return values_.count(key) != 0; }

void Config::set(const std::string& key, const std::string& value, const std::string& source) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "' (from " + source + ")");
  it->second = {value, source};
}

void Config::merge_text(const std::string& text, const std::string& source) {
  for (const auto& e : parse_config_text(text)) {
    if (!known(e.key)) {
      throw ConfigError("unknown config key '" + e.key + "' at " + source + ":" + std::to_string(e.line));
    }
    set(e.key, e.value, source);
  }
}

void Config::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str(), path.string());
}

std::string Config::env_name(const ConfigKey& key) {
  if (!key.env.empty()) return key.env;
  std::string out = "REGO_";
  for (char c : key.name) {
    out += (c == '.' || c == '-') ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return out;
}

void Config::merge_env(const EnvLookup& getenv_fn) {
  for (const auto& k : schema_) {
    const std::string name = env_name(k);
    if (const char* v = getenv_fn(name.c_str())) set(k.name, v, "env " + name);
  }
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.text;
}

const std::string& Config::source(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.source;
}

long Config::get_int(const std::string& key) const { return parse_number<long>(key, get(key)); }
std::uint64_t Config::get_uint(const std::string& key) const { return parse_number<std::uint64_t>(key, get(key)); }
double Config::get_double(const std::string& key) const { return parse_number<double>(key, get(key)); }

bool Config::get_bool(const std::string& key) const {
  std::string v = get(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + ": '" + get(key) + "' is not a boolean");
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get(key))) out.push_back(parse_number<double>(key, item));
  return out;
}

std::vector<int> Config::get_ints(const std::string& key) const {
  std::vector<int> out;
  for (const auto& item : split_list(get(key))) out.push_back(parse_number<int>(key, item));
  return out;
}

std::vector<ConfigKey> default_schema() {
  return {
      {"seed", "0", "global seed (model init, sampling, embedder)", ""},
      {"data.height", "64", "image height after resizing", ""},
      {"data.width", "128", "image width after resizing (even)", ""},
      {"data.threshold", "0.6", "edge binarization threshold for sketches", ""},
      {"data.k", "5", "neighbors stored per image in the index", ""},
      {"model.base_channels", "32", "channel width of the first encoder stage", ""},
      {"model.decoder_layers", "4", "number of decoder layers", ""},
      {"model.acs_layers", "auto", "decoder layers with ACS, comma list or auto (all but last) or none", ""},
      {"style.alpha", "0.1", "style ranking margin", ""},
      {"style.layer_weights", "0.2,0.2,0.2,0.2,0.2", "per-layer style weights", ""},
      {"style.extractor", "random-pyramid:seed=0", "style feature extractor id", ""},
      {"train.iterations", "200", "training iterations", ""},
      {"train.batch_size", "1", "examples per iteration", ""},
      {"train.lr_g", "0.0002", "generator learning rate", ""},
      {"train.lr_d", "0.0002", "discriminator learning rate", ""},
      {"train.beta1", "0.5", "Adam beta1", ""},
      {"train.beta2", "0.999", "Adam beta2", ""},
      {"train.style_weight", "0.5", "weight of the style ranking loss", ""},
      {"train.recon_weight", "1.0", "weight of the L1 reconstruction loss", ""},
      {"train.adv_weight", "0.1", "weight of the adversarial loss", ""},
      {"train.k_neighbors", "5", "references sampled from this many neighbors", ""},
      {"train.checkpoint_every", "100", "iterations between checkpoints", ""},
      {"train.augment_sketch", "false", "randomly drop sketch strokes", ""},
      {"train.augment_p", "0.3", "stroke drop probability", ""},
      {"train.precision", "f32", "checkpoint precision (f32 or f64)", ""},
      {"eval.backend", "random-conv", "IS/FID classifier backend", ""},
      {"serve.checkpoint", "", "checkpoint to serve", "REGO_CHECKPOINT"},
      {"serve.index", "", "prepared dataset dir or its index.json", "REGO_INDEX"},
      {"serve.port", "8080", "listen port", "REGO_PORT"},
      {"serve.host", "127.0.0.1", "listen address", "REGO_HOST"},
  };
}

PrepareOptions prepare_options_from(const Config& cfg) {
  PrepareOptions o;
  o.height = static_cast<int>(cfg.get_int("data.height"));
  o.width = static_cast<int>(cfg.get_int("data.width"));
  o.threshold = cfg.get_double("data.threshold");
  o.k = static_cast<int>(cfg.get_int("data.k"));
  o.seed = cfg.get_uint("seed");
  return o;
}

GeneratorConfig generator_config_from(const Config& cfg) {
  GeneratorConfig g;
  g.height = static_cast<int>(cfg.get_int("data.height"));
  g.width = static_cast<int>(cfg.get_int("data.width"));
  g.base_channels = static_cast<int>(cfg.get_int("model.base_channels"));
  g.decoder_layers = static_cast<int>(cfg.get_int("model.decoder_layers"));
  g.seed = cfg.get_uint("seed");
  g.sketch_threshold = cfg.get_double("data.threshold");
  const std::string acs = trim(cfg.get("model.acs_layers"));
  if (acs == "none") {
    g.acs_enabled.assign(static_cast<std::size_t>(std::max(g.decoder_layers, 0)), false);
  } else if (acs != "auto") {
    g.acs_enabled.assign(static_cast<std::size_t>(std::max(g.decoder_layers, 0)), false);
    for (int l : cfg.get_ints("model.acs_layers")) {
      if (l < 0 || l >= g.decoder_layers) throw ConfigError("model.acs_layers: layer " + std::to_string(l) + " out of range");
      g.acs_enabled[static_cast<std::size_t>(l)] = true;
    }
  }
  g.validate();
  return g;
}

StyleConfig style_config_from(const Config& cfg) {
  StyleConfig s;
  s.alpha = cfg.get_double("style.alpha");
  s.layer_weights = cfg.get_doubles("style.layer_weights");
  s.extractor = cfg.get("style.extractor");
  s.validate();
  return s;
}

TrainConfig train_config_from(const Config& cfg) {
  TrainConfig t;
  t.iterations = cfg.get_int("train.iterations");
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size"));
  t.lr_g = cfg.get_double("train.lr_g");
  t.lr_d = cfg.get_double("train.lr_d");
  t.beta1 = cfg.get_double("train.beta1");
  t.beta2 = cfg.get_double("train.beta2");
  t.style_weight = cfg.get_double("train.style_weight");
  t.recon_weight = cfg.get_double("train.recon_weight");
  t.adv_weight = cfg.get_double("train.adv_weight");
  t.seed = cfg.get_uint("seed");
  t.k_neighbors = static_cast<int>(cfg.get_int("train.k_neighbors"));
  t.checkpoint_every = cfg.get_int("train.checkpoint_every");
  t.augment_sketch = cfg.get_bool("train.augment_sketch");
  t.augment_p = cfg.get_double("train.augment_p");
  const std::string p = cfg.get("train.precision");
  if (p == "f32") {
    t.checkpoint_precision = Precision::F32;
  } else if (p == "f64") {
    t.checkpoint_precision = Precision::F64;
  } else {
    throw ConfigError("train.precision must be f32 or f64");
  }
  t.validate();
  return t;
}

}  // namespace rego
