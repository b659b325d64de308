#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "rego/dataprep.hpp"
#include "rego/generator.hpp"
#include "rego/styleloss.hpp"
#include "rego/trainer.hpp"

// Config file grammar (one statement per line):
//
//   # comment            ; comment
//   [section]
//   key = value          value runs to end of line; surrounding blanks and
//                        one pair of matching double quotes are stripped
//
// Keys before the first section header live at top level ("seed"); others
// are addressed as "section.key". Lists are comma separated.

namespace rego {

struct ConfigKey {
  std::string name;           // "train.iterations"
  std::string default_value;
  std::string help;
  std::string env;            // empty: REGO_<SECTION>_<KEY>
};

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

/// Parses the grammar above. Throws ConfigError with the line number.
std::vector<ConfigEntry> parse_config_text(const std::string& text);

/// Merged key/value view: defaults < file < environment < explicit sets.
class Config {
 public:
  using EnvLookup = std::function<const char*(const char*)>;

  explicit Config(std::vector<ConfigKey> schema);

  void merge_file(const std::filesystem::path& path);
  void merge_text(const std::string& text, const std::string& source = "<text>");
  void merge_env(const EnvLookup& getenv_fn);
  void set(const std::string& key, const std::string& value, const std::string& source = "flag");

  bool known(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  const std::string& source(const std::string& key) const;
  long get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<int> get_ints(const std::string& key) const;

  const std::vector<ConfigKey>& schema() const noexcept { return schema_; }
  static std::string env_name(const ConfigKey& key);

 private:
  struct Value {
    std::string text;
    std::string source;
  };
  std::vector<ConfigKey> schema_;
  std::map<std::string, Value> values_;
};

/// Every key the CLI understands, with defaults.
std::vector<ConfigKey> default_schema();

PrepareOptions prepare_options_from(const Config& cfg);
GeneratorConfig generator_config_from(const Config& cfg);
StyleConfig style_config_from(const Config& cfg);
TrainConfig train_config_from(const Config& cfg);

}  // namespace rego
