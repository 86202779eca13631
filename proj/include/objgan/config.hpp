#pragma once

// Flat key=value configuration. Every key is registered with a default and a
// one-line description; unknown keys are rejected.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace objgan::cfg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Entry {
  std::string key;
  std::string default_value;
  std::string help;
  bool arch = false;  // fixes a tensor shape; adopted from checkpoints
};

const std::vector<Entry>& registry();

class Config {
 public:
  Config();  // all defaults

  static Config load(const std::string& path);
  // `#` starts a comment; blank lines are skipped; `origin` labels errors.
  void merge_text(const std::string& text, const std::string& origin);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Overwrite arch keys whose name starts with one of `prefixes` by the
  // values found in `stored` (serialised text).
  void adopt_arch(const std::string& stored, const std::vector<std::string>& prefixes);

  // Every key in registry order, one `key=value` per line.
  std::string serialize() const;

 private:
  std::map<std::string, std::string> values_;
};

// Human-readable listing of every key, its default and description.
std::string reference();

}  // namespace objgan::cfg
