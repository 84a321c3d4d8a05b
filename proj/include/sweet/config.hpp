#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sweet/clock.hpp"

namespace sweet {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Line-oriented key = value files. '#' starts a comment, blank lines are
// skipped. Lookup returns the last value for a key; entries() preserves file
// order including repeated keys (workload files repeat page.* blocks).
class Config {
 public:
  Config() = default;

  static Config from_string(std::string_view text, std::string_view origin = "<string>") {
    Config c;
    size_t lineno = 0;
    size_t pos = 0;
    while (pos <= text.size()) {
      size_t eol = text.find('\n', pos);
      std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
      pos = (eol == std::string_view::npos) ? text.size() + 1 : eol + 1;
      lineno++;
      std::string_view t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      size_t eq = t.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key(trim(t.substr(0, eq)));
      std::string value(trim(t.substr(eq + 1)));
      if (key.empty())
        throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": empty key");
      c.set(key, value);
    }
    return c;
  }

  static Config from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_string(ss.str(), path);
  }

  void set(std::string key, std::string value) {
    entries_.emplace_back(key, value);
    kv_[std::move(key)] = std::move(value);
  }

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get(const std::string& key, std::string_view dflt = "") const {
    auto it = kv_.find(key);
    return it == kv_.end() ? std::string(dflt) : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing required config key: " + key);
    return it->second;
  }

  int64_t get_int(const std::string& key, int64_t dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      size_t used = 0;
      int64_t v = std::stoll(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": not an integer: " + it->second);
    }
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    try {
      size_t used = 0;
      double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": not a number: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key " + key + ": not a boolean: " + v);
  }

  // Durations are written in seconds (decimal allowed), stored as micros.
  Micros get_seconds(const std::string& key, double dflt_seconds) const {
    return seconds_to_micros(get_double(key, dflt_seconds));
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  static std::string_view trim(std::string_view s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

 private:
  std::map<std::string, std::string> kv_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Splits "a,b,c" into trimmed non-empty items.
inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  size_t pos = 0;
  while (pos <= s.size()) {
    size_t c = s.find(sep, pos);
    std::string_view item = s.substr(pos, c == std::string_view::npos ? std::string_view::npos : c - pos);
    pos = (c == std::string_view::npos) ? s.size() + 1 : c + 1;
    std::string_view t = Config::trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

}  // namespace sweet
