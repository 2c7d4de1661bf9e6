#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace reflect {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat sectioned key/value file:
//   [section]
//   key = value   # trailing comments allowed
// Keys are tracked as they are consumed; anything left over is a hard error,
// so misspelled or stale fields cannot silently change a run.
class Config {
 public:
  static Config parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str(), path);
  }

  static Config parse_string(const std::string& text, const std::string& origin = "<string>") {
    Config c;
    c.origin_ = origin;
    c.raw_text_ = text;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string s = strip_comment(line);
      s = trim(s);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']')
          throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
        section = trim(s.substr(1, s.size() - 2));
        if (section.empty())
          throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty section name");
        c.sections_[section];
        continue;
      }
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(s.substr(0, eq));
      std::string val = trim(s.substr(eq + 1));
      if (key.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (section.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": key outside any section");
      auto& sec = c.sections_[section];
      if (sec.count(key))
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key +
                          "' in [" + section + "]");
      sec[key] = val;
    }
    return c;
  }

  bool has_section(const std::string& s) const { return sections_.count(s) != 0; }

  bool has(const std::string& sec, const std::string& key) const {
    auto it = sections_.find(sec);
    return it != sections_.end() && it->second.count(key) != 0;
  }

  std::string get_string(const std::string& sec, const std::string& key) {
    mark(sec, key);
    auto it = sections_.find(sec);
    if (it == sections_.end())
      throw ConfigError(origin_ + ": missing section [" + sec + "]");
    auto kt = it->second.find(key);
    if (kt == it->second.end())
      throw ConfigError(origin_ + ": missing key '" + key + "' in [" + sec + "]");
    return kt->second;
  }

  std::string get_string_or(const std::string& sec, const std::string& key,
                            const std::string& dflt) {
    if (!has(sec, key)) return dflt;
    return get_string(sec, key);
  }

  double get_double(const std::string& sec, const std::string& key) {
    return to_double(get_string(sec, key), sec, key);
  }

  double get_double_or(const std::string& sec, const std::string& key, double dflt) {
    if (!has(sec, key)) return dflt;
    return get_double(sec, key);
  }

  long get_int(const std::string& sec, const std::string& key) {
    std::string v = get_string(sec, key);
    try {
      size_t pos = 0;
      long r = std::stol(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return r;
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": value of " + key + " in [" + sec + "] is not an integer: '" + v + "'");
    }
  }

  long get_int_or(const std::string& sec, const std::string& key, long dflt) {
    if (!has(sec, key)) return dflt;
    return get_int(sec, key);
  }

  // Call after all loaders have consumed their fields.
  void reject_unknown_keys() const {
    for (const auto& [sec, kv] : sections_) {
      for (const auto& [key, val] : kv) {
        if (!consumed_.count(sec + "\x1f" + key))
          throw ConfigError(origin_ + ": unknown key '" + key + "' in [" + sec + "]");
      }
    }
  }

  const std::string& raw_text() const { return raw_text_; }
  const std::string& origin() const { return origin_; }

 private:
  void mark(const std::string& sec, const std::string& key) {
    consumed_.insert(sec + "\x1f" + key);
  }

  double to_double(const std::string& v, const std::string& sec, const std::string& key) const {
    try {
      size_t pos = 0;
      double r = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return r;
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": value of " + key + " in [" + sec + "] is not a number: '" + v + "'");
    }
  }

  static std::string strip_comment(const std::string& s) {
    for (size_t i = 0; i < s.size(); ++i)
      if (s[i] == '#' || s[i] == ';') return s.substr(0, i);
    return s;
  }

  static std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  std::string origin_;
  std::string raw_text_;
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::set<std::string> consumed_;
};

// FNV-1a over the raw config text; recorded in run manifests so outputs can
// be traced back to the exact inputs that produced them.
inline std::string fnv1a_hex(const std::string& text) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace reflect
