#ifndef FCTC_KVCONFIG_HPP
#define FCTC_KVCONFIG_HPP

#include "fctc/common.hpp"

#include <map>
#include <sstream>
#include <string>
#include <vector>

// Flat key=value config text: one pair per line, '#' starts a comment.

namespace fctc::kv {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::map<std::string, std::string> parse(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": missing '='");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> parse_file(const std::string& path);

class Lookup {
 public:
  explicit Lookup(std::map<std::string, std::string> kvs) : kvs_(std::move(kvs)) {}

  bool has(const std::string& key) const { return kvs_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& fallback) const {
    auto it = kvs_.find(key);
    return it == kvs_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = kvs_.find(key);
    if (it == kvs_.end()) throw ConfigError("missing config key: " + key);
    return it->second;
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) const {
    auto it = kvs_.find(key);
    return it == kvs_.end() ? fallback : to_int(key, it->second);
  }

  double real(const std::string& key, double fallback) const {
    auto it = kvs_.find(key);
    return it == kvs_.end() ? fallback : to_real(key, it->second);
  }

  std::vector<int> int_list(const std::string& key, std::vector<int> fallback) const;

 private:
  static std::int64_t to_int(const std::string& key, const std::string& v);
  static double to_real(const std::string& key, const std::string& v);
  std::map<std::string, std::string> kvs_;
};

std::string join_ints(const std::vector<int>& xs);

}  // namespace fctc::kv

#endif  // FCTC_KVCONFIG_HPP
