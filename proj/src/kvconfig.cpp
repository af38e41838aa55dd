#include "fctc/kvconfig.hpp"

#include <fstream>

namespace fctc::kv {

std::map<std::string, std::string> parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::int64_t Lookup::to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::int64_t out = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": not an integer: " + v);
  }
}

double Lookup::to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": not a number: " + v);
  }
}

std::vector<int> Lookup::int_list(const std::string& key, std::vector<int> fallback) const {
  auto it = kvs_.find(key);
  if (it == kvs_.end()) return fallback;
  std::vector<int> out;
  std::istringstream is(it->second);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<int>(to_int(key, item)));
  }
  return out;
}

std::string join_ints(const std::vector<int>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(xs[i]);
  }
  return out;
}

}  // namespace fctc::kv
