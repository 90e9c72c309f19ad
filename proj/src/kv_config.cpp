#include "amh/kv_config.hpp"

#include <fstream>
#include <sstream>

namespace amh {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

KvConfig KvConfig::parse(const std::string& text) {
  KvConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

KvConfig KvConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void KvConfig::set(const std::string& key, const std::string& value) {
  entries_.emplace_back(key, value);
  index_[key] = entries_.size() - 1;
}

const std::string& KvConfig::get(const std::string& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) throw ConfigError("missing config key '" + key + "'");
  return entries_[it->second].second;
}

std::string KvConfig::get_or(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(get(key), &used);
    if (used != get(key).size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not a number: '" + get(key) + "'");
  }
}

std::int64_t KvConfig::get_int(const std::string& key, std::int64_t fallback) const {
  if (!has(key)) return fallback;
  try {
    std::size_t used = 0;
    const long long v = std::stoll(get(key), &used);
    if (used != get(key).size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': not an integer: '" + get(key) + "'");
  }
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = get(key);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw ConfigError("config key '" + key + "': not a boolean: '" + v + "'");
}

std::vector<std::int64_t> KvConfig::get_int_list(const std::string& key,
                                                 const std::vector<std::int64_t>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::int64_t> out;
  for (const auto& part : split(get(key), ',')) {
    try {
      out.push_back(std::stoll(part));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': bad list element '" + part + "'");
    }
  }
  return out;
}

std::vector<std::string> KvConfig::all(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) {
    if (k == key) out.push_back(v);
  }
  return out;
}

}  // namespace amh
