#include "ppmu/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "ppmu/errors.hpp"

namespace ppmu {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

Config Config::parse_string(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    cfg.kv_[key] = value;
  }
  return cfg;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_string(text.str());
}

void Config::set(const std::string& key, const std::string& value) { kv_[key] = value; }

void Config::set_kv(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

bool Config::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string Config::require(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw ConfigError("missing required config key '" + key + "'");
  return it->second;
}

std::string Config::get_string(const std::string& key) const { return require(key); }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

namespace {

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  return out;
}

}  // namespace

int Config::get_int(const std::string& key) const { return to_int(key, require(key)); }

int Config::get_int(const std::string& key, int fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : to_int(key, it->second);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::uint64_t out = 0;
  const std::string& v = it->second;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': '" + v + "' is not an unsigned integer");
  return out;
}

double Config::get_double(const std::string& key) const {
  return to_double(key, require(key));
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : to_double(key, it->second);
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            const std::vector<double>& fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::vector<double> out;
  for (const auto& tok : split_list(it->second)) out.push_back(to_double(key, tok));
  if (out.empty()) throw ConfigError("config key '" + key + "' is an empty list");
  return out;
}

std::vector<int> Config::get_int_list(const std::string& key,
                                      const std::vector<int>& fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::vector<int> out;
  for (const auto& tok : split_list(it->second)) out.push_back(to_int(key, tok));
  if (out.empty()) throw ConfigError("config key '" + key + "' is an empty list");
  return out;
}

std::vector<std::string> Config::get_string_list(
    const std::string& key, const std::vector<std::string>& fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  auto out = split_list(it->second);
  if (out.empty()) throw ConfigError("config key '" + key + "' is an empty list");
  return out;
}

std::uint64_t Config::fingerprint() const {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& [k, v] : kv_) {
    mix(k);
    mix("=");
    mix(v);
    mix("\n");
  }
  return h;
}

}  // namespace ppmu
