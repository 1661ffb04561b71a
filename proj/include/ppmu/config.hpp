#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ppmu {

// Flat "key = value" configuration with dotted keys. '#' starts a comment.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  // Applies a "key=value" override, as given on the command line.
  void set_kv(const std::string& assignment);

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;  // required
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;
  std::vector<int> get_int_list(const std::string& key,
                                const std::vector<int>& fallback) const;
  std::vector<std::string> get_string_list(const std::string& key,
                                           const std::vector<std::string>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }
  std::uint64_t fingerprint() const;

 private:
  std::string require(const std::string& key) const;
  std::map<std::string, std::string> kv_;
};

std::vector<std::string> split_list(const std::string& text, char sep = ',');

}  // namespace ppmu
