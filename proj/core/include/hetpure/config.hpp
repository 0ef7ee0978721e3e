#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace hetpure {

/// Flat key-value configuration: one `section.key = value` per line,
/// '#' comments, later keys override earlier ones.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string get(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;

  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Comma-separated list of doubles.
  std::vector<double> get_doubles(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace hetpure
