#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace mdsaf {

/// Flat `key = value` settings. Lines starting with '#' are comments, values
/// may be quoted, and `[section]` headers are rejected. Every key that is
/// present must be read before check_consumed(), so typos fail loudly.
class Config {
 public:
  Config() = default;
  static Config parse(std::string_view text, const std::string& origin = "<string>");
  static Config load(const std::filesystem::path& path);

  /// Applies one `key=value` override.
  void set(std::string_view assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated list of numbers; "inf" is accepted.
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;
  std::vector<std::string> get_strings(const std::string& key, std::vector<std::string> fallback) const;

  /// Treats every key starting with `prefix` as read.
  void ignore_prefix(const std::string& prefix) const;
  /// Throws ConfigError naming every key that was never read.
  void check_consumed() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
  std::string origin_ = "<string>";
};

}  // namespace mdsaf
