#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace calphys {

/// Flat `key = value` text config. '#' starts a comment; blank lines are
/// ignored. Keys are looked up by name and unread keys can be reported so
/// typos do not go unnoticed.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::filesystem::path& path);

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated numbers.
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

  std::vector<std::string> unused_keys() const;

 private:
  std::optional<std::string> lookup(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace calphys
