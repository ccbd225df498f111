#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace kpt {

/// Flat "key = value" text configuration. '#' starts a comment.
class KvConfig {
 public:
  KvConfig() = default;
  static KvConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KvConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  /// Throws InputError naming the first key not in `known`.
  void require_known(const std::set<std::string>& known) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  /// FNV-1a 64 of the sorted "key=value" lines, hex encoded.
  std::string hash() const;

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
};

}  // namespace kpt
