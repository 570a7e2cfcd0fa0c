#pragma once

// Flat key=value configuration. Blank lines and '#' comments are ignored;
// later assignments override earlier ones.

#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace rwss {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& source = "<string>");
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback) const;
  double get(const std::string& key, double fallback) const;
  long get(const std::string& key, long fallback) const;
  std::size_t get(const std::string& key, std::size_t fallback) const;
  bool get(const std::string& key, bool fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

  // Keys never read through get(); used to reject typos.
  std::vector<std::string> unused() const;
  void merge(const KeyValues& other);

  // Sorted "key=value" lines.
  std::string dump() const;
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  const std::string* lookup(const std::string& key) const;

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> read_;
};

// Shortest decimal that round-trips the double.
std::string format_double(double v);

}  // namespace rwss
