#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fgn/types.hpp"

namespace fgn {

/// Flat `section.key = value` text configuration. Lines starting with '#'
/// (and blank lines) are ignored; later assignments override earlier ones.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::string& path);
  static KeyValueConfig parse_string(const std::string& text,
                                     const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long get_long(const std::string& key, long fallback) const;
  std::vector<double> get_list(const std::string& key) const;
  std::vector<std::string> get_string_list(const std::string& key) const;

  void set(const std::string& key, const std::string& value);
  std::vector<std::string> keys() const;

 private:
  std::map<std::string, std::string> values_;
  std::string origin_;
  const std::string& raw(const std::string& key) const;
};

}  // namespace fgn
