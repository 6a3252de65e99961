#include "fgn/config.hpp"

#include <fstream>
#include <sstream>

namespace fgn {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_string(buffer.str(), path);
}

KeyValueConfig KeyValueConfig::parse_string(const std::string& text,
                                            const std::string& origin) {
  KeyValueConfig config;
  config.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw Error("config " + origin + ": line " + std::to_string(line_no) +
                  " is not 'key = value'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw Error("config " + origin + ": empty key at line " +
                  std::to_string(line_no));
    }
    config.values_[key] = value;
  }
  return config;
}

bool KeyValueConfig::has(const std::string& key) const {
  return values_.count(key) > 0;
}

const std::string& KeyValueConfig::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error("config: missing key '" + key + "'");
  return it->second;
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  return has(key) ? raw(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  try {
    std::size_t used = 0;
    const double parsed = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return parsed;
  } catch (const std::exception&) {
    throw Error("config: key '" + key + "' has non-numeric value '" + v + "'");
  }
}

long KeyValueConfig::get_long(const std::string& key, long fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  try {
    std::size_t used = 0;
    const long parsed = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return parsed;
  } catch (const std::exception&) {
    throw Error("config: key '" + key + "' has non-integer value '" + v + "'");
  }
}

std::vector<std::string> KeyValueConfig::get_string_list(const std::string& key) const {
  std::vector<std::string> out;
  if (!has(key)) return out;
  std::istringstream in(raw(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::vector<double> KeyValueConfig::get_list(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& item : get_string_list(key)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error("config: key '" + key + "' has non-numeric list item '" + item + "'");
    }
  }
  return out;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

std::vector<std::string> KeyValueConfig::keys() const {
  std::vector<std::string> out;
  out.reserve(values_.size());
  for (const auto& [k, v] : values_) out.push_back(k);
  return out;
}

}  // namespace fgn
