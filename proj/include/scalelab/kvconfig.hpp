#pragma once

// Flat key=value configuration files: one `key = value` per line, `#` starts
// a comment, blank lines ignored. Keys may repeat (e.g. `bind`, `env`);
// order is preserved.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scalelab/error.hpp"

namespace scalelab {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace detail

class KeyValueConfig {
 public:
  using Entry = std::pair<std::string, std::string>;

  static KeyValueConfig parse(std::string_view text) {
    KeyValueConfig cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      auto nl = text.find('\n', pos);
      if (nl == std::string_view::npos) nl = text.size();
      auto line = text.substr(pos, nl - pos);
      pos = nl + 1;
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string_view::npos) {
        throw Error(ErrorKind::Config, "line " + std::to_string(line_no) + ": expected key=value");
      }
      auto key = detail::trim(line.substr(0, eq));
      auto value = detail::trim(line.substr(eq + 1));
      if (key.empty()) {
        throw Error(ErrorKind::Config, "line " + std::to_string(line_no) + ": empty key");
      }
      cfg.entries_.emplace_back(std::string(key), std::string(value));
    }
    return cfg;
  }

  static KeyValueConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Config, "cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  const std::vector<Entry>& entries() const { return entries_; }

  bool has(std::string_view key) const {
    for (const auto& [k, v] : entries_)
      if (k == key) return true;
    return false;
  }

  // Last occurrence wins for scalar keys.
  const std::string* find(std::string_view key) const {
    const std::string* found = nullptr;
    for (const auto& [k, v] : entries_)
      if (k == key) found = &v;
    return found;
  }

  std::vector<std::string> all(std::string_view key) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_)
      if (k == key) out.push_back(v);
    return out;
  }

  std::string get_string(std::string_view key) const {
    if (auto* v = find(key)) return *v;
    throw Error(ErrorKind::Config, "missing key '" + std::string(key) + "'");
  }

  std::string get_string(std::string_view key, std::string fallback) const {
    if (auto* v = find(key)) return *v;
    return fallback;
  }

  long long get_int(std::string_view key) const { return to_int(key, get_string(key)); }

  long long get_int(std::string_view key, long long fallback) const {
    if (auto* v = find(key)) return to_int(key, *v);
    return fallback;
  }

  double get_double(std::string_view key) const { return to_double(key, get_string(key)); }

  double get_double(std::string_view key, double fallback) const {
    if (auto* v = find(key)) return to_double(key, *v);
    return fallback;
  }

  bool get_bool(std::string_view key, bool fallback) const {
    auto* v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "yes" || *v == "1" || *v == "on") return true;
    if (*v == "false" || *v == "no" || *v == "0" || *v == "off") return false;
    throw Error(ErrorKind::Config, "key '" + std::string(key) + "': not a boolean: '" + *v + "'");
  }

 private:
  static long long to_int(std::string_view key, const std::string& v) {
    long long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw Error(ErrorKind::Config, "key '" + std::string(key) + "': not an integer: '" + v + "'");
    }
    return out;
  }

  static double to_double(std::string_view key, const std::string& v) {
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw Error(ErrorKind::Config, "key '" + std::string(key) + "': not a number: '" + v + "'");
    }
    return out;
  }

  std::vector<Entry> entries_;
};

}  // namespace scalelab
