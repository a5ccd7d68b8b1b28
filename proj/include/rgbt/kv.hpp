// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Flat `key = value` text used by config files, dataset.meta and checkpoint
// headers. Blank lines and lines starting with '#' are ignored.

#ifndef RGBT_KV_HPP_
#define RGBT_KV_HPP_

#include <charconv>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rgbt/error.hpp"

namespace rgbt::kv {

using Map = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

inline Map parse(const std::string& text, const std::string& origin = "config") {
  Map m;
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected 'key = value'");
    m[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return m;
}

inline std::string dump(const Map& m) {
  std::string out;
  for (const auto& [k, v] : m) out += k + " = " + v + "\n";
  return out;
}

inline const std::string& get(const Map& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw ConfigError("missing key '" + key + "'");
  return it->second;
}

inline int parse_int(const std::string& s) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("not an integer: '" + s + "'");
  return v;
}

inline double parse_double(const std::string& s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("not a number: '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw ConfigError("not a boolean: '" + s + "'");
}

inline int get_int(const Map& m, const std::string& key) { return parse_int(get(m, key)); }
inline double get_double(const Map& m, const std::string& key) { return parse_double(get(m, key)); }

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string format_bool(bool b) { return b ? "true" : "false"; }

template <typename Seq>
std::string join(const Seq& xs) {
  std::ostringstream os;
  bool first = true;
  for (const auto& x : xs) {
    os << (first ? "" : ",") << x;
    first = false;
  }
  return os.str();
}

inline std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split(s, ',')) out.push_back(parse_int(item));
  return out;
}

inline std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split(s, ',')) out.push_back(parse_double(item));
  return out;
}

}  // namespace rgbt::kv

#endif  // RGBT_KV_HPP_
