// Canonical key=value text: one pair per line, '#' starts a comment.
#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "conflictnet/error.hpp"

namespace conflictnet {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline KeyValues parse_key_values(std::string_view text) {
  KeyValues out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no), "expected key=value, got '" + std::string(line) + "'");
    std::string key(trim(line.substr(0, eq)));
    std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no), "empty key");
    for (const auto& kv : out)
      if (kv.first == key) throw ConfigError(key, "duplicate key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline std::string format_key_values(const KeyValues& kvs) {
  std::string out;
  for (const auto& [k, v] : kvs) out += k + "=" + v + "\n";
  return out;
}

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Fixed-point with six decimals, the CSV convention.
inline std::string fixed6(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, 6);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& field, std::string_view text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw ConfigError(field, "expected a number, got '" + std::string(text) + "'");
  return v;
}

inline std::uint64_t parse_uint(const std::string& field, std::string_view text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc{} || res.ptr != end)
    throw ConfigError(field, "expected a non-negative integer, got '" + std::string(text) + "'");
  return v;
}

inline bool parse_bool(const std::string& field, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(field, "expected true/false, got '" + std::string(text) + "'");
}

inline std::vector<std::string_view> split_list(std::string_view text, char sep = ',') {
  std::vector<std::string_view> out;
  if (trim(text).empty()) return out;
  while (true) {
    const auto pos = text.find(sep);
    out.push_back(trim(text.substr(0, pos)));
    if (pos == std::string_view::npos) break;
    text = text.substr(pos + 1);
  }
  return out;
}

}  // namespace conflictnet
