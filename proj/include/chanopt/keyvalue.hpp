#pragma once

// Flat `key = value` text format shared by scene and experiment config files.
// UTF-8, `#` starts a comment, blank lines ignored, order-insensitive. A key
// may repeat only where the reader asks for all of its values (e.g. dipole).

#include <chanopt/errors.hpp>

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace chanopt {

struct KeyValueEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_list(std::string_view s, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

inline std::optional<std::uint64_t> parse_u64(std::string_view s) {
  s = trim(s);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

class KeyValueFile {
 public:
  static KeyValueFile parse(std::string_view text) {
    KeyValueFile kv;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t end = text.find('\n', start);
      std::string_view line = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (!line.empty()) {
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError("expected `key = value`", line_no);
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("empty key", line_no);
        kv.entries_.push_back({std::string(key), std::string(value), line_no});
      }
      if (end == std::string_view::npos) break;
      start = end + 1;
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  const std::vector<KeyValueEntry>& entries() const { return entries_; }

  bool has(std::string_view key) const { return find(key) != nullptr; }

  /// Single-valued lookup; a repeated key is an error.
  const KeyValueEntry* find(std::string_view key) const {
    const KeyValueEntry* hit = nullptr;
    for (const auto& e : entries_) {
      if (e.key != key) continue;
      if (hit) throw ConfigError("duplicate key `" + std::string(key) + "`", e.line);
      hit = &e;
    }
    return hit;
  }

  std::vector<const KeyValueEntry*> all(std::string_view key) const {
    std::vector<const KeyValueEntry*> out;
    for (const auto& e : entries_)
      if (e.key == key) out.push_back(&e);
    return out;
  }

  const KeyValueEntry& require(std::string_view key) const {
    const auto* e = find(key);
    if (!e) throw ConfigError("missing required key `" + std::string(key) + "`");
    return *e;
  }

  double get_double(std::string_view key) const {
    const auto& e = require(key);
    return to_double(e);
  }

  double get_double(std::string_view key, double fallback) const {
    const auto* e = find(key);
    return e ? to_double(*e) : fallback;
  }

  std::uint64_t get_u64(std::string_view key) const { return to_u64(require(key)); }

  std::uint64_t get_u64(std::string_view key, std::uint64_t fallback) const {
    const auto* e = find(key);
    return e ? to_u64(*e) : fallback;
  }

  std::string get_string(std::string_view key, std::string fallback = {}) const {
    const auto* e = find(key);
    return e ? e->value : fallback;
  }

  std::vector<double> get_double_list(std::string_view key, std::vector<double> fallback = {}) const {
    const auto* e = find(key);
    if (!e) return fallback;
    std::vector<double> out;
    for (const auto& item : split_list(e->value)) {
      const auto v = parse_double(item);
      if (!v) throw ConfigError("`" + e->key + "`: not a number: " + item, e->line);
      out.push_back(*v);
    }
    return out;
  }

  static double to_double(const KeyValueEntry& e) {
    const auto v = parse_double(e.value);
    if (!v) throw ConfigError("`" + e.key + "`: expected a number, got `" + e.value + "`", e.line);
    return *v;
  }

  static std::uint64_t to_u64(const KeyValueEntry& e) {
    const auto v = parse_u64(e.value);
    if (!v) throw ConfigError("`" + e.key + "`: expected a non-negative integer, got `" + e.value + "`", e.line);
    return *v;
  }

  /// Rejects keys outside `known`. Keys ending in `*` in `known` match by prefix.
  void check_known(const std::set<std::string, std::less<>>& known) const {
    for (const auto& e : entries_) {
      if (known.contains(e.key)) continue;
      bool ok = false;
      for (const auto& k : known)
        if (!k.empty() && k.back() == '*' && e.key.starts_with(std::string_view(k).substr(0, k.size() - 1))) ok = true;
      if (!ok) throw ConfigError("unknown key `" + e.key + "`", e.line);
    }
  }

 private:
  std::vector<KeyValueEntry> entries_;
};

}  // namespace chanopt
