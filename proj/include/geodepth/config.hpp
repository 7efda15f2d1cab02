#ifndef GEODEPTH_CONFIG_HPP
#define GEODEPTH_CONFIG_HPP

#include <charconv>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "geodepth/errors.hpp"
#include "geodepth/geotag.hpp"

namespace geodepth {

/// Flat `key = value` settings. `#` starts a comment; later assignments win.
class Config {
 public:
  Config() = default;

  static Config parse(std::string_view text) {
    Config cfg;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t nl = text.find('\n', pos);
      std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError("expected `key = value`", line_no);
      const std::string key(detail::trim(line.substr(0, eq)));
      const std::string value(detail::trim(line.substr(eq + 1)));
      if (key.empty()) throw ParseError("empty key", line_no);
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static Config load(const std::string& path) { return parse(detail::read_text_file(path)); }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  /// Applies a `key=value` override.
  void apply_override(std::string_view kv) {
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) throw ValidationError("override must be key=value: " + std::string(kv));
    set(std::string(detail::trim(kv.substr(0, eq))), std::string(detail::trim(kv.substr(eq + 1))));
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    double v = 0;
    if (!detail::parse_double(it->second, v)) throw ValidationError("config key " + key + ": not a number: " + it->second);
    return v;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_int(key, it->second);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw ValidationError("config key " + key + ": not a boolean: " + v);
  }

  /// Comma-separated integers, e.g. `16,32,64`.
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    for (auto field : detail::split_csv(it->second)) out.push_back(static_cast<int>(parse_int(key, field)));
    return out;
  }

  /// Rejects keys outside `known`.
  void require_known(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_) {
      if (!known.count(k)) throw ValidationError("unknown config key: " + k);
    }
  }

  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  static std::int64_t parse_int(const std::string& key, std::string_view s) {
    s = detail::trim(s);
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ValidationError("config key " + key + ": not an integer: " + std::string(s));
    }
    return v;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace geodepth

#endif  // GEODEPTH_CONFIG_HPP
