#pragma once

// Low-level helpers for the JSON Lines formats: canonical number/string
// rendering and typed, positioned field extraction.

#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "heal/error.hpp"

namespace heal::jsonio {

using nlohmann::json;

/// Shortest decimal that parses back to the same double. Integral values are
/// rendered without a fraction ("2"), negative zero as "-0.0" so its sign
/// survives a JSON reader that maps "-0" to an integer.
inline std::string format_real(double x) {
  if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteValue, "cannot serialize NaN/Inf");
  if (x == 0.0) return std::signbit(x) ? "-0.0" : "0";
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  if (ec != std::errc{}) throw Error(ErrorCode::IoError, "number formatting failed");
  return std::string(buf.data(), end);
}

inline std::string quote(std::string_view s) {
  try {
    return json(std::string(s)).dump();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("string is not valid UTF-8: ") + e.what());
  }
}

inline std::string real_array(const std::vector<double>& xs) {
  std::string out = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += format_real(xs[i]);
  }
  out += ']';
  return out;
}

inline std::string real_object(const std::map<std::string, double>& m) {
  std::string out = "{";
  bool first = true;
  for (const auto& [k, v] : m) {
    if (!first) out += ',';
    first = false;
    out += quote(k);
    out += ':';
    out += format_real(v);
  }
  out += '}';
  return out;
}

inline std::string string_object(const std::map<std::string, std::string>& m) {
  std::string out = "{";
  bool first = true;
  for (const auto& [k, v] : m) {
    if (!first) out += ',';
    first = false;
    out += quote(k);
    out += ':';
    out += quote(v);
  }
  out += '}';
  return out;
}

/// One parsed JSON Lines record plus its 1-based line number, with typed
/// accessors that raise ParseError naming the line and field.
class Record {
 public:
  Record(json value, std::size_t line) : value_(std::move(value)), line_(line) {
    if (!value_.is_object()) throw ParseError(line_, "<record>", "record is not a JSON object");
  }

  static Record parse(std::string_view text, std::size_t line) {
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception& e) {
      throw ParseError(line, "<json>", e.what());
    }
    return Record(std::move(value), line);
  }

  [[nodiscard]] std::size_t line() const noexcept { return line_; }
  [[nodiscard]] bool has(const char* key) const { return value_.contains(key); }
  [[nodiscard]] const json& raw() const noexcept { return value_; }

  [[nodiscard]] std::string string(const char* key, bool nonempty = false) const {
    const auto it = value_.find(key);
    if (it == value_.end()) throw ParseError(line_, key, "missing");
    if (!it->is_string()) throw ParseError(line_, key, "expected a string");
    auto s = it->get<std::string>();
    if (nonempty && s.empty()) throw ParseError(line_, key, "must be nonempty");
    return s;
  }

  [[nodiscard]] std::optional<std::string> optional_string(const char* key) const {
    if (!has(key)) return std::nullopt;
    return string(key);
  }

  [[nodiscard]] std::optional<std::size_t> optional_count(const char* key) const {
    const auto it = value_.find(key);
    if (it == value_.end()) return std::nullopt;
    // The parser stores every non-negative integer literal as unsigned.
    if (!it->is_number_unsigned()) throw ParseError(line_, key, "expected a non-negative integer");
    return it->get<std::size_t>();
  }

  [[nodiscard]] std::optional<std::vector<double>> optional_real_array(const char* key) const {
    const auto it = value_.find(key);
    if (it == value_.end()) return std::nullopt;
    if (!it->is_array()) throw ParseError(line_, key, "expected an array of numbers");
    std::vector<double> out;
    out.reserve(it->size());
    for (const auto& v : *it) out.push_back(real(v, key));
    return out;
  }

  [[nodiscard]] std::optional<std::map<std::string, double>> optional_real_object(
      const char* key) const {
    const auto it = value_.find(key);
    if (it == value_.end()) return std::nullopt;
    if (!it->is_object()) throw ParseError(line_, key, "expected an object of numbers");
    std::map<std::string, double> out;
    for (const auto& [k, v] : it->items()) {
      if (k.empty()) throw ParseError(line_, key, "empty dimension name");
      out.emplace(k, real(v, key));
    }
    return out;
  }

  [[nodiscard]] std::map<std::string, std::string> string_object(const char* key) const {
    const auto it = value_.find(key);
    if (it == value_.end()) return {};
    if (!it->is_object()) throw ParseError(line_, key, "expected an object of strings");
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) throw ParseError(line_, key, "value of '" + k + "' is not a string");
      out.emplace(k, v.get<std::string>());
    }
    return out;
  }

  /// Rejects keys outside the allowed set.
  void expect_keys(std::initializer_list<std::string_view> allowed) const {
    for (const auto& [k, v] : value_.items()) {
      bool known = false;
      for (auto a : allowed) known = known || a == k;
      if (!known) throw ParseError(line_, k, "unknown field");
    }
  }

 private:
  [[nodiscard]] double real(const json& v, const char* key) const {
    if (!v.is_number()) throw ParseError(line_, key, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ParseError(line_, key, "NaN/Inf are not allowed");
    return x;
  }

  json value_;
  std::size_t line_;
};

/// Calls fn(Record) for every non-blank line of a JSON Lines stream.
template <typename Fn>
void for_each_record(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    fn(Record::parse(line, lineno));
  }
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for reading");
  return in;
}

inline std::string read_file(const std::string& path) {
  auto in = open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "write to '" + path + "' failed");
}

}  // namespace heal::jsonio
