#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

// Minimal TOML subset for experiment configs: comments, [section] headers,
// and `key = value` lines where a value is a basic string, a boolean, an
// integer, a float, or a single-line array of those. Keys inside a section
// are exposed as "section.key".
namespace seqdg::toml {

struct Value {
  enum class Kind { String, Bool, Integer, Float, Array };

  Kind kind = Kind::Integer;
  std::string str;
  bool boolean = false;
  std::int64_t integer = 0;
  double number = 0.0;  // set for both Integer and Float
  std::vector<Value> array;

  // Typed accessors; a kind mismatch throws std::invalid_argument.
  const std::string& as_string() const;
  bool as_bool() const;
  std::int64_t as_int() const;
  double as_double() const;  // accepts Integer or Float
  const std::vector<Value>& as_array() const;

  static const char* kind_name(Kind k);
};

using Table = std::map<std::string, Value>;

Table parse(std::string_view text);
Table parse_file(const std::filesystem::path& path);

}  // namespace seqdg::toml
