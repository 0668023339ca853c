#include "seqdg/toml.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace seqdg::toml {
namespace {

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw std::invalid_argument("toml: line " + std::to_string(line) + ": " + msg);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Cuts a trailing comment, honouring '#' characters inside quoted strings.
std::string_view strip_comment(std::string_view s) {
  bool in_string = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') ++i;  // skip the escaped character
      else if (c == '"') in_string = false;
    } else if (c == '"') {
      in_string = true;
    } else if (c == '#') {
      return s.substr(0, i);
    }
  }
  return s;
}

bool is_bare_key_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
}

// Recursive-descent value parser over the remainder of one line.
struct ValueParser {
  std::string_view text;
  std::size_t pos = 0;
  std::size_t line;

  void skip_ws() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  bool done() {
    skip_ws();
    return pos >= text.size();
  }

  Value parse_value() {
    skip_ws();
    if (pos >= text.size()) fail(line, "missing value");
    const char c = text[pos];
    if (c == '"') return parse_string();
    if (c == '[') return parse_array();
    return parse_scalar();
  }

  Value parse_string() {
    ++pos;  // opening quote
    std::string out;
    while (pos < text.size() && text[pos] != '"') {
      char c = text[pos++];
      if (c == '\\') {
        if (pos >= text.size()) fail(line, "dangling escape in string");
        const char e = text[pos++];
        switch (e) {
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case 'r': c = '\r'; break;
          default: fail(line, std::string("unsupported escape \\") + e);
        }
      }
      out.push_back(c);
    }
    if (pos >= text.size()) fail(line, "unterminated string");
    ++pos;  // closing quote
    Value v;
    v.kind = Value::Kind::String;
    v.str = std::move(out);
    return v;
  }

  Value parse_array() {
    ++pos;  // '['
    Value v;
    v.kind = Value::Kind::Array;
    skip_ws();
    while (pos < text.size() && text[pos] != ']') {
      v.array.push_back(parse_value());
      skip_ws();
      if (pos < text.size() && text[pos] == ',') {
        ++pos;
        skip_ws();
      } else if (pos < text.size() && text[pos] != ']') {
        fail(line, "expected ',' or ']' in array");
      }
    }
    if (pos >= text.size()) fail(line, "unterminated array");
    ++pos;  // ']'
    return v;
  }

  Value parse_scalar() {
    std::size_t end = pos;
    while (end < text.size() && text[end] != ',' && text[end] != ']' &&
           !std::isspace(static_cast<unsigned char>(text[end])))
      ++end;
    const std::string_view tok = text.substr(pos, end - pos);
    pos = end;
    Value v;
    if (tok == "true" || tok == "false") {
      v.kind = Value::Kind::Bool;
      v.boolean = (tok == "true");
      return v;
    }
    const bool looks_float = tok.find_first_of(".eE") != std::string_view::npos &&
                             tok.find_first_of("0123456789") != std::string_view::npos;
    if (!looks_float) {
      std::int64_t i = 0;
      const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), i);
      if (ec == std::errc() && p == tok.data() + tok.size()) {
        v.kind = Value::Kind::Integer;
        v.integer = i;
        v.number = static_cast<double>(i);
        return v;
      }
    }
    double d = 0.0;
    const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), d);
    if (ec != std::errc() || p != tok.data() + tok.size())
      fail(line, "cannot parse value '" + std::string(tok) + "'");
    v.kind = Value::Kind::Float;
    v.number = d;
    return v;
  }
};

}  // namespace

const char* Value::kind_name(Kind k) {
  switch (k) {
    case Kind::String: return "string";
    case Kind::Bool: return "bool";
    case Kind::Integer: return "integer";
    case Kind::Float: return "float";
    case Kind::Array: return "array";
  }
  return "?";
}

namespace {
[[noreturn]] void wrong_kind(Value::Kind want, Value::Kind got) {
  throw std::invalid_argument(std::string("toml value: expected ") + Value::kind_name(want) +
                              ", got " + Value::kind_name(got));
}
}  // namespace

const std::string& Value::as_string() const {
  if (kind != Kind::String) wrong_kind(Kind::String, kind);
  return str;
}

bool Value::as_bool() const {
  if (kind != Kind::Bool) wrong_kind(Kind::Bool, kind);
  return boolean;
}

std::int64_t Value::as_int() const {
  if (kind != Kind::Integer) wrong_kind(Kind::Integer, kind);
  return integer;
}

double Value::as_double() const {
  if (kind != Kind::Integer && kind != Kind::Float) wrong_kind(Kind::Float, kind);
  return number;
}

const std::vector<Value>& Value::as_array() const {
  if (kind != Kind::Array) wrong_kind(Kind::Array, kind);
  return array;
}

Table parse(std::string_view text) {
  Table table;
  std::string section;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    ++line_no;
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = trim(strip_comment(text.substr(start, nl - start)));
    start = nl + 1;
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      const std::string_view name = trim(line.substr(1, line.size() - 2));
      if (name.empty()) fail(line_no, "empty section name");
      for (char c : name)
        if (!is_bare_key_char(c)) fail(line_no, "invalid section name");
      section = std::string(name);
      continue;
    }

    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) fail(line_no, "expected 'key = value'");
    const std::string_view key = trim(line.substr(0, eq));
    if (key.empty()) fail(line_no, "empty key");
    for (char c : key)
      if (!is_bare_key_char(c)) fail(line_no, "invalid key '" + std::string(key) + "'");

    ValueParser vp{line.substr(eq + 1), 0, line_no};
    Value v = vp.parse_value();
    if (!vp.done()) fail(line_no, "trailing characters after value");

    std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    if (table.contains(full)) fail(line_no, "duplicate key '" + full + "'");
    table.emplace(std::move(full), std::move(v));
  }
  return table;
}

Table parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace seqdg::toml
