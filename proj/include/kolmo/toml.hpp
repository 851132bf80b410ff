// Minimal TOML reader covering the subset the bundled configs use: tables,
// bare keys, strings, integers, floats, booleans, and (possibly nested,
// possibly multi-line) arrays.  Errors carry 1-based line/column positions.
#ifndef KOLMO_TOML_HPP
#define KOLMO_TOML_HPP

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace kolmo::toml {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, int line, int column)
      : std::runtime_error("TOML parse error at line " + std::to_string(line) + ", column " +
                           std::to_string(column) + ": " + msg),
        line_(line),
        column_(column) {}
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

struct Value;
using Array = std::vector<Value>;
using Table = std::map<std::string, Value>;

struct Value {
  std::variant<std::string, std::int64_t, double, bool, Array, Table> v;

  bool is_string() const { return std::holds_alternative<std::string>(v); }
  bool is_integer() const { return std::holds_alternative<std::int64_t>(v); }
  bool is_float() const { return std::holds_alternative<double>(v); }
  bool is_number() const { return is_integer() || is_float(); }
  bool is_bool() const { return std::holds_alternative<bool>(v); }
  bool is_array() const { return std::holds_alternative<Array>(v); }
  bool is_table() const { return std::holds_alternative<Table>(v); }

  const std::string& as_string() const { return std::get<std::string>(v); }
  std::int64_t as_integer() const { return std::get<std::int64_t>(v); }
  double as_number() const {
    return is_integer() ? static_cast<double>(std::get<std::int64_t>(v)) : std::get<double>(v);
  }
  bool as_bool() const { return std::get<bool>(v); }
  const Array& as_array() const { return std::get<Array>(v); }
  const Table& as_table() const { return std::get<Table>(v); }

  const char* type_name() const {
    switch (v.index()) {
      case 0: return "string";
      case 1: return "integer";
      case 2: return "float";
      case 3: return "boolean";
      case 4: return "array";
      default: return "table";
    }
  }
};

namespace detail {

class Parser {
 public:
  explicit Parser(std::string text) : text_(std::move(text)) {}

  Table parse() {
    Table root;
    Table* current = &root;
    skip_trivia(true);
    while (!at_end()) {
      if (peek() == '[') {
        current = parse_table_header(root);
      } else {
        parse_key_value(*current);
      }
      // Each statement must be followed by a line break (or the end).
      skip_spaces_and_comment();
      if (!at_end() && peek() != '\n') fail("expected end of line");
      skip_trivia(true);
    }
    return root;
  }

 private:
  std::string text_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
  std::set<std::string> defined_tables_;

  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }

  char advance() {
    char c = text_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, line_, col_); }

  void skip_spaces_and_comment() {
    while (!at_end() && (peek() == ' ' || peek() == '\t' || peek() == '\r')) advance();
    if (!at_end() && peek() == '#')
      while (!at_end() && peek() != '\n') advance();
  }

  // Whitespace and comments; newlines too when `newlines` is set.
  void skip_trivia(bool newlines) {
    for (;;) {
      skip_spaces_and_comment();
      if (newlines && !at_end() && peek() == '\n') {
        advance();
        continue;
      }
      return;
    }
  }

  static bool is_bare(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '-';
  }

  std::string parse_bare_key() {
    if (at_end() || !is_bare(peek())) fail("expected a key");
    std::string key;
    while (!at_end() && is_bare(peek())) key.push_back(advance());
    return key;
  }

  Table* parse_table_header(Table& root) {
    advance();  // consume '['
    std::vector<std::string> path;
    std::string dotted;
    for (;;) {
      skip_spaces_and_comment();
      path.push_back(parse_bare_key());
      dotted += (dotted.empty() ? "" : ".") + path.back();
      skip_spaces_and_comment();
      if (at_end()) fail("unterminated table header");
      if (peek() == '.') {
        advance();
        continue;
      }
      if (peek() == ']') {
        advance();
        break;
      }
      fail("expected '.' or ']' in table header");
    }
    if (!defined_tables_.insert(dotted).second) fail("table '" + dotted + "' defined twice");
    Table* t = &root;
    for (const std::string& k : path) {
      auto it = t->find(k);
      if (it == t->end()) it = t->emplace(k, Value{Table{}}).first;
      if (!it->second.is_table()) fail("key '" + dotted + "' already holds a value");
      t = &std::get<Table>(it->second.v);
    }
    return t;
  }

  void parse_key_value(Table& t) {
    const int kline = line_, kcol = col_;
    std::string key = parse_bare_key();
    skip_spaces_and_comment();
    if (at_end() || peek() != '=') fail("expected '=' after key '" + key + "'");
    advance();
    skip_spaces_and_comment();
    Value v = parse_value();
    if (!t.try_emplace(std::move(key), std::move(v)).second)
      throw ParseError("duplicate key '" + key + "'", kline, kcol);
  }

  Value parse_value() {
    if (at_end()) fail("expected a value");
    char c = peek();
    if (c == '"') return parse_string();
    if (c == '[') return parse_array();
    if (c == 't' || c == 'f') return parse_boolean();
    if (c == '+' || c == '-' || (c >= '0' && c <= '9')) return parse_number();
    fail("expected a value");
  }

  Value parse_string() {
    advance();  // opening quote
    std::string s;
    for (;;) {
      if (at_end() || peek() == '\n') fail("unterminated string");
      char c = advance();
      if (c == '"') break;
      if (c == '\\') {
        if (at_end()) fail("unterminated escape");
        char e = advance();
        switch (e) {
          case '"': s.push_back('"'); break;
          case '\\': s.push_back('\\'); break;
          case 'n': s.push_back('\n'); break;
          case 't': s.push_back('\t'); break;
          case 'r': s.push_back('\r'); break;
          default: fail(std::string("unsupported escape '\\") + e + "'");
        }
      } else {
        s.push_back(c);
      }
    }
    return Value{s};
  }

  Value parse_boolean() {
    if (text_.compare(pos_, 4, "true") == 0 && boundary(pos_ + 4)) {
      for (int i = 0; i < 4; ++i) advance();
      return Value{true};
    }
    if (text_.compare(pos_, 5, "false") == 0 && boundary(pos_ + 5)) {
      for (int i = 0; i < 5; ++i) advance();
      return Value{false};
    }
    fail("expected a value");
  }

  bool boundary(std::size_t p) const { return p >= text_.size() || !is_bare(text_[p]); }

  Value parse_number() {
    std::string num;
    bool is_float = false;
    if (peek() == '+' || peek() == '-') num.push_back(advance());
    auto digits = [&] {
      if (at_end() || peek() < '0' || peek() > '9') fail("malformed number");
      while (!at_end() && ((peek() >= '0' && peek() <= '9') || peek() == '_')) {
        char d = advance();
        if (d != '_') num.push_back(d);
      }
    };
    digits();
    if (!at_end() && peek() == '.') {
      is_float = true;
      num.push_back(advance());
      digits();
    }
    if (!at_end() && (peek() == 'e' || peek() == 'E')) {
      is_float = true;
      num.push_back(advance());
      if (!at_end() && (peek() == '+' || peek() == '-')) num.push_back(advance());
      digits();
    }
    if (is_float) return Value{std::stod(num)};
    try {
      return Value{static_cast<std::int64_t>(std::stoll(num))};
    } catch (const std::out_of_range&) {
      fail("integer out of range");
    }
  }

  Value parse_array() {
    advance();  // consume '['
    Array arr;
    for (;;) {
      skip_trivia(true);
      if (at_end()) fail("unterminated array");
      if (peek() == ']') {
        advance();
        return Value{std::move(arr)};
      }
      arr.push_back(parse_value());
      skip_trivia(true);
      if (at_end()) fail("unterminated array");
      if (peek() == ',') {
        advance();
        continue;
      }
      if (peek() == ']') {
        advance();
        return Value{std::move(arr)};
      }
      fail("expected ',' or ']' in array");
    }
  }
};

}  // namespace detail

inline Table parse(const std::string& text) { return detail::Parser(text).parse(); }

inline Table parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace kolmo::toml

#endif  // KOLMO_TOML_HPP
