#pragma once

// Minimal reader for the TOML subset used by run configs:
//
//   # comment
//   [section]            or   [section.sub]
//   key = 1.5            numbers (integers are stored as doubles)
//   key = "text"         double-quoted strings, \" and \\ escapes
//   key = true           booleans
//   key = [1, 2, "a"]    flat arrays on one line
//
// Keys are addressed as "section.key"; keys before the first header live in
// the root section "".

#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "gsot/types.hpp"

namespace gsot {

struct ConfigValue;
using ConfigArray = std::vector<ConfigValue>;

struct ConfigValue {
  std::variant<double, bool, std::string, ConfigArray> value;
};

class Config {
 public:
  static Config parse(const std::string& text, const std::string& origin = "<config>") {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      Cursor c{line, 0, origin, lineno};
      c.skip_ws();
      if (c.done() || c.peek() == '#') continue;
      if (c.peek() == '[') {
        ++c.pos;
        const auto close = line.find(']', c.pos);
        if (close == std::string::npos) c.fail("unterminated section header");
        section = trim(line.substr(c.pos, close - c.pos));
        if (section.empty()) c.fail("empty section name");
        c.pos = close + 1;
        c.expect_end();
        cfg.sections_.push_back(section);
        continue;
      }
      std::string key;
      while (!c.done() && (std::isalnum(static_cast<unsigned char>(c.peek())) || c.peek() == '_' ||
                           c.peek() == '-'))
        key += line[c.pos++];
      if (key.empty()) c.fail("expected a key");
      c.skip_ws();
      if (c.done() || c.peek() != '=') c.fail("expected '=' after key '" + key + "'");
      ++c.pos;
      c.skip_ws();
      ConfigValue v = c.parse_value();
      c.expect_end();
      const std::string full = section.empty() ? key : section + "." + key;
      if (cfg.values_.count(full)) c.fail("duplicate key '" + full + "'");
      cfg.values_[full] = std::move(v);
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  /// Section names in file order (duplicates kept).
  const std::vector<std::string>& sections() const { return sections_; }

  double number(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }
  double number(const std::string& key) const { return as<double>(key, "a number"); }

  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const double d = number(key);
    if (d < 0 || d != static_cast<double>(static_cast<std::uint64_t>(d)))
      throw InvalidInput("config key '" + key + "' must be a non-negative integer");
    return static_cast<std::uint64_t>(d);
  }

  bool boolean(const std::string& key, bool fallback) const {
    return has(key) ? as<bool>(key, "a boolean") : fallback;
  }

  std::string string(const std::string& key, const std::string& fallback) const {
    return has(key) ? as<std::string>(key, "a string") : fallback;
  }

  std::vector<double> numbers(const std::string& key) const {
    std::vector<double> out;
    for (const auto& v : as<ConfigArray>(key, "an array")) {
      if (!std::holds_alternative<double>(v.value))
        throw InvalidInput("config key '" + key + "' must be an array of numbers");
      out.push_back(std::get<double>(v.value));
    }
    return out;
  }

  std::vector<std::string> strings(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& v : as<ConfigArray>(key, "an array")) {
      if (!std::holds_alternative<std::string>(v.value))
        throw InvalidInput("config key '" + key + "' must be an array of strings");
      out.push_back(std::get<std::string>(v.value));
    }
    return out;
  }

 private:
  struct Cursor {
    const std::string& s;
    std::size_t pos;
    const std::string& origin;
    int lineno;

    bool done() const { return pos >= s.size(); }
    char peek() const { return s[pos]; }
    void skip_ws() {
      while (!done() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\r')) ++pos;
    }
    [[noreturn]] void fail(const std::string& msg) const {
      throw InvalidInput(origin + ":" + std::to_string(lineno) + ": " + msg);
    }
    void expect_end() {
      skip_ws();
      if (!done() && peek() != '#') fail("unexpected trailing characters");
    }

    ConfigValue parse_value() {
      if (done()) fail("missing value");
      const char ch = peek();
      if (ch == '"') return ConfigValue{parse_string()};
      if (ch == '[') {
        ++pos;
        ConfigArray arr;
        skip_ws();
        if (!done() && peek() == ']') {
          ++pos;
          return ConfigValue{arr};
        }
        while (true) {
          skip_ws();
          arr.push_back(parse_value());
          skip_ws();
          if (done()) fail("unterminated array");
          if (peek() == ',') {
            ++pos;
            skip_ws();
            if (!done() && peek() == ']') {
              ++pos;
              break;
            }
            continue;
          }
          if (peek() == ']') {
            ++pos;
            break;
          }
          fail("expected ',' or ']' in array");
        }
        return ConfigValue{arr};
      }
      if (s.compare(pos, 4, "true") == 0) {
        pos += 4;
        return ConfigValue{true};
      }
      if (s.compare(pos, 5, "false") == 0) {
        pos += 5;
        return ConfigValue{false};
      }
      std::size_t end = pos;
      while (end < s.size() && (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '.' ||
                                s[end] == '-' || s[end] == '+' || s[end] == 'e' || s[end] == 'E' ||
                                s[end] == '_'))
        ++end;
      std::string tok = s.substr(pos, end - pos);
      std::erase(tok, '_');
      double d = 0.0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), d);
      if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size())
        fail("cannot parse value '" + s.substr(pos) + "'");
      pos = end;
      return ConfigValue{d};
    }

    std::string parse_string() {
      ++pos;  // opening quote
      std::string out;
      while (!done() && peek() != '"') {
        if (peek() == '\\') {
          ++pos;
          if (done()) break;
          const char e = peek();
          out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
        } else {
          out += peek();
        }
        ++pos;
      }
      if (done()) fail("unterminated string");
      ++pos;
      return out;
    }
  };

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
  }

  template <class T>
  const T& as(const std::string& key, const char* what) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw InvalidInput("missing config key '" + key + "'");
    if (!std::holds_alternative<T>(it->second.value))
      throw InvalidInput("config key '" + key + "' must be " + what);
    return std::get<T>(it->second.value);
  }

  std::map<std::string, ConfigValue> values_;
  std::vector<std::string> sections_;
};

}  // namespace gsot
