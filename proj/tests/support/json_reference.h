// SPDX-License-Identifier: Apache-2.0
// Reference JSON validator for the schema subset, built on nlohmann's parser
// plus the subset's own rules. Also a random sampler of valid documents.
// Shares no code with the grammar recognizer.
#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace reference {

using ojson = nlohmann::ordered_json;

struct Value {
  enum Type { null, boolean, integer, number, string, array, object } type = null;
  std::string text;  // string contents
  std::vector<Value> items;
  std::vector<std::pair<std::string, Value>> members;  // in document order, duplicates kept
};

// Builds a Value tree from SAX events so duplicate keys and the lexical form
// of numbers survive.
class TreeBuilder : public nlohmann::json_sax<nlohmann::json> {
 public:
  Value root;

  bool null() override { return put(Value{}); }
  bool boolean(bool) override { return put(make(Value::boolean)); }
  bool number_integer(number_integer_t) override { return put(make(Value::integer)); }
  bool number_unsigned(number_unsigned_t) override { return put(make(Value::integer)); }
  bool number_float(number_float_t, const string_t& lexeme) override {
    // Integers too large for 64 bits arrive here; the lexeme decides.
    const bool fraction = lexeme.find_first_of(".eE") != std::string::npos;
    return put(make(fraction ? Value::number : Value::integer));
  }
  bool string(string_t& s) override {
    Value v = make(Value::string);
    v.text = s;
    return put(std::move(v));
  }
  bool binary(binary_t&) override { return false; }
  bool start_object(std::size_t) override {
    stack_.push_back(make(Value::object));
    return true;
  }
  bool key(string_t& k) override {
    keys_.push_back(k);
    return true;
  }
  bool end_object() override { return finish(); }
  bool start_array(std::size_t) override {
    stack_.push_back(make(Value::array));
    return true;
  }
  bool end_array() override { return finish(); }
  bool parse_error(std::size_t, const std::string&, const nlohmann::detail::exception&) override {
    return false;
  }

 private:
  static Value make(Value::Type t) {
    Value v;
    v.type = t;
    return v;
  }
  bool put(Value v) {
    if (stack_.empty()) {
      root = std::move(v);
    } else if (stack_.back().type == Value::array) {
      stack_.back().items.push_back(std::move(v));
    } else {
      stack_.back().members.emplace_back(keys_.back(), std::move(v));
      keys_.pop_back();
    }
    return true;
  }
  bool finish() {
    Value v = std::move(stack_.back());
    stack_.pop_back();
    return put(std::move(v));
  }

  std::vector<Value> stack_;
  std::vector<std::string> keys_;
};

inline bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

// nlohmann refuses numbers whose value overflows a double ("1E999"), which
// JSON's lexical grammar allows. Exponent digits beyond the first never
// change a value's type or the document's structure, so they are dropped
// before parsing.
inline std::string clamp_exponents(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_string = false, escaped = false;
  for (size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    out += c;
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') {
      in_string = true;
      continue;
    }
    const bool exponent = (c == 'e' || c == 'E') && i > 0 && s[i - 1] >= '0' && s[i - 1] <= '9';
    if (!exponent) continue;
    size_t j = i + 1;
    if (j < s.size() && (s[j] == '+' || s[j] == '-')) out += s[j++];
    if (j < s.size() && s[j] >= '0' && s[j] <= '9') out += s[j++];
    while (j < s.size() && s[j] >= '0' && s[j] <= '9') ++j;
    i = j - 1;
  }
  return out;
}

inline bool matches(const ojson& schema, const Value& v) {
  if (schema.is_null()) return true;  // unconstrained value
  if (schema.contains("enum")) {
    if (v.type != Value::string) return false;
    for (const auto& e : schema["enum"]) {
      if (e.get<std::string>() == v.text) return true;
    }
    return false;
  }
  const auto type = schema["type"].get<std::string>();
  if (type == "null") return v.type == Value::null;
  if (type == "boolean") return v.type == Value::boolean;
  if (type == "integer") return v.type == Value::integer;
  if (type == "number") return v.type == Value::integer || v.type == Value::number;
  if (type == "string") return v.type == Value::string;
  if (type == "array") {
    if (v.type != Value::array) return false;
    const ojson items = schema.contains("items") ? schema["items"] : ojson();
    return std::all_of(v.items.begin(), v.items.end(), [&](const Value& x) { return matches(items, x); });
  }
  if (type == "object") {
    if (v.type != Value::object) return false;
    std::vector<std::string> names;
    if (schema.contains("properties")) {
      for (const auto& [k, _] : schema["properties"].items()) names.push_back(k);
    }
    // Keys appear in schema order, at most once, and only declared ones.
    long last = -1;
    for (const auto& [k, x] : v.members) {
      const auto it = std::find(names.begin(), names.end(), k);
      if (it == names.end()) return false;
      const long idx = it - names.begin();
      if (idx <= last) return false;
      last = idx;
      if (!matches(schema["properties"][k], x)) return false;
    }
    if (schema.contains("required")) {
      for (const auto& r : schema["required"]) {
        const auto name = r.get<std::string>();
        const bool present = std::any_of(v.members.begin(), v.members.end(),
                                         [&](const auto& m) { return m.first == name; });
        if (!present) return false;
      }
    }
    return true;
  }
  return false;
}

// A null schema selects json_object mode: any JSON value with an object root.
// Whitespace may precede the document but not follow it.
inline bool valid(const ojson& schema, std::string_view doc) {
  if (doc.empty() || is_ws(doc.back())) return false;
  TreeBuilder b;
  if (!nlohmann::json::sax_parse(clamp_exponents(doc), &b)) return false;
  if (schema.is_null()) return b.root.type == Value::object;
  return matches(schema, b.root);
}

enum class Prefix { invalid, viable, complete };

// Whether `s` is a complete JSON text, or could still become one.
inline Prefix json_prefix(std::string_view s) {
  struct Probe : nlohmann::json_sax<nlohmann::json> {
    size_t error_at = 0;
    bool null() override { return true; }
    bool boolean(bool) override { return true; }
    bool number_integer(number_integer_t) override { return true; }
    bool number_unsigned(number_unsigned_t) override { return true; }
    bool number_float(number_float_t, const string_t&) override { return true; }
    bool string(string_t&) override { return true; }
    bool binary(binary_t&) override { return true; }
    bool start_object(std::size_t) override { return true; }
    bool key(string_t&) override { return true; }
    bool end_object() override { return true; }
    bool start_array(std::size_t) override { return true; }
    bool end_array() override { return true; }
    bool parse_error(std::size_t pos, const std::string&, const nlohmann::detail::exception&) override {
      error_at = pos;
      return false;
    }
  } probe;
  const auto text = clamp_exponents(s);
  if (nlohmann::json::sax_parse(text, &probe)) return Prefix::complete;
  // The lexer reports errors at the offending byte; one past the end means
  // the input simply ran out.
  return probe.error_at == text.size() + 1 ? Prefix::viable : Prefix::invalid;
}

// Streams SAX events against the schema and stops at the first event that
// no completion could make valid. Events only arrive for finished tokens,
// and a number seen at end of input keeps an acceptable type under every
// extension, so a viable prefix is never cut.
class StreamingCheck : public nlohmann::json_sax<nlohmann::json> {
 public:
  explicit StreamingCheck(const ojson& schema) : root_(schema) {}

  bool rejected = false;
  size_t error_at = 0;

  bool null() override { return scalar("null"); }
  bool boolean(bool) override { return scalar("boolean"); }
  bool number_integer(number_integer_t) override { return scalar("integer"); }
  bool number_unsigned(number_unsigned_t) override { return scalar("integer"); }
  bool number_float(number_float_t, const string_t& lexeme) override {
    return scalar(lexeme.find_first_of(".eE") == std::string::npos ? "integer" : "number");
  }
  bool string(string_t& s) override {
    const ojson* sch = expected();
    if (!sch || object_root_only()) return reject();
    if (!sch->is_null()) {
      if (sch->contains("enum")) {
        bool hit = false;
        for (const auto& e : (*sch)["enum"]) hit = hit || e.get<std::string>() == s;
        if (!hit) return reject();
      } else if ((*sch)["type"] != "string") {
        return reject();
      }
    }
    return consumed();
  }
  bool binary(binary_t&) override { return reject(); }
  bool start_object(std::size_t) override {
    const ojson* sch = expected();
    if (!sch) return reject();
    if (!sch->is_null() && (sch->contains("enum") || (*sch)["type"] != "object")) return reject();
    frames_.push_back({sch, true, -1, nullptr});
    return true;
  }
  bool key(string_t& k) override {
    Frame& f = frames_.back();
    if (f.schema->is_null()) {
      f.pending = &any_;
      return true;
    }
    if (!f.schema->contains("properties")) return reject();
    long idx = 0;
    for (const auto& [name, sub] : (*f.schema)["properties"].items()) {
      if (name == k) {
        if (idx <= f.last) return reject();
        f.last = idx;
        f.pending = &sub;
        return true;
      }
      ++idx;
    }
    return reject();
  }
  bool end_object() override {
    const Frame f = frames_.back();
    frames_.pop_back();
    if (!f.schema->is_null() && f.schema->contains("required")) {
      const auto& required = (*f.schema)["required"];
      long idx = 0;
      for (const auto& [name, sub] : (*f.schema)["properties"].items()) {
        const bool req = std::find(required.begin(), required.end(), ojson(name)) != required.end();
        if (req && idx > f.last) return reject();
        ++idx;
      }
    }
    return consumed();
  }
  bool start_array(std::size_t) override {
    const ojson* sch = expected();
    if (!sch || object_root_only()) return reject();
    if (!sch->is_null() && (sch->contains("enum") || (*sch)["type"] != "array")) return reject();
    const ojson* items = (!sch->is_null() && sch->contains("items")) ? &(*sch)["items"] : &any_;
    frames_.push_back({items, false, -1, nullptr});
    return true;
  }
  bool end_array() override {
    frames_.pop_back();
    return consumed();
  }
  bool parse_error(std::size_t pos, const std::string&, const nlohmann::detail::exception&) override {
    error_at = pos;
    return false;
  }

 private:
  struct Frame {
    const ojson* schema;  // object: its own schema; array: the item schema
    bool object;
    long last;            // object: index of the last key seen
    const ojson* pending;
  };

  // Schema for the value that starts now; nullptr if none may start.
  const ojson* expected() {
    if (frames_.empty()) {
      if (done_) return nullptr;
      return &root_;
    }
    Frame& f = frames_.back();
    return f.object ? f.pending : f.schema;
  }
  bool consumed() {
    if (frames_.empty()) done_ = true;
    else if (frames_.back().object) frames_.back().pending = nullptr;
    return true;
  }
  bool scalar(const char* type) {
    const ojson* sch = expected();
    if (!sch || object_root_only()) return reject();
    if (!sch->is_null()) {
      if (sch->contains("enum")) return reject();
      const auto want = (*sch)["type"].get<std::string>();
      if (want != type && !(want == "number" && std::string(type) == "integer")) return reject();
    }
    return consumed();
  }
  // json_object mode (null schema) needs an object at the root.
  bool object_root_only() const { return frames_.empty() && root_.is_null(); }
  bool reject() {
    rejected = true;
    return false;
  }

  const ojson& root_;
  const ojson any_;
  std::vector<Frame> frames_;
  bool done_ = false;
};

// Like json_prefix, but `invalid` also when the events so far already rule
// out every schema-valid completion. `complete` still needs valid() for the
// trailing-whitespace rule.
inline Prefix schema_prefix(const ojson& schema, std::string_view s) {
  StreamingCheck check(schema);
  const auto text = clamp_exponents(s);
  if (nlohmann::json::sax_parse(text, &check)) return Prefix::complete;
  if (check.rejected) return Prefix::invalid;
  return check.error_at == text.size() + 1 ? Prefix::viable : Prefix::invalid;
}

// ---------------------------------------------------------------------------
// sampler

class Sampler {
 public:
  explicit Sampler(uint64_t seed) : rng_(seed) {}

  std::string document(const ojson& schema) {
    std::string out = ws();
    if (schema.is_null()) {
      object_any(out, 0);
    } else {
      value(schema, out, 0);
    }
    return out;
  }

 private:
  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }

  std::string ws() {
    static const char kWs[] = {' ', '\t', '\n', '\r'};
    std::string s;
    while (pick(4) == 0) s += kWs[pick(4)];
    return s;
  }

  void string_body(std::string& out, const std::string& text) {
    out += '"';
    for (size_t i = 0; i < text.size();) {
      const auto c = static_cast<unsigned char>(text[i]);
      size_t len = c < 0x80 ? 1 : c >= 0xF0 ? 4 : c >= 0xE0 ? 3 : 2;
      uint32_t cp = c < 0x80 ? c : (c & (0x7Fu >> len));
      for (size_t k = 1; k < len; ++k) cp = cp << 6 | (static_cast<unsigned char>(text[i + k]) & 0x3Fu);
      const bool must_escape = cp < 0x20 || cp == '"' || cp == '\\';
      if (must_escape || pick(6) == 0) {
        escape(out, cp);
      } else {
        out.append(text, i, len);
      }
      i += len;
    }
    out += '"';
  }

  void escape(std::string& out, uint32_t cp) {
    auto hex4 = [&](uint32_t u) {
      static const char* kDigits[] = {"0123456789abcdef", "0123456789ABCDEF"};
      const char* d = kDigits[pick(2)];
      out += "\\u";
      for (int s = 12; s >= 0; s -= 4) out += d[(u >> s) & 0xF];
    };
    const char* short_form = nullptr;
    switch (cp) {
      case '"': short_form = "\\\""; break;
      case '\\': short_form = "\\\\"; break;
      case '/': short_form = "\\/"; break;
      case '\b': short_form = "\\b"; break;
      case '\f': short_form = "\\f"; break;
      case '\n': short_form = "\\n"; break;
      case '\r': short_form = "\\r"; break;
      case '\t': short_form = "\\t"; break;
      default: break;
    }
    if (short_form && pick(2) == 0) {
      out += short_form;
    } else if (cp < 0x10000) {
      hex4(cp);
    } else {
      hex4(0xD800 + ((cp - 0x10000) >> 10));
      hex4(0xDC00 + ((cp - 0x10000) & 0x3FF));
    }
  }

  std::string random_text() {
    static const char* kPieces[] = {"a", "b", "Z", " ", "\"", "\\", "/", "\n", "\t", "\x01",
                                    "\xc3\xa9", "\xe2\x82\xac", "\xf0\x9f\x98\x80", "0", "{"};
    std::string s;
    const int n = pick(6);
    for (int i = 0; i < n; ++i) s += kPieces[pick(15)];
    return s;
  }

  void number(std::string& out, bool integer) {
    if (pick(3) == 0) out += '-';
    if (pick(4) == 0) {
      out += '0';
    } else {
      out += static_cast<char>('1' + pick(9));
      for (int n = pick(4); n > 0; --n) out += static_cast<char>('0' + pick(10));
    }
    if (integer) return;
    if (pick(2) == 0) {
      out += '.';
      for (int n = 1 + pick(3); n > 0; --n) out += static_cast<char>('0' + pick(10));
    }
    if (pick(3) == 0) {
      out += pick(2) ? 'e' : 'E';
      const int sign = pick(3);
      if (sign == 1) out += '+';
      if (sign == 2) out += '-';
      for (int n = 1 + pick(2); n > 0; --n) out += static_cast<char>('0' + pick(10));
    }
  }

  void value(const ojson& schema, std::string& out, int depth) {
    if (schema.is_null()) {
      any(out, depth);
      return;
    }
    if (schema.contains("enum")) {
      const auto& e = schema["enum"];
      string_body(out, e[static_cast<size_t>(pick(static_cast<int>(e.size())))].get<std::string>());
      return;
    }
    const auto type = schema["type"].get<std::string>();
    if (type == "null") out += "null";
    else if (type == "boolean") out += pick(2) ? "true" : "false";
    else if (type == "integer") number(out, true);
    else if (type == "number") number(out, pick(3) == 0);
    else if (type == "string") string_body(out, random_text());
    else if (type == "array") {
      const ojson items = schema.contains("items") ? schema["items"] : ojson();
      out += '[';
      out += ws();
      const int n = depth > 3 ? 0 : pick(4);
      for (int i = 0; i < n; ++i) {
        if (i > 0) out += ws() + "," + ws();
        value(items, out, depth + 1);
      }
      out += ws();
      out += ']';
    } else if (type == "object") {
      out += '{';
      out += ws();
      bool first = true;
      if (schema.contains("properties")) {
        std::vector<std::string> required;
        if (schema.contains("required")) {
          for (const auto& r : schema["required"]) required.push_back(r.get<std::string>());
        }
        for (const auto& [k, sub] : schema["properties"].items()) {
          const bool req = std::find(required.begin(), required.end(), k) != required.end();
          if (!req && pick(2) == 0) continue;
          if (!first) out += ws() + "," + ws();
          first = false;
          string_body(out, k);
          out += ws() + ":" + ws();
          value(sub, out, depth + 1);
        }
      }
      out += ws();
      out += '}';
    }
  }

  void object_any(std::string& out, int depth) {
    out += '{';
    out += ws();
    const int n = depth > 2 ? 0 : pick(3);
    for (int i = 0; i < n; ++i) {
      if (i > 0) out += ws() + "," + ws();
      string_body(out, random_text());
      out += ws() + ":" + ws();
      any(out, depth + 1);
    }
    out += ws();
    out += '}';
  }

  void any(std::string& out, int depth) {
    switch (depth > 2 ? 2 + pick(5) : pick(7)) {
      case 0: object_any(out, depth); break;
      case 1: {
        out += '[';
        const int n = pick(3);
        for (int i = 0; i < n; ++i) {
          if (i > 0) out += ',' + ws();
          any(out, depth + 1);
        }
        out += ']';
        break;
      }
      case 2: string_body(out, random_text()); break;
      case 3: number(out, false); break;
      case 4: out += "true"; break;
      case 5: out += "false"; break;
      default: out += "null"; break;
    }
  }

  std::mt19937_64 rng_;
};

}  // namespace reference
