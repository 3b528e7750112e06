// SPDX-License-Identifier: Apache-2.0
#include "ember/grammar/grammar.h"

#include <algorithm>
#include <bit>
#include <limits>

#include "ember/error.h"
#include "ember/tokenizer/byte_tokenizer.h"
#include "ember/utf8.h"
#include "json.hpp"

namespace ember::grammar {

namespace {

using ojson = nlohmann::ordered_json;

constexpr uint32_t kUnreachable = std::numeric_limits<uint32_t>::max() / 4;

enum : uint8_t { R_START, R_VALUE, R_DONE };
enum : uint8_t { O_START, O_KEY, O_AFTER_KEY, O_BEFORE_VALUE, O_VALUE, O_AFTER_VALUE, O_BEFORE_KEY };
enum : uint8_t { A_START, A_VALUE, A_AFTER_VALUE, A_BEFORE_VALUE };
enum : uint8_t { S_NORMAL, S_UTF8, S_ESC, S_HEX, S_LOW_BS, S_LOW_U, S_LOW_HEX };
enum : uint8_t { N_START, N_MINUS, N_ZERO, N_INT, N_FRAC0, N_FRAC, N_EXP0, N_EXP_SIGN, N_EXP };

constexpr std::string_view kLiterals[] = {"true", "false", "null"};

bool is_ws(uint8_t b) { return b == ' ' || b == '\t' || b == '\n' || b == '\r'; }
bool is_digit(uint8_t b) { return b >= '0' && b <= '9'; }

int hex_value(uint8_t b) {
  if (b >= '0' && b <= '9') return b - '0';
  if (b >= 'a' && b <= 'f') return b - 'a' + 10;
  if (b >= 'A' && b <= 'F') return b - 'A' + 10;
  return -1;
}

bool number_accepting(uint8_t phase) {
  return phase == N_ZERO || phase == N_INT || phase == N_FRAC || phase == N_EXP;
}

// Shortest JSON string-body encoding of already-decoded bytes.
uint32_t enc_len(std::string_view s) {
  uint32_t n = 0;
  for (unsigned char c : s) {
    if (c == '"' || c == '\\') n += 2;
    else if (c < 0x20) n += (c == '\b' || c == '\f' || c == '\n' || c == '\r' || c == '\t') ? 2 : 6;
    else n += 1;
  }
  return n;
}

// Code point starting at s[pos] (s is valid UTF-8) and its byte length.
std::pair<uint32_t, size_t> codepoint_at(std::string_view s, size_t pos) {
  const auto b0 = static_cast<unsigned char>(s[pos]);
  if (b0 < 0x80) return {b0, 1};
  const size_t len = b0 >= 0xF0 ? 4 : b0 >= 0xE0 ? 3 : 2;
  uint32_t cp = b0 & (0x7Fu >> len);
  for (size_t i = 1; i < len; ++i) cp = cp << 6 | (static_cast<unsigned char>(s[pos + i]) & 0x3Fu);
  return {cp, len};
}

bool short_escapable(uint32_t cp) {
  return cp == '"' || cp == '\\' || cp == '/' || cp == '\b' || cp == '\f' || cp == '\n' ||
         cp == '\r' || cp == '\t';
}

uint32_t high_of(uint32_t cp) { return 0xD800 + ((cp - 0x10000) >> 10); }
uint32_t low_of(uint32_t cp) { return 0xDC00 + ((cp - 0x10000) & 0x3FF); }

// Property indices a key may name when `next` is the first unused one: every
// optional property up to and including the next required one.
std::pair<uint32_t, uint32_t> key_range(const Node& obj, uint32_t next) {
  uint32_t end = next;
  while (end < obj.keys.size()) {
    if (obj.required[end]) return {next, end + 1};
    ++end;
  }
  return {next, end};
}

bool can_close(const Node& obj, uint32_t next) {
  if (obj.open) return true;
  for (uint32_t j = next; j < obj.keys.size(); ++j) {
    if (obj.required[j]) return false;
  }
  return true;
}

[[noreturn]] void unsupported(const std::string& why) { throw Error(Errc::unsupported_schema, why); }

}  // namespace

// ---------------------------------------------------------------------------
// compilation

class SchemaCompiler {
 public:
  explicit SchemaCompiler(Grammar& g) : g_(g) {}

  int compile(const ojson& s, int depth) {
    if (depth > 64) unsupported("schema nesting deeper than 64");
    if (!s.is_object()) unsupported("schema must be an object");
    static const char* kKnown[] = {"type",  "properties", "required",    "items",
                                   "enum",  "title",      "description", "$schema",
                                   "additionalProperties"};
    for (const auto& [k, v] : s.items()) {
      if (std::find(std::begin(kKnown), std::end(kKnown), k) == std::end(kKnown)) unsupported(k);
    }
    if (s.contains("additionalProperties") && s["additionalProperties"] != false) {
      unsupported("additionalProperties");
    }

    Node n;
    if (s.contains("enum")) {
      const auto& e = s["enum"];
      if (!e.is_array() || e.empty()) unsupported("enum must be a non-empty array");
      if (s.contains("type") && s["type"] != "string") unsupported("enum of non-string type");
      for (const auto& v : e) {
        if (!v.is_string()) unsupported("enum with non-string values");
        n.values.push_back(v.get<std::string>());
      }
      n.kind = NodeKind::enumeration;
      uint32_t best = kUnreachable;
      for (const auto& v : n.values) best = std::min(best, 2 + enc_len(v));
      n.min_len = best;
      return add(std::move(n));
    }
    if (!s.contains("type")) unsupported("missing type");
    if (!s["type"].is_string()) unsupported("type must be a single string");
    const auto type = s["type"].get<std::string>();
    if (type != "object" && (s.contains("properties") || s.contains("required"))) {
      unsupported("properties on a non-object type");
    }
    if (type != "array" && s.contains("items")) unsupported("items on a non-array type");

    if (type == "object") {
      n.kind = NodeKind::object;
      if (s.contains("properties")) {
        if (!s["properties"].is_object()) unsupported("properties must be an object");
        for (const auto& [k, v] : s["properties"].items()) {
          n.keys.push_back(k);
          n.children.push_back(compile(v, depth + 1));
          n.required.push_back(false);
        }
      }
      if (s.contains("required")) {
        if (!s["required"].is_array()) unsupported("required must be an array");
        for (const auto& r : s["required"]) {
          if (!r.is_string()) unsupported("required must list strings");
          auto it = std::find(n.keys.begin(), n.keys.end(), r.get<std::string>());
          if (it == n.keys.end()) unsupported("required key '" + r.get<std::string>() + "' not in properties");
          n.required[static_cast<size_t>(it - n.keys.begin())] = true;
        }
      }
      uint32_t cost = 2, count = 0;
      for (size_t j = 0; j < n.keys.size(); ++j) {
        if (!n.required[j]) continue;
        cost += key_cost(n, j);
        ++count;
      }
      n.min_len = cost + (count > 0 ? count - 1 : 0);
    } else if (type == "array") {
      n.kind = NodeKind::array;
      n.children.push_back(s.contains("items") ? compile(s["items"], depth + 1) : g_.any_node());
      n.min_len = 2;
    } else if (type == "string") {
      n.kind = NodeKind::string;
      n.min_len = 2;
    } else if (type == "integer" || type == "number") {
      n.kind = type == "integer" ? NodeKind::integer : NodeKind::number;
      n.min_len = 1;
    } else if (type == "boolean") {
      n.kind = NodeKind::boolean;
      n.min_len = 4;
    } else if (type == "null") {
      n.kind = NodeKind::null;
      n.min_len = 4;
    } else {
      unsupported("type '" + type + "'");
    }
    return add(std::move(n));
  }

  uint32_t key_cost(const Node& obj, size_t j) const {
    return enc_len(obj.keys[j]) + 3 + g_.node(obj.children[j]).min_len;
  }

 private:
  int add(Node n) {
    g_.nodes_.push_back(std::move(n));
    return static_cast<int>(g_.nodes_.size() - 1);
  }

  Grammar& g_;
};

Grammar::Grammar() {
  // 0: any value, 1: any object, 2: any array.
  Node any;
  any.kind = NodeKind::any;
  any.min_len = 1;
  Node obj;
  obj.kind = NodeKind::object;
  obj.open = true;
  obj.min_len = 2;
  Node arr;
  arr.kind = NodeKind::array;
  arr.children = {0};
  arr.min_len = 2;
  nodes_ = {any, obj, arr};
  root_ = 1;
}

std::shared_ptr<const Grammar> Grammar::from_schema(std::string_view schema_json) {
  ojson s;
  try {
    s = ojson::parse(schema_json);
  } catch (const nlohmann::json::exception& e) {
    unsupported(std::string("schema is not valid JSON: ") + e.what());
  }
  std::shared_ptr<Grammar> g(new Grammar());
  SchemaCompiler c(*g);
  g->root_ = c.compile(s, 0);
  return g;
}

std::shared_ptr<const Grammar> Grammar::json_object() {
  return std::shared_ptr<const Grammar>(new Grammar());
}

uint32_t TokenMask::count() const {
  uint32_t n = 0;
  for (uint64_t w : bits_) n += static_cast<uint32_t>(std::popcount(w));
  return n;
}

// ---------------------------------------------------------------------------
// recognition

Matcher::Matcher(std::shared_ptr<const Grammar> grammar) : g_(std::move(grammar)) {
  Frame root;
  root.kind = FrameKind::root;
  root.phase = R_START;
  root.node = g_->root();
  stack_.push_back(root);
}

bool Matcher::start_value(int node_index, uint8_t b) {
  const Node& n = g_->node(node_index);
  Frame f;
  f.node = node_index;
  auto push_literal = [&](uint8_t which) {
    f.kind = FrameKind::literal;
    f.literal = which;
    f.next = 1;
    stack_.push_back(f);
    return true;
  };
  auto push_number = [&]() {
    f.kind = FrameKind::number;
    f.phase = N_START;
    stack_.push_back(f);
    return feed(b);
  };
  switch (n.kind) {
    case NodeKind::any:
      if (b == '{') return start_value(g_->any_object_node(), b);
      if (b == '[') return start_value(g_->any_array_node(), b);
      if (b == '"') {
        f.kind = FrameKind::string;
        stack_.push_back(f);
        return true;
      }
      if (b == '-' || is_digit(b)) return push_number();
      if (b == 't') return push_literal(0);
      if (b == 'f') return push_literal(1);
      if (b == 'n') return push_literal(2);
      return false;
    case NodeKind::object:
      if (b != '{') return false;
      f.kind = FrameKind::object;
      f.phase = O_START;
      stack_.push_back(f);
      return true;
    case NodeKind::array:
      if (b != '[') return false;
      f.kind = FrameKind::array;
      f.phase = A_START;
      stack_.push_back(f);
      return true;
    case NodeKind::string:
    case NodeKind::enumeration:
      if (b != '"') return false;
      f.kind = FrameKind::string;
      f.constrained = n.kind == NodeKind::enumeration;
      stack_.push_back(f);
      return true;
    case NodeKind::integer:
    case NodeKind::number:
      if (b != '-' && !is_digit(b)) return false;
      return push_number();
    case NodeKind::boolean:
      if (b == 't') return push_literal(0);
      if (b == 'f') return push_literal(1);
      return false;
    case NodeKind::null:
      return b == 'n' ? push_literal(2) : false;
  }
  return false;
}

void Matcher::child_done(const Frame& child) {
  Frame& p = stack_.back();
  switch (p.kind) {
    case FrameKind::root:
      p.phase = R_DONE;
      break;
    case FrameKind::object: {
      const Node& obj = g_->node(p.node);
      if (p.phase == O_KEY) {
        if (!obj.open) {
          const auto [lo, hi] = key_range(obj, p.next);
          for (uint32_t j = lo; j < hi; ++j) {
            if (obj.keys[j] == child.decoded) {
              p.current = static_cast<int>(j);
              p.next = j + 1;
              break;
            }
          }
        }
        p.phase = O_AFTER_KEY;
      } else {
        p.phase = O_AFTER_VALUE;
      }
      break;
    }
    case FrameKind::array:
      p.phase = A_AFTER_VALUE;
      break;
    default:
      break;
  }
}

// Candidate strings a constrained string frame may still decode to, passed
// as (index, text) to `fn`.
template <typename Fn>
static void for_each_candidate(const Grammar& g, const Frame& f, const Frame* parent, Fn&& fn) {
  if (f.key) {
    const Node& obj = g.node(parent->node);
    const auto [lo, hi] = key_range(obj, parent->next);
    for (uint32_t j = lo; j < hi; ++j) fn(j, std::string_view(obj.keys[j]));
  } else {
    const Node& n = g.node(f.node);
    for (uint32_t j = 0; j < n.values.size(); ++j) fn(j, std::string_view(n.values[j]));
  }
}

bool Matcher::string_append(Frame& f, std::string_view bytes) {
  if (!f.constrained) return true;
  f.decoded.append(bytes);
  const Frame* parent = stack_.size() >= 2 ? &stack_[stack_.size() - 2] : nullptr;
  bool ok = false;
  for_each_candidate(*g_, f, parent, [&](uint32_t, std::string_view c) {
    if (!ok && c.substr(0, f.decoded.size()) == f.decoded) ok = true;
  });
  return ok;
}

// Some candidate's next code point can still be produced by the escape read
// so far.
bool Matcher::hex_prefix_viable(const Frame& f) const {
  if (!f.constrained) return true;
  const Frame* parent = stack_.size() >= 2 ? &stack_[stack_.size() - 2] : nullptr;
  bool ok = false;
  for_each_candidate(*g_, f, parent, [&](uint32_t, std::string_view c) {
    if (ok || c.size() <= f.decoded.size() || c.substr(0, f.decoded.size()) != f.decoded) return;
    const uint32_t cp = codepoint_at(c, f.decoded.size()).first;
    if (f.phase == S_ESC) {
      ok = true;  // any code point can be written as an escape
    } else if (f.phase == S_HEX) {
      const uint32_t unit = cp < 0x10000 ? cp : high_of(cp);
      ok = (unit >> (4 * (4 - f.hex_digits))) == f.hex;
    } else {
      ok = cp >= 0x10000 && high_of(cp) == f.high &&
           (low_of(cp) >> (4 * (4 - f.hex_digits))) == f.hex;
    }
  });
  return ok;
}

bool Matcher::step_string(Frame& f, uint8_t b) {
  switch (f.phase) {
    case S_NORMAL: {
      if (b == '"') {
        if (f.constrained) {
          const Frame* parent = stack_.size() >= 2 ? &stack_[stack_.size() - 2] : nullptr;
          bool match = false;
          for_each_candidate(*g_, f, parent, [&](uint32_t, std::string_view c) {
            if (c == f.decoded) match = true;
          });
          if (!match) return false;
        }
        Frame done = std::move(f);
        stack_.pop_back();
        child_done(done);
        return true;
      }
      if (b == '\\') {
        f.phase = S_ESC;
        return hex_prefix_viable(f);
      }
      if (b < 0x20) return false;
      if (b < 0x80) return string_append(f, std::string_view(reinterpret_cast<const char*>(&b), 1));
      uint8_t need = 0, lo = 0x80, hi = 0xBF;
      if (b >= 0xC2 && b <= 0xDF) need = 1;
      else if (b == 0xE0) need = 2, lo = 0xA0;
      else if ((b >= 0xE1 && b <= 0xEC) || b == 0xEE || b == 0xEF) need = 2;
      else if (b == 0xED) need = 2, hi = 0x9F;
      else if (b == 0xF0) need = 3, lo = 0x90;
      else if (b >= 0xF1 && b <= 0xF3) need = 3;
      else if (b == 0xF4) need = 3, hi = 0x8F;
      else return false;
      f.phase = S_UTF8;
      f.utf8_need = need;
      f.utf8_lo = lo;
      f.utf8_hi = hi;
      return string_append(f, std::string_view(reinterpret_cast<const char*>(&b), 1));
    }
    case S_UTF8:
      if (b < f.utf8_lo || b > f.utf8_hi) return false;
      f.utf8_lo = 0x80;
      f.utf8_hi = 0xBF;
      if (--f.utf8_need == 0) f.phase = S_NORMAL;
      return string_append(f, std::string_view(reinterpret_cast<const char*>(&b), 1));
    case S_ESC: {
      char c = 0;
      switch (b) {
        case '"': c = '"'; break;
        case '\\': c = '\\'; break;
        case '/': c = '/'; break;
        case 'b': c = '\b'; break;
        case 'f': c = '\f'; break;
        case 'n': c = '\n'; break;
        case 'r': c = '\r'; break;
        case 't': c = '\t'; break;
        case 'u':
          f.phase = S_HEX;
          f.hex = 0;
          f.hex_digits = 0;
          return hex_prefix_viable(f);
        default: return false;
      }
      f.phase = S_NORMAL;
      return string_append(f, std::string_view(&c, 1));
    }
    case S_HEX: {
      const int v = hex_value(b);
      if (v < 0) return false;
      f.hex = f.hex << 4 | static_cast<uint32_t>(v);
      ++f.hex_digits;
      // A lone low surrogate can never be completed.
      if (f.hex_digits == 2 && f.hex >= 0xDC && f.hex <= 0xDF) return false;
      if (!hex_prefix_viable(f)) return false;
      if (f.hex_digits < 4) return true;
      if (f.hex >= 0xD800 && f.hex <= 0xDBFF) {
        f.high = f.hex;
        f.phase = S_LOW_BS;
        return true;
      }
      f.phase = S_NORMAL;
      std::string out;
      utf8::append_codepoint(out, f.hex);
      return string_append(f, out);
    }
    case S_LOW_BS:
      if (b != '\\') return false;
      f.phase = S_LOW_U;
      return true;
    case S_LOW_U:
      if (b != 'u') return false;
      f.phase = S_LOW_HEX;
      f.hex = 0;
      f.hex_digits = 0;
      return true;
    case S_LOW_HEX: {
      const int v = hex_value(b);
      if (v < 0) return false;
      f.hex = f.hex << 4 | static_cast<uint32_t>(v);
      ++f.hex_digits;
      if (f.hex_digits == 1 && f.hex != 0xD) return false;
      if (f.hex_digits == 2 && (f.hex < 0xDC || f.hex > 0xDF)) return false;
      if (!hex_prefix_viable(f)) return false;
      if (f.hex_digits < 4) return true;
      const uint32_t cp = 0x10000 + ((f.high - 0xD800) << 10) + (f.hex - 0xDC00);
      f.phase = S_NORMAL;
      f.high = 0;
      std::string out;
      utf8::append_codepoint(out, cp);
      return string_append(f, out);
    }
  }
  return false;
}

bool Matcher::feed(uint8_t b) {
  for (;;) {
    if (stack_.empty()) return false;
    Frame& f = stack_.back();
    switch (f.kind) {
      case FrameKind::root:
        if (f.phase != R_START) return false;
        if (is_ws(b)) return true;
        f.phase = R_VALUE;
        return start_value(f.node, b);

      case FrameKind::object: {
        const Node& obj = g_->node(f.node);
        auto push_key = [&]() {
          f.phase = O_KEY;
          Frame k;
          k.kind = FrameKind::string;
          k.node = f.node;
          k.key = true;
          k.constrained = !obj.open;
          stack_.push_back(std::move(k));
          return true;
        };
        auto close = [&]() {
          if (!can_close(obj, f.next)) return false;
          Frame done = std::move(f);
          stack_.pop_back();
          child_done(done);
          return true;
        };
        const bool more_keys = obj.open || f.next < obj.keys.size();
        switch (f.phase) {
          case O_START:
            if (is_ws(b)) return true;
            if (b == '"' && more_keys) return push_key();
            if (b == '}') return close();
            return false;
          case O_AFTER_KEY:
            if (is_ws(b)) return true;
            if (b != ':') return false;
            f.phase = O_BEFORE_VALUE;
            return true;
          case O_BEFORE_VALUE: {
            if (is_ws(b)) return true;
            f.phase = O_VALUE;
            const int child = obj.open ? g_->any_node() : obj.children[static_cast<size_t>(f.current)];
            return start_value(child, b);
          }
          case O_AFTER_VALUE:
            if (is_ws(b)) return true;
            if (b == ',' && more_keys) {
              f.phase = O_BEFORE_KEY;
              return true;
            }
            if (b == '}') return close();
            return false;
          case O_BEFORE_KEY:
            if (is_ws(b)) return true;
            if (b == '"') return push_key();
            return false;
          default:
            return false;
        }
      }

      case FrameKind::array: {
        const int items = g_->node(f.node).children[0];
        auto close = [&]() {
          Frame done = std::move(f);
          stack_.pop_back();
          child_done(done);
          return true;
        };
        switch (f.phase) {
          case A_START:
            if (is_ws(b)) return true;
            if (b == ']') return close();
            f.phase = A_VALUE;
            return start_value(items, b);
          case A_AFTER_VALUE:
            if (is_ws(b)) return true;
            if (b == ',') {
              f.phase = A_BEFORE_VALUE;
              return true;
            }
            if (b == ']') return close();
            return false;
          case A_BEFORE_VALUE:
            if (is_ws(b)) return true;
            f.phase = A_VALUE;
            return start_value(items, b);
          default:
            return false;
        }
      }

      case FrameKind::string:
        return step_string(f, b);

      case FrameKind::literal: {
        const auto text = kLiterals[f.literal];
        if (static_cast<uint8_t>(text[f.next]) != b) return false;
        if (++f.next == text.size()) {
          Frame done = f;
          stack_.pop_back();
          child_done(done);
        }
        return true;
      }

      case FrameKind::number: {
        const bool int_only = g_->node(f.node).kind == NodeKind::integer;
        const bool exp_mark = b == 'e' || b == 'E';
        uint8_t next = 0xff;
        switch (f.phase) {
          case N_START:
            if (b == '-') next = N_MINUS;
            else if (b == '0') next = N_ZERO;
            else if (is_digit(b)) next = N_INT;
            break;
          case N_MINUS:
            if (b == '0') next = N_ZERO;
            else if (is_digit(b)) next = N_INT;
            break;
          case N_ZERO:
          case N_INT:
            if (f.phase == N_INT && is_digit(b)) next = N_INT;
            else if (!int_only && b == '.') next = N_FRAC0;
            else if (!int_only && exp_mark) next = N_EXP0;
            break;
          case N_FRAC0:
            if (is_digit(b)) next = N_FRAC;
            break;
          case N_FRAC:
            if (is_digit(b)) next = N_FRAC;
            else if (exp_mark) next = N_EXP0;
            break;
          case N_EXP0:
            if (b == '+' || b == '-') next = N_EXP_SIGN;
            else if (is_digit(b)) next = N_EXP;
            break;
          case N_EXP_SIGN:
          case N_EXP:
            if (is_digit(b)) next = N_EXP;
            break;
        }
        if (next != 0xff) {
          f.phase = next;
          return true;
        }
        if (!number_accepting(f.phase)) return false;
        // The number ended just before this byte; hand the byte to the parent.
        Frame done = f;
        stack_.pop_back();
        child_done(done);
        continue;
      }
    }
    return false;
  }
}

std::optional<Matcher> Matcher::advance(std::string_view bytes) const {
  Matcher m = *this;
  for (char c : bytes) {
    if (!m.feed(static_cast<uint8_t>(c))) return std::nullopt;
  }
  return m;
}

Matcher Matcher::accept_token(uint32_t id, const tokenizer::ByteTokenizer& tok) const {
  if (id == tok.eos_id()) {
    if (is_terminated()) return *this;
    throw Error(Errc::token_rejected, "end of sequence before the document is complete");
  }
  const auto bytes = tok.token_bytes(id);
  if (bytes.empty()) throw Error(Errc::token_rejected, "token " + std::to_string(id) + " has no bytes");
  auto next = advance(bytes);
  if (!next) throw Error(Errc::token_rejected, "token " + std::to_string(id) + " rejected by grammar");
  return *std::move(next);
}

bool Matcher::is_terminated() const {
  if (stack_.size() == 1) return stack_[0].phase == R_DONE;
  return stack_.size() == 2 && stack_[1].kind == FrameKind::number && number_accepting(stack_[1].phase);
}

// ---------------------------------------------------------------------------
// completion cost

uint32_t Matcher::after_value_cost(const Node& obj, uint32_t next) const {
  if (obj.open) return 1;
  uint32_t cost = 1;
  for (size_t j = next; j < obj.keys.size(); ++j) {
    if (obj.required[j]) cost += 1 + enc_len(obj.keys[j]) + 3 + g_->node(obj.children[j]).min_len;
  }
  return cost;
}

// Bytes to finish a string frame, plus (for keys) the rest of the owning
// object, which depends on which key is chosen.
uint32_t Matcher::string_cost(const Frame& f, const Frame* parent) const {
  const Node* obj = f.key ? &g_->node(parent->node) : nullptr;
  if (!f.constrained) {
    uint32_t c = 0;
    switch (f.phase) {
      case S_NORMAL: c = 1; break;
      case S_UTF8: c = f.utf8_need + 1u; break;
      case S_ESC: c = 2; break;
      case S_HEX: {
        const uint32_t top = f.hex_digits >= 2 ? f.hex >> (4 * (f.hex_digits - 2)) : 0;
        c = (4u - f.hex_digits) + (top >= 0xD8 && top <= 0xDB ? 6u : 0u) + 1u;
        break;
      }
      case S_LOW_BS: c = 7; break;
      case S_LOW_U: c = 6; break;
      case S_LOW_HEX: c = (4u - f.hex_digits) + 1u; break;
    }
    if (f.key) c += 1 + g_->node(g_->any_node()).min_len + after_value_cost(*obj, 0);
    return c;
  }

  uint32_t best = kUnreachable;
  const size_t d = f.decoded.size();
  for_each_candidate(*g_, f, parent, [&](uint32_t j, std::string_view c) {
    if (c.size() < d || c.substr(0, d) != f.decoded) return;
    uint32_t rem = 0;
    if (f.phase == S_NORMAL) {
      rem = enc_len(c.substr(d));
    } else if (f.phase == S_UTF8) {
      rem = f.utf8_need + enc_len(c.substr(d + f.utf8_need));
    } else {
      if (c.size() == d) return;
      const auto [cp, len] = codepoint_at(c, d);
      const auto rest = enc_len(c.substr(d + len));
      switch (f.phase) {
        case S_ESC: rem = short_escapable(cp) ? 1 : cp < 0x10000 ? 5 : 11; break;
        case S_HEX: {
          const uint32_t unit = cp < 0x10000 ? cp : high_of(cp);
          if ((unit >> (4 * (4 - f.hex_digits))) != f.hex) return;
          rem = (4u - f.hex_digits) + (cp >= 0x10000 ? 6u : 0u);
          break;
        }
        case S_LOW_BS:
        case S_LOW_U:
        case S_LOW_HEX:
          if (cp < 0x10000 || high_of(cp) != f.high) return;
          if (f.phase == S_LOW_HEX && (low_of(cp) >> (4 * (4 - f.hex_digits))) != f.hex) return;
          rem = f.phase == S_LOW_BS ? 6u : f.phase == S_LOW_U ? 5u : 4u - f.hex_digits;
          break;
      }
      rem += rest;
    }
    uint32_t total = rem + 1;
    if (f.key) total += 1 + g_->node(obj->children[j]).min_len + after_value_cost(*obj, j + 1);
    best = std::min(best, total);
  });
  return best;
}

uint32_t Matcher::min_remaining_bytes() const {
  if (is_terminated()) return 0;
  size_t i = stack_.size() - 1;
  const Frame& top = stack_[i];
  const Frame* parent = i > 0 ? &stack_[i - 1] : nullptr;
  uint32_t total = 0;

  switch (top.kind) {
    case FrameKind::root:
      total = top.phase == R_START ? g_->node(top.node).min_len : 0;
      break;
    case FrameKind::object: {
      const Node& obj = g_->node(top.node);
      auto child_len = [&]() {
        return g_->node(obj.open ? g_->any_node() : obj.children[static_cast<size_t>(top.current)]).min_len;
      };
      switch (top.phase) {
        case O_START:
          total = obj.min_len - 1;
          break;
        case O_AFTER_KEY:
          total = 1 + child_len() + after_value_cost(obj, top.next);
          break;
        case O_BEFORE_VALUE:
          total = child_len() + after_value_cost(obj, top.next);
          break;
        case O_AFTER_VALUE:
          total = after_value_cost(obj, top.next);
          break;
        case O_BEFORE_KEY: {
          if (obj.open) {
            total = 2 + 1 + g_->node(g_->any_node()).min_len + 1;
            break;
          }
          uint32_t req = 0, count = 0;
          for (size_t j = top.next; j < obj.keys.size(); ++j) {
            if (!obj.required[j]) continue;
            req += enc_len(obj.keys[j]) + 3 + g_->node(obj.children[j]).min_len;
            ++count;
          }
          if (count > 0) {
            total = req + (count - 1) + 1;
          } else {
            uint32_t best = kUnreachable;
            for (size_t j = top.next; j < obj.keys.size(); ++j) {
              best = std::min(best, enc_len(obj.keys[j]) + 3 + g_->node(obj.children[j]).min_len);
            }
            total = best + 1;
          }
          break;
        }
        default:
          break;
      }
      break;
    }
    case FrameKind::array: {
      const Node& arr = g_->node(top.node);
      total = top.phase == A_BEFORE_VALUE ? g_->node(arr.children[0]).min_len + 1 : 1;
      break;
    }
    case FrameKind::string:
      total = string_cost(top, parent);
      // A key's cost already covers the rest of its object.
      if (top.key) --i;
      break;
    case FrameKind::number:
      total = number_accepting(top.phase) ? 0 : 1;
      break;
    case FrameKind::literal:
      total = static_cast<uint32_t>(kLiterals[top.literal].size() - top.next);
      break;
  }

  while (i-- > 0) {
    const Frame& f = stack_[i];
    if (f.kind == FrameKind::object) total += after_value_cost(g_->node(f.node), f.next);
    else if (f.kind == FrameKind::array) total += 1;
  }
  return total;
}

TokenMask Matcher::compute_mask(const tokenizer::ByteTokenizer& tok,
                                std::optional<uint32_t> budget) const {
  TokenMask mask(tok.vocab_size());
  const bool terminated = is_terminated();
  for (uint32_t id = 0; id < tok.vocab_size(); ++id) {
    const auto bytes = tok.token_bytes(id);
    if (bytes.empty()) {
      if (id == tok.eos_id() && terminated) mask.set(id);
      continue;
    }
    const auto next = advance(bytes);
    if (!next) continue;
    if (budget && (*budget == 0 || next->min_remaining_bytes() > *budget - 1)) continue;
    mask.set(id);
  }
  if (mask.count() == 0) throw Error(Errc::dead_end_grammar, "no token can continue the document");
  return mask;
}

}  // namespace ember::grammar
