// SPDX-License-Identifier: Apache-2.0
// Schemas used to check the grammar against the reference validator, and
// the bounded enumeration that compares them.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ember/grammar/grammar.h"
#include "support/json_reference.h"

namespace testing {

struct CorpusSchema {
  std::string name;
  std::string schema;   // "" selects json_object mode
  std::string outside;  // bytes tried outside string literals
  std::string inside;   // bytes tried inside string literals, besides the closing '"'
  std::string hex = "061";  // bytes tried as \u digits
  size_t max_len = 12;
};

inline const std::vector<CorpusSchema>& grammar_corpus() {
  static const std::vector<CorpusSchema> corpus = {
      {"object_integer",
       R"({"type":"object","properties":{"a":{"type":"integer"}},"required":["a"]})",
       "{}\":, -.e01[", "ab\\"},
      {"boolean", R"({"type":"boolean"})", "truefals \"0n", "a"},
      {"null", R"({"type":"null"})", "nul t\"0", "a"},
      {"integer", R"({"type":"integer"})", "-+.eE01 \"", "1"},
      {"number", R"({"type":"number"})", "-+.e01 ", ""},
      {"string_ascii", R"({"type":"string"})", "\" a0", "a/\\"},
      {"string_utf8", R"({"type":"string"})", "\" ",
       std::string("\x01\xc3\xa9\xe2\xf0\x9f\xed\x80\xc0", 9), ""},
      {"string_surrogates", R"({"type":"string"})", "\" ", "a\\", "D8C0", 14},
      {"enum", R"({"enum":["a","b\"","é",""]})", "\" a", std::string("ab\xc3\xa9\\", 5), "0e9"},
      {"array_boolean", R"({"type":"array","items":{"type":"boolean"}})",
       "[],truefals 0\"", "a"},
      {"object_optional",
       R"({"type":"object","properties":{"a":{"type":"boolean"},"b":{"type":"null"}},"required":["b"]})",
       "{}\":,trunl ", "ab"},
      {"nested_arrays", R"({"type":"array","items":{"type":"array","items":{"type":"integer"}}})",
       "[], -01.", "a"},
      {"array_enum", R"({"type":"array","items":{"enum":["x","yz"]}})", "[],\" 0", "xyz"},
      {"object_empty", R"({"type":"object"})", "{}\": ,a0", "a"},
      {"array_any", R"({"type":"array"})", "[]{},:\"0t", "a"},
      {"json_object", "", "{}[]:,\" 0-tn", "a\\"},
  };
  return corpus;
}

inline reference::ojson corpus_schema_json(const CorpusSchema& c) {
  return c.schema.empty() ? reference::ojson() : reference::ojson::parse(c.schema);
}

inline std::shared_ptr<const ember::grammar::Grammar> corpus_grammar(const CorpusSchema& c) {
  return c.schema.empty() ? ember::grammar::Grammar::json_object()
                          : ember::grammar::Grammar::from_schema(c.schema);
}

struct EnumerationResult {
  uint64_t documents = 0;  // strings examined
  uint64_t accepted = 0;   // accepted by both sides
  uint64_t mismatches = 0;
  std::string first_mismatch;
  bool first_grammar_accepts = false;
};

// Walks every byte string up to c.max_len over the corpus alphabets, as long
// as either the grammar or the reference still considers the prefix viable,
// and compares complete acceptance at each one.
inline EnumerationResult enumerate_and_compare(const CorpusSchema& c) {
  using ember::grammar::Matcher;
  const auto schema = corpus_schema_json(c);
  const auto grammar = corpus_grammar(c);
  EnumerationResult res;

  // Lexical position, tracked independently of either side, only to pick
  // which alphabet applies next.
  enum Lex { out, in, esc, hex0, hex1, hex2, hex3 };
  struct Item {
    std::string s;
    std::optional<Matcher> m;
    Lex lex;
  };
  std::vector<Item> stack;
  stack.push_back({"", Matcher(grammar), out});

  while (!stack.empty()) {
    Item item = std::move(stack.back());
    stack.pop_back();
    if (!item.s.empty()) {
      ++res.documents;
      const bool g = item.m && item.m->is_terminated();
      const auto prefix = reference::schema_prefix(schema, item.s);
      const bool r = (g || prefix == reference::Prefix::complete) && reference::valid(schema, item.s);
      if (g != r) {
        if (res.mismatches++ == 0) {
          res.first_mismatch = item.s;
          res.first_grammar_accepts = g;
        }
      } else if (g) {
        ++res.accepted;
      }
      if (!item.m && prefix == reference::Prefix::invalid) continue;
    }
    if (item.s.size() >= c.max_len) continue;

    std::string alphabet;
    switch (item.lex) {
      case out: alphabet = c.outside; break;
      case in: alphabet = c.inside + "\""; break;
      case esc: alphabet = "\"\\/nux"; break;
      default: alphabet = c.hex; break;
    }
    for (char b : alphabet) {
      Item next;
      next.s = item.s + b;
      if (item.m) next.m = item.m->advance(std::string_view(&b, 1));
      switch (item.lex) {
        case out: next.lex = b == '"' ? in : out; break;
        case in: next.lex = b == '"' ? out : b == '\\' ? esc : in; break;
        case esc: next.lex = b == 'u' ? hex0 : in; break;
        case hex3: next.lex = in; break;
        default: next.lex = static_cast<Lex>(item.lex + 1); break;
      }
      stack.push_back(std::move(next));
    }
  }
  return res;
}

}  // namespace testing
