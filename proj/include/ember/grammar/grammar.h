// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ember::tokenizer {
class ByteTokenizer;
}

namespace ember::grammar {

enum class NodeKind : uint8_t { any, object, array, string, integer, number, boolean, null, enumeration };

struct Node {
  NodeKind kind = NodeKind::any;
  bool open = false;              // object: any keys, any values (json_object mode)
  std::vector<std::string> keys;  // object: property names in schema order
  std::vector<int> children;      // object: one per key; array: {items}
  std::vector<bool> required;     // object: one per key
  std::vector<std::string> values;  // enumeration: allowed decoded strings
  uint32_t min_len = 0;           // shortest serialization in bytes
};

// A compiled JSON-schema subset. Immutable; shared by every matcher over it.
class Grammar {
 public:
  // Accepts type (object, array, string, integer, number, boolean, null),
  // properties, required, items, enum of strings, and the annotations title,
  // description, $schema, additionalProperties:false. Anything else raises
  // UnsupportedSchema naming the keyword.
  static std::shared_ptr<const Grammar> from_schema(std::string_view schema_json);
  // Any JSON document whose root is an object.
  static std::shared_ptr<const Grammar> json_object();

  const Node& node(int i) const { return nodes_[static_cast<size_t>(i)]; }
  int root() const { return root_; }
  int any_node() const { return 0; }
  int any_object_node() const { return 1; }
  int any_array_node() const { return 2; }

 private:
  Grammar();
  friend class SchemaCompiler;

  std::vector<Node> nodes_;
  int root_ = 0;
};

class TokenMask {
 public:
  explicit TokenMask(uint32_t vocab_size = 0) : size_(vocab_size), bits_((vocab_size + 63) / 64, 0) {}
  bool allowed(uint32_t id) const { return id < size_ && (bits_[id / 64] >> (id % 64) & 1u) != 0; }
  void set(uint32_t id) { bits_[id / 64] |= uint64_t{1} << (id % 64); }
  uint32_t size() const { return size_; }
  uint32_t count() const;
  friend bool operator==(const TokenMask&, const TokenMask&) = default;

 private:
  uint32_t size_;
  std::vector<uint64_t> bits_;
};

enum class FrameKind : uint8_t { root, object, array, string, number, literal };

struct Frame {
  FrameKind kind = FrameKind::root;
  uint8_t phase = 0;
  int node = -1;           // schema node this frame recognizes
  uint32_t next = 0;       // object: first property not yet used; literal: position
  int current = -1;        // object: property whose value is in progress
  uint8_t literal = 0;     // 0 true, 1 false, 2 null
  bool constrained = false;  // string: must decode to one of a candidate set
  bool key = false;          // string: an object key
  uint8_t utf8_need = 0;
  uint8_t utf8_lo = 0x80, utf8_hi = 0xBF;
  uint8_t hex_digits = 0;
  uint32_t hex = 0;
  uint32_t high = 0;  // pending high surrogate
  std::string decoded;  // constrained strings only
  std::string closed_key;  // set on a key frame when it completes
};

// Recognizer state: a stack of frames over the byte stream. Advancing never
// mutates; it returns a new state.
class Matcher {
 public:
  explicit Matcher(std::shared_ptr<const Grammar> grammar);

  // nullopt when some byte is rejected.
  std::optional<Matcher> advance(std::string_view bytes) const;
  // Throws TokenRejected when the token's bytes are not accepted. eos is
  // accepted only in a terminated state and leaves the state unchanged.
  Matcher accept_token(uint32_t id, const tokenizer::ByteTokenizer& tok) const;

  // The bytes so far form a complete document.
  bool is_terminated() const;
  // Fewest further bytes that complete a document (0 when terminated).
  uint32_t min_remaining_bytes() const;

  // allowed(id) iff every byte of id is accepted from here; eos iff
  // terminated; specials and padding never. With `budget`, a token is also
  // dropped when the document could no longer be finished within budget-1
  // further byte tokens after it. Throws DeadEndGrammar if nothing is allowed.
  TokenMask compute_mask(const tokenizer::ByteTokenizer& tok,
                         std::optional<uint32_t> budget = std::nullopt) const;

  size_t depth() const { return stack_.size(); }

 private:
  bool feed(uint8_t b);
  bool start_value(int node, uint8_t b);
  void child_done(const Frame& child);
  bool step_string(Frame& f, uint8_t b);
  bool string_append(Frame& f, std::string_view bytes);
  bool hex_prefix_viable(const Frame& f) const;
  uint32_t string_cost(const Frame& f, const Frame* parent) const;
  uint32_t after_value_cost(const Node& obj, uint32_t next) const;

  std::shared_ptr<const Grammar> g_;
  std::vector<Frame> stack_;
};

}  // namespace ember::grammar
