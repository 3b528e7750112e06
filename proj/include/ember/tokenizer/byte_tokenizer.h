// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ember::tokenizer {

// Ids 0..255 are raw bytes, then bos and eos; every id above that up to
// vocab_size is padding and decodes to nothing.
class ByteTokenizer {
 public:
  explicit ByteTokenizer(uint32_t vocab_size = 512, uint32_t bos_id = 256, uint32_t eos_id = 257);

  // Parses tokenizer.json ({"type":"byte","bos_id":256,"eos_id":257}).
  static ByteTokenizer from_json(std::string_view text, uint32_t vocab_size);
  std::string to_json() const;

  std::vector<uint32_t> encode(std::string_view text) const;
  std::string decode(std::span<const uint32_t> ids) const;

  // Bytes a single token contributes to the output ("" for specials and pad).
  std::string_view token_bytes(uint32_t id) const;

  uint32_t vocab_size() const { return vocab_size_; }
  uint32_t bos_id() const { return bos_id_; }
  uint32_t eos_id() const { return eos_id_; }

 private:
  void check(uint32_t id) const;

  uint32_t vocab_size_;
  uint32_t bos_id_;
  uint32_t eos_id_;
  std::vector<std::string> bytes_;
};

// Incremental detokenizer for one generation. Holds back the bytes of a
// UTF-8 sequence until it is complete; bytes that can never complete one are
// released as-is, so the fragments always concatenate to decode(ids).
class DecodeStream {
 public:
  explicit DecodeStream(const ByteTokenizer& tok) : tok_(&tok) {}

  std::optional<std::string> push(uint32_t id);
  // Whatever is still held back (an unfinished sequence at end of output).
  std::string finish();

 private:
  const ByteTokenizer* tok_;
  std::string pending_;
};

}  // namespace ember::tokenizer
