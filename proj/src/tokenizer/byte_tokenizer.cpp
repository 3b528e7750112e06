// SPDX-License-Identifier: Apache-2.0
#include "ember/tokenizer/byte_tokenizer.h"

#include "json.hpp"

#include "ember/error.h"
#include "ember/utf8.h"

namespace ember::tokenizer {

ByteTokenizer::ByteTokenizer(uint32_t vocab_size, uint32_t bos_id, uint32_t eos_id)
    : vocab_size_(vocab_size), bos_id_(bos_id), eos_id_(eos_id) {
  if (bos_id < 256 || eos_id < 256 || bos_id == eos_id || bos_id >= vocab_size ||
      eos_id >= vocab_size) {
    throw Error(Errc::invalid_artifact, "byte tokenizer needs distinct specials at ids >= 256 and < vocab_size");
  }
  bytes_.resize(vocab_size);
  for (uint32_t b = 0; b < 256; ++b) bytes_[b] = std::string(1, static_cast<char>(b));
}

ByteTokenizer ByteTokenizer::from_json(std::string_view text, uint32_t vocab_size) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_artifact, std::string("tokenizer.json: ") + e.what());
  }
  if (!j.is_object() || j.value("type", "") != "byte") {
    throw Error(Errc::invalid_artifact, "tokenizer.json: only type \"byte\" is supported");
  }
  try {
    return ByteTokenizer(vocab_size, j.at("bos_id").get<uint32_t>(), j.at("eos_id").get<uint32_t>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_artifact, std::string("tokenizer.json: ") + e.what());
  }
}

std::string ByteTokenizer::to_json() const {
  nlohmann::ordered_json j;
  j["type"] = "byte";
  j["bos_id"] = bos_id_;
  j["eos_id"] = eos_id_;
  return j.dump();
}

void ByteTokenizer::check(uint32_t id) const {
  if (id >= vocab_size_) {
    throw Error(Errc::id_out_of_range,
                "token id " + std::to_string(id) + " >= vocab size " + std::to_string(vocab_size_));
  }
}

std::vector<uint32_t> ByteTokenizer::encode(std::string_view text) const {
  std::vector<uint32_t> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

std::string ByteTokenizer::decode(std::span<const uint32_t> ids) const {
  std::string out;
  for (uint32_t id : ids) out += token_bytes(id);
  return out;
}

std::string_view ByteTokenizer::token_bytes(uint32_t id) const {
  check(id);
  return bytes_[id];
}

std::optional<std::string> DecodeStream::push(uint32_t id) {
  pending_ += tok_->token_bytes(id);
  size_t pos = 0;
  while (pos < pending_.size()) {
    const auto s = utf8::scan(pending_, pos);
    if (s.kind == utf8::SeqKind::incomplete) break;
    pos += s.kind == utf8::SeqKind::complete ? s.length : 1;
  }
  if (pos == 0) return std::nullopt;
  std::string out = pending_.substr(0, pos);
  pending_.erase(0, pos);
  return out;
}

std::string DecodeStream::finish() {
  std::string out;
  out.swap(pending_);
  return out;
}

}  // namespace ember::tokenizer
