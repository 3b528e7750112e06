// SPDX-License-Identifier: Apache-2.0
// OpenAI-shaped request and chunk types, and their JSON forms.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ember/error.h"
#include "ember/tokenizer/byte_tokenizer.h"
#include "json.hpp"

namespace ember::engine {

// Insertion-ordered, so schema property order survives a round trip.
using Json = nlohmann::ordered_json;

enum class Role { system, user, assistant };

std::string_view role_name(Role r);

struct Message {
  Role role = Role::user;
  std::string content;

  friend bool operator==(const Message&, const Message&) = default;
};

enum class FormatType { text, json_object, json_schema };

struct ResponseFormat {
  FormatType type = FormatType::text;
  std::optional<Json> schema;  // json_schema only

  friend bool operator==(const ResponseFormat&, const ResponseFormat&) = default;
};

struct ChatRequest {
  std::string model;
  std::vector<Message> messages;
  bool stream = false;
  uint32_t max_tokens = 128;
  float temperature = 1.0f;
  float top_p = 1.0f;
  std::vector<std::string> stop;  // at most 4, none empty
  std::optional<int64_t> seed;
  ResponseFormat response_format;
  // Extension: eos is masked out so generation always runs to max_tokens.
  // Used by bench; has no effect under a grammar, which needs eos to finish.
  bool ignore_eos = false;

  // Throws InvalidRequest on unknown fields, wrong types or out-of-range values.
  static ChatRequest from_json(const Json& j);
  Json to_json() const;

  friend bool operator==(const ChatRequest&, const ChatRequest&) = default;
};

enum class FinishReason { stop, length, error };

std::string_view finish_reason_name(FinishReason r);

struct Usage {
  uint32_t prompt_tokens = 0;
  uint32_t completion_tokens = 0;
  double decode_tokens_per_s = 0;
  // Extension; prefill throughput, reported apart from decode.
  double prefill_tokens_per_s = 0;

  friend bool operator==(const Usage&, const Usage&) = default;
};

struct ErrorInfo {
  std::string code;
  std::string message;

  friend bool operator==(const ErrorInfo&, const ErrorInfo&) = default;
};

// One streamed delta, or with `message` set the whole non-streaming
// response. A chunk with finish_reason is terminal and is the only one that
// may carry usage or error.
struct ChatChunk {
  std::string id;
  std::string model;
  std::string content;
  std::optional<FinishReason> finish_reason;
  std::optional<Usage> usage;
  std::optional<ErrorInfo> error;
  bool message = false;

  bool terminal() const { return finish_reason.has_value(); }

  Json to_json() const;
  static ChatChunk from_json(const Json& j);

  friend bool operator==(const ChatChunk&, const ChatChunk&) = default;
};

ChatChunk error_chunk(std::string id, std::string model, Errc code, const std::string& message);

// Prompt ids for `messages` under a per-message template ({role}, {content};
// a leading "<s>" is the bos token), followed by the template's assistant
// header so the model continues as the assistant.
std::vector<uint32_t> render_prompt(const std::vector<Message>& messages, std::string_view chat_template,
                                    const tokenizer::ByteTokenizer& tok);

}  // namespace ember::engine
