// SPDX-License-Identifier: Apache-2.0
// The envelope exchanged between a frontend handle and a backend worker,
// one JSON object per line.
#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "ember/engine/protocol.h"

namespace ember::wire {

using engine::Json;

// reload, chat_completion and interrupt go frontend to backend; the rest
// come back. Every frontend message is answered under its request_id by
// zero or more init_progress/chunk messages and then one done or error.
enum class Kind { reload, chat_completion, chunk, done, error, interrupt, init_progress };

std::string_view kind_name(Kind k);
std::optional<Kind> kind_from_name(std::string_view name);
bool from_frontend(Kind k);

struct WireMessage {
  Kind kind = Kind::done;
  std::string request_id;
  Json payload = Json::object();

  // Throws InvalidRequest when the envelope or a payload with a fixed shape
  // is malformed. chat_completion payloads are checked by the engine.
  static WireMessage from_json(const Json& j);
  Json to_json() const;

  // One NDJSON line without the trailing newline.
  std::string encode() const { return to_json().dump(); }
  static WireMessage decode(std::string_view line);

  friend bool operator==(const WireMessage&, const WireMessage&) = default;
};

WireMessage reload_message(const std::string& request_id, const std::string& model_id, const std::string& source);
WireMessage chat_message(const std::string& request_id, const Json& request);
WireMessage interrupt_message(const std::string& request_id, const std::string& target);
WireMessage chunk_message(const std::string& request_id, const engine::ChatChunk& chunk);
WireMessage done_message(const std::string& request_id);
WireMessage error_message(const std::string& request_id, std::string_view code, const std::string& message);
WireMessage progress_message(const std::string& request_id, double progress, const std::string& text);

// Random version-4 UUID in the canonical 8-4-4-4-12 form.
std::string new_uuid();

}  // namespace ember::wire
