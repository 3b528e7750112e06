// SPDX-License-Identifier: Apache-2.0
#include "ember/wire/message.h"

#include <cstdio>
#include <random>

namespace ember::wire {

namespace {

constexpr const char* kNames[] = {"reload", "chat_completion", "chunk", "done", "error", "interrupt", "init_progress"};

[[noreturn]] void bad(const std::string& what) { throw Error(Errc::invalid_request, "wire message: " + what); }

void need_string(const Json& p, const char* key) {
  if (!p.contains(key) || !p[key].is_string()) bad(std::string("payload.") + key + " must be a string");
}

void only(const Json& p, std::initializer_list<const char*> keys) {
  for (const auto& [k, v] : p.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) bad("unknown payload field '" + k + "'");
  }
}

}  // namespace

std::string_view kind_name(Kind k) { return kNames[static_cast<int>(k)]; }

std::optional<Kind> kind_from_name(std::string_view name) {
  for (int i = 0; i < 7; ++i)
    if (name == kNames[i]) return static_cast<Kind>(i);
  return std::nullopt;
}

bool from_frontend(Kind k) { return k == Kind::reload || k == Kind::chat_completion || k == Kind::interrupt; }

WireMessage WireMessage::from_json(const Json& j) {
  if (!j.is_object()) bad("not an object");
  for (const auto& [k, v] : j.items())
    if (k != "kind" && k != "request_id" && k != "payload") bad("unknown field '" + k + "'");
  if (!j.contains("kind") || !j["kind"].is_string()) bad("kind must be a string");
  const auto kind = kind_from_name(j["kind"].get<std::string>());
  if (!kind) bad("unknown kind '" + j["kind"].get<std::string>() + "'");
  if (!j.contains("request_id") || !j["request_id"].is_string()) bad("request_id must be a string");
  if (!j.contains("payload")) bad("missing payload");

  WireMessage m;
  m.kind = *kind;
  m.request_id = j["request_id"].get<std::string>();
  m.payload = j["payload"];
  const Json& p = m.payload;
  switch (m.kind) {
    case Kind::reload:
      if (!p.is_object()) bad("reload payload must be an object");
      only(p, {"model_id", "source"});
      need_string(p, "model_id");
      need_string(p, "source");
      break;
    case Kind::chat_completion:
      break;
    case Kind::chunk:
      engine::ChatChunk::from_json(p);
      break;
    case Kind::done:
      if (!p.is_object() || !p.empty()) bad("done payload must be {}");
      break;
    case Kind::error:
      if (!p.is_object()) bad("error payload must be an object");
      only(p, {"code", "message"});
      need_string(p, "code");
      need_string(p, "message");
      break;
    case Kind::interrupt:
      if (!p.is_object()) bad("interrupt payload must be an object");
      only(p, {"target"});
      need_string(p, "target");
      break;
    case Kind::init_progress: {
      if (!p.is_object()) bad("init_progress payload must be an object");
      only(p, {"progress", "text"});
      if (!p.contains("progress") || !p["progress"].is_number()) bad("payload.progress must be a number");
      const double f = p["progress"].get<double>();
      if (!(f >= 0 && f <= 1)) bad("payload.progress must be within [0, 1]");
      need_string(p, "text");
      break;
    }
  }
  return m;
}

Json WireMessage::to_json() const {
  Json j;
  j["kind"] = std::string(kind_name(kind));
  j["request_id"] = request_id;
  j["payload"] = payload;
  return j;
}

WireMessage WireMessage::decode(std::string_view line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::parse_error& e) {
    bad(std::string("not JSON: ") + e.what());
  }
  return from_json(j);
}

WireMessage reload_message(const std::string& request_id, const std::string& model_id, const std::string& source) {
  return {Kind::reload, request_id, Json{{"model_id", model_id}, {"source", source}}};
}

WireMessage chat_message(const std::string& request_id, const Json& request) {
  return {Kind::chat_completion, request_id, request};
}

WireMessage interrupt_message(const std::string& request_id, const std::string& target) {
  return {Kind::interrupt, request_id, Json{{"target", target}}};
}

WireMessage chunk_message(const std::string& request_id, const engine::ChatChunk& chunk) {
  return {Kind::chunk, request_id, chunk.to_json()};
}

WireMessage done_message(const std::string& request_id) { return {Kind::done, request_id, Json::object()}; }

WireMessage error_message(const std::string& request_id, std::string_view code, const std::string& message) {
  return {Kind::error, request_id, Json{{"code", std::string(code)}, {"message", message}}};
}

WireMessage progress_message(const std::string& request_id, double progress, const std::string& text) {
  return {Kind::init_progress, request_id, Json{{"progress", progress}, {"text", text}}};
}

std::string new_uuid() {
  thread_local std::mt19937_64 rng(std::random_device{}() ^ (uint64_t(std::random_device{}()) << 32));
  uint64_t hi = rng(), lo = rng();
  hi = (hi & ~0xF000ull) | 0x4000ull;                           // version 4
  lo = (lo & ~(0xC000ull << 48)) | (0x8000ull << 48);           // variant 10
  char buf[37];
  std::snprintf(buf, sizeof buf, "%08x-%04x-%04x-%04x-%012llx", unsigned(hi >> 32), unsigned(hi >> 16 & 0xFFFF),
                unsigned(hi & 0xFFFF), unsigned(lo >> 48), static_cast<unsigned long long>(lo & 0xFFFFFFFFFFFFull));
  return buf;
}

}  // namespace ember::wire
