// SPDX-License-Identifier: Apache-2.0
#include "ember/engine/protocol.h"

#include <cmath>
#include <limits>
#include <set>

namespace ember::engine {

using json = Json;

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error(Errc::invalid_request, what); }

void only_fields(const json& j, const std::set<std::string>& allowed, const char* where) {
  if (!j.is_object()) bad(std::string(where) + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) bad(std::string("unknown field '") + k + "' in " + where);
}

Role parse_role(const json& v) {
  if (!v.is_string()) bad("role must be a string");
  const auto s = v.get<std::string>();
  if (s == "system") return Role::system;
  if (s == "user") return Role::user;
  if (s == "assistant") return Role::assistant;
  bad("unknown role '" + s + "'");
}

double number(const json& v, const char* name) {
  if (!v.is_number()) bad(std::string(name) + " must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) bad(std::string(name) + " must be finite");
  return d;
}

std::optional<FinishReason> parse_finish(const json& v) {
  if (v.is_null()) return std::nullopt;
  const auto s = v.get<std::string>();
  if (s == "stop") return FinishReason::stop;
  if (s == "length") return FinishReason::length;
  if (s == "error") return FinishReason::error;
  bad("unknown finish_reason '" + s + "'");
}

}  // namespace

std::string_view role_name(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

std::string_view finish_reason_name(FinishReason r) {
  switch (r) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "error";
}

ChatRequest ChatRequest::from_json(const json& j) {
  only_fields(j,
              {"model", "messages", "stream", "max_tokens", "temperature", "top_p", "stop", "seed",
               "response_format", "ignore_eos"},
              "request");
  ChatRequest r;
  if (!j.contains("model") || !j["model"].is_string()) bad("model must be a string");
  r.model = j["model"].get<std::string>();

  if (!j.contains("messages") || !j["messages"].is_array()) bad("messages must be an array");
  for (const auto& m : j["messages"]) {
    only_fields(m, {"role", "content"}, "message");
    if (!m.contains("role")) bad("message without role");
    if (!m.contains("content") || !m["content"].is_string()) bad("message content must be a string");
    r.messages.push_back({parse_role(m["role"]), m["content"].get<std::string>()});
  }
  if (r.messages.empty()) bad("messages must not be empty");

  if (j.contains("stream")) {
    if (!j["stream"].is_boolean()) bad("stream must be a boolean");
    r.stream = j["stream"].get<bool>();
  }
  if (j.contains("max_tokens")) {
    const auto& v = j["max_tokens"];
    if (!v.is_number_integer() || v.get<int64_t>() < 1 ||
        v.get<int64_t>() > std::numeric_limits<uint32_t>::max())
      bad("max_tokens must be a positive integer");
    r.max_tokens = static_cast<uint32_t>(v.get<int64_t>());
  }
  if (j.contains("temperature")) {
    const double t = number(j["temperature"], "temperature");
    if (t < 0) bad("temperature must be >= 0");
    r.temperature = static_cast<float>(t);
  }
  if (j.contains("top_p")) {
    const double p = number(j["top_p"], "top_p");
    if (!(p > 0 && p <= 1)) bad("top_p must be in (0, 1]");
    r.top_p = static_cast<float>(p);
  }
  if (j.contains("stop")) {
    const auto& v = j["stop"];
    if (v.is_string()) {
      r.stop.push_back(v.get<std::string>());
    } else if (v.is_array()) {
      for (const auto& s : v) {
        if (!s.is_string()) bad("stop entries must be strings");
        r.stop.push_back(s.get<std::string>());
      }
    } else if (!v.is_null()) {
      bad("stop must be a string or an array of strings");
    }
    if (r.stop.size() > 4) bad("at most 4 stop strings");
    for (const auto& s : r.stop)
      if (s.empty()) bad("stop strings must not be empty");
  }
  if (j.contains("seed") && !j["seed"].is_null()) {
    const auto& v = j["seed"];
    if (v.is_number_unsigned() && v.get<uint64_t>() > uint64_t(std::numeric_limits<int64_t>::max()))
      bad("seed out of range");
    if (!v.is_number_integer()) bad("seed must be an integer");
    r.seed = v.get<int64_t>();
  }
  if (j.contains("response_format")) {
    const auto& f = j["response_format"];
    only_fields(f, {"type", "schema"}, "response_format");
    if (!f.contains("type") || !f["type"].is_string()) bad("response_format.type must be a string");
    const auto t = f["type"].get<std::string>();
    if (t == "text") r.response_format.type = FormatType::text;
    else if (t == "json_object") r.response_format.type = FormatType::json_object;
    else if (t == "json_schema") r.response_format.type = FormatType::json_schema;
    else bad("unknown response_format.type '" + t + "'");
    if (f.contains("schema")) {
      if (r.response_format.type != FormatType::json_schema)
        bad("response_format.schema is only allowed with type json_schema");
      r.response_format.schema = f["schema"];
    } else if (r.response_format.type == FormatType::json_schema) {
      bad("response_format type json_schema needs a schema");
    }
  }
  if (j.contains("ignore_eos")) {
    if (!j["ignore_eos"].is_boolean()) bad("ignore_eos must be a boolean");
    r.ignore_eos = j["ignore_eos"].get<bool>();
  }
  return r;
}

json ChatRequest::to_json() const {
  json j;
  j["model"] = model;
  j["messages"] = json::array();
  for (const auto& m : messages)
    j["messages"].push_back({{"role", std::string(role_name(m.role))}, {"content", m.content}});
  j["stream"] = stream;
  j["max_tokens"] = max_tokens;
  j["temperature"] = temperature;
  j["top_p"] = top_p;
  if (!stop.empty()) j["stop"] = stop;
  if (seed) j["seed"] = *seed;
  if (response_format.type != FormatType::text || response_format.schema) {
    static constexpr const char* names[] = {"text", "json_object", "json_schema"};
    json f = {{"type", names[static_cast<int>(response_format.type)]}};
    if (response_format.schema) f["schema"] = *response_format.schema;
    j["response_format"] = f;
  }
  if (ignore_eos) j["ignore_eos"] = true;
  return j;
}

json ChatChunk::to_json() const {
  json choice = {{"index", 0}};
  if (message) choice["message"] = {{"role", "assistant"}, {"content", content}};
  else choice["delta"] = {{"content", content}};
  choice["finish_reason"] = finish_reason ? json(std::string(finish_reason_name(*finish_reason))) : json();
  json j = {{"id", id},
            {"object", message ? "chat.completion" : "chat.completion.chunk"},
            {"model", model},
            {"choices", json::array({choice})}};
  if (usage) {
    j["usage"] = {{"prompt_tokens", usage->prompt_tokens},
                  {"completion_tokens", usage->completion_tokens},
                  {"decode_tokens_per_s", usage->decode_tokens_per_s},
                  {"prefill_tokens_per_s", usage->prefill_tokens_per_s}};
  }
  if (error) j["error"] = {{"code", error->code}, {"message", error->message}};
  return j;
}

ChatChunk ChatChunk::from_json(const json& j) {
  try {
    ChatChunk c;
    c.id = j.at("id").get<std::string>();
    c.model = j.at("model").get<std::string>();
    const auto object = j.at("object").get<std::string>();
    if (object != "chat.completion" && object != "chat.completion.chunk") bad("unknown object '" + object + "'");
    c.message = object == "chat.completion";
    const auto& choice = j.at("choices").at(0);
    const auto& body = choice.at(c.message ? "message" : "delta");
    if (body.contains("content")) c.content = body["content"].get<std::string>();
    c.finish_reason = parse_finish(choice.at("finish_reason"));
    if (j.contains("usage")) {
      const auto& u = j["usage"];
      Usage usage;
      usage.prompt_tokens = u.at("prompt_tokens").get<uint32_t>();
      usage.completion_tokens = u.at("completion_tokens").get<uint32_t>();
      usage.decode_tokens_per_s = u.at("decode_tokens_per_s").get<double>();
      usage.prefill_tokens_per_s = u.value("prefill_tokens_per_s", 0.0);
      c.usage = usage;
    }
    if (j.contains("error"))
      c.error = ErrorInfo{j["error"].at("code").get<std::string>(), j["error"].at("message").get<std::string>()};
    return c;
  } catch (const json::exception& e) {
    bad(std::string("malformed chunk: ") + e.what());
  }
}

ChatChunk error_chunk(std::string id, std::string model, Errc code, const std::string& message) {
  ChatChunk c;
  c.id = std::move(id);
  c.model = std::move(model);
  c.finish_reason = FinishReason::error;
  c.error = ErrorInfo{std::string(errc_name(code)), message};
  return c;
}

std::vector<uint32_t> render_prompt(const std::vector<Message>& messages, std::string_view chat_template,
                                    const tokenizer::ByteTokenizer& tok) {
  auto render = [&](std::vector<uint32_t>& ids, std::string_view role, std::string_view content, bool cut) {
    std::string text;
    for (size_t i = 0; i < chat_template.size();) {
      if (chat_template.substr(i, 6) == "{role}") {
        text += role;
        i += 6;
      } else if (chat_template.substr(i, 9) == "{content}") {
        if (cut) break;
        text += content;
        i += 9;
      } else {
        text += chat_template[i++];
      }
    }
    std::string_view body = text;
    if (body.substr(0, 3) == "<s>") {
      if (!cut) ids.push_back(tok.bos_id());
      body.remove_prefix(3);
    }
    const auto enc = tok.encode(body);
    ids.insert(ids.end(), enc.begin(), enc.end());
  };
  std::vector<uint32_t> ids;
  for (const auto& m : messages) render(ids, role_name(m.role), m.content, false);
  render(ids, "assistant", "", true);
  return ids;
}

}  // namespace ember::engine
