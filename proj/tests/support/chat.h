// SPDX-License-Identifier: Apache-2.0
// Request builders and chunk helpers shared by the engine and wire tests.
#pragma once

#include <atomic>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ember/engine/protocol.h"

namespace testing {

// Advances one second per reading, so usage rates depend only on how often
// the engine looks at the clock.
inline std::function<double()> step_clock() {
  auto n = std::make_shared<std::atomic<uint64_t>>(0);
  return [n] { return static_cast<double>(n->fetch_add(1)); };
}

inline ember::engine::ChatRequest ask(const std::string& model, const std::string& prompt,
                                      uint32_t max_tokens = 16, float temperature = 0.0f) {
  ember::engine::ChatRequest r;
  r.model = model;
  r.messages = {{ember::engine::Role::user, prompt}};
  r.max_tokens = max_tokens;
  r.temperature = temperature;
  r.seed = 1;
  return r;
}

// Content of a chunk sequence: concatenated deltas, or the message body.
inline std::string joined(const std::vector<ember::engine::ChatChunk>& chunks) {
  std::string s;
  for (const auto& c : chunks) s += c.content;
  return s;
}

// Varied sampling settings, stop strings and formats over one model.
inline ember::engine::ChatRequest random_request(std::mt19937_64& rng, const std::string& model) {
  using namespace ember::engine;
  auto pick = [&](int n) { return static_cast<int>(std::uniform_int_distribution<int>(0, n - 1)(rng)); };
  static const char* prompts[] = {"count", "hello there", "write a poem", "{\"a\":", "x", "The sky is"};
  ChatRequest r;
  r.model = model;
  r.messages.push_back({Role::user, prompts[pick(6)]});
  if (pick(3) == 0) r.messages.insert(r.messages.begin(), Message{Role::system, "be brief"});
  r.max_tokens = 1 + static_cast<uint32_t>(pick(40));
  static const float temps[] = {0.0f, 0.5f, 1.0f, 1.5f};
  r.temperature = temps[pick(4)];
  static const float tops[] = {1.0f, 0.9f, 0.5f, 0.1f};
  r.top_p = tops[pick(4)];
  r.seed = static_cast<int64_t>(rng() >> 1);
  if (pick(3) == 0) r.stop = {std::string(1, static_cast<char>('a' + pick(26))), "e "};
  if (pick(5) == 0) r.response_format.type = FormatType::json_object;
  r.stream = pick(2) == 0;
  return r;
}

}  // namespace testing
