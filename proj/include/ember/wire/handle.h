// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <string>
#include <thread>

#include "ember/engine/protocol.h"
#include "ember/wire/channel.h"
#include "ember/wire/message.h"

namespace ember::wire {

struct InitProgress {
  double progress = 0;  // fraction in [0, 1]
  std::string text;
};

using ChunkFn = std::function<void(const engine::ChatChunk&)>;
using InitProgressFn = std::function<void(const InitProgress&)>;

// Frontend side of the worker split. Holds no model state: it serializes
// requests onto the channel and routes replies by request_id. Callable from
// any thread; callbacks run on the handle's dispatcher thread, in order per
// request. The returned futures resolve after done and rethrow an error
// message as ember::Error.
class EngineHandle {
 public:
  explicit EngineHandle(Channel& channel);
  ~EngineHandle();  // closes the channel
  EngineHandle(const EngineHandle&) = delete;
  EngineHandle& operator=(const EngineHandle&) = delete;

  // An empty request_id is replaced by a fresh UUID.
  std::future<void> reload(const std::string& model_id, const std::string& source, InitProgressFn on_progress = {},
                           const std::string& request_id = "");
  std::future<void> chat(const std::string& request_id, const engine::Json& request, ChunkFn on_chunk);
  std::future<void> chat(const std::string& request_id, const engine::ChatRequest& request, ChunkFn on_chunk) {
    return chat(request_id, request.to_json(), std::move(on_chunk));
  }
  // Asks the backend to halt `target`; resolves once the backend has it.
  std::future<void> interrupt(const std::string& target, const std::string& request_id = "");

  bool connected() const;

 private:
  struct Pending {
    std::promise<void> done;
    ChunkFn on_chunk;
    InitProgressFn on_progress;
  };

  std::future<void> send(const WireMessage& m, Pending p);
  void dispatch();
  void fail_all(Errc code, const std::string& message);

  Channel& channel_;
  mutable std::mutex mu_;
  std::map<std::string, Pending> pending_;
  bool closed_ = false;
  std::thread dispatcher_;
};

}  // namespace ember::wire
