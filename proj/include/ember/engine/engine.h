// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "ember/engine/protocol.h"
#include "ember/engine/sampler.h"
#include "ember/gpu/device.h"
#include "ember/model/model.h"

namespace ember::engine {

using ChunkFn = std::function<void(const ChatChunk&)>;
using ProgressFn = std::function<void(const model::LoadProgress&)>;
// Null on success.
using LoadDoneFn = std::function<void(const Error*)>;

struct EngineOptions {
  // Seconds on a monotonic clock; tests inject a fake one to make usage
  // rates reproducible.
  std::function<double()> clock;
  // Prompt tokens per prefill call; interrupts are honored between calls.
  uint32_t prefill_chunk = 128;
  // KV pages per layer for each loaded model (0: the loader's default).
  uint32_t kv_pages = 0;
  // Called on the executor after each prefill call with the tokens done so
  // far. Test hook for interrupt timing.
  std::function<void(const std::string& request_id, uint32_t done, uint32_t total)> on_prefill;
};

// Owns models and runs every load and generation on one executor thread, in
// FIFO order. All methods may be called from any thread; callbacks run on
// the executor.
class Engine {
 public:
  explicit Engine(std::shared_ptr<gpu::Device> device, EngineOptions options = {});
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  void load(std::string model_id, std::string source, ProgressFn progress, LoadDoneFn done);
  // Exactly one terminal chunk is emitted per call. A request that fails
  // validation gets a single error chunk.
  void chat_completion(std::string request_id, ChatRequest request, ChunkFn emit);
  void chat_completion(std::string request_id, const Json& request, ChunkFn emit);
  // Halts `request_id` at its next step boundary with finish_reason "stop".
  // Unknown or finished ids are ignored.
  void interrupt(std::string request_id);

  // Blocking conveniences; load_sync rethrows the load error.
  void load_sync(const std::string& model_id, const std::string& source, ProgressFn progress = {});
  std::vector<ChatChunk> chat_sync(const std::string& request_id, const ChatRequest& request);

  std::vector<std::string> model_ids() const;
  bool has_model(const std::string& model_id) const;
  bool loading() const { return loads_in_flight_.load() > 0; }
  gpu::BackendKind backend() const { return backend_; }
  std::string adapter_name() const { return adapter_; }

 private:
  struct Command {
    enum Kind { load, chat, interrupt, shutdown };
    Kind kind = shutdown;
    std::string id;  // model id for load, request id otherwise
    std::string source;
    ProgressFn progress;
    LoadDoneFn done;
    std::optional<ChatRequest> request;
    std::string invalid;  // validation message when the request JSON was rejected
    std::string model_hint;
    ChunkFn emit;
    bool cancelled = false;

    static Command make(Kind k, std::string id) {
      Command c;
      c.kind = k;
      c.id = std::move(id);
      return c;
    }
  };

  void push(Command c);
  void run();
  void do_load(Command& c);
  void do_chat(Command& c);
  // Drains queued interrupts; true when one targets `active`.
  bool poll_interrupts(const std::string& active);
  void apply_interrupt(const std::string& target, const std::string& active, bool& hit);
  double now() const;

  std::shared_ptr<gpu::Device> device_;
  EngineOptions options_;
  gpu::BackendKind backend_;
  std::string adapter_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Command> queue_;
  std::vector<std::string> published_ids_;  // guarded by mu_
  std::atomic<int> loads_in_flight_{0};

  // Executor-only state.
  std::map<std::string, std::unique_ptr<model::Model>> models_;
  std::thread thread_;
};

}  // namespace ember::engine
