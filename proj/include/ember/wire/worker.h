// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <condition_variable>
#include <mutex>
#include <set>
#include <string>
#include <thread>

#include "ember/engine/engine.h"
#include "ember/wire/channel.h"
#include "ember/wire/message.h"

namespace ember::wire {

// Backend side of the worker split: reads WireMessages from the channel and
// drives the engine, relaying every chunk, progress event and outcome.
class BackendWorker {
 public:
  BackendWorker(engine::Engine& engine, Channel& channel);
  // Closes the channel, interrupts what is still running, and waits for the
  // engine to finish with it.
  ~BackendWorker();
  BackendWorker(const BackendWorker&) = delete;
  BackendWorker& operator=(const BackendWorker&) = delete;

 private:
  void read_loop();
  void handle(const WireMessage& m);
  void send(const WireMessage& m);
  void finished(const std::string& request_id);

  engine::Engine& engine_;
  Channel& channel_;
  std::mutex mu_;
  std::condition_variable idle_;
  std::set<std::string> in_flight_;
  std::thread reader_;
};

}  // namespace ember::wire
