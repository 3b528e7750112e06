// SPDX-License-Identifier: Apache-2.0
// OpenAI-compatible HTTP surface:
//   POST /v1/chat/completions  ChatRequest; stream=true answers with
//                              server-sent events ending in "data: [DONE]"
//   GET  /v1/models            {"data":[{"id":...}, ...]}
// Status codes: 400 invalid request or schema, 404 unknown model, 503 while a
// load is in flight, 500 for generation failures of a non-streamed request.
#pragma once

#include <memory>
#include <string>
#include <thread>

#include "ember/engine/engine.h"

namespace httplib {
class Server;
}

namespace ember::wire {

struct HttpOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
};

class HttpServer {
 public:
  HttpServer(engine::Engine& engine, const HttpOptions& options);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  int port() const { return port_; }
  // Stops accepting and waits for the listener thread.
  void stop();
  // Blocks until stop() is called from elsewhere.
  void wait();

 private:
  engine::Engine& engine_;
  std::unique_ptr<httplib::Server> server_;
  int port_ = 0;
  std::thread listener_;
};

// Throws Internal when the address cannot be bound.
std::unique_ptr<HttpServer> serve_http(engine::Engine& engine, const HttpOptions& options);

int http_status(std::string_view error_code);

}  // namespace ember::wire
