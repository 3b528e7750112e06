// SPDX-License-Identifier: Apache-2.0
#include "ember/wire/http.h"

#include <condition_variable>
#include <deque>
#include <future>

#include "ember/wire/message.h"
#include "httplib.h"

namespace ember::wire {

using engine::ChatChunk;
using engine::ChatRequest;

namespace {

void reply_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  res.status = status;
  res.set_content(Json{{"error", {{"code", std::string(code)}, {"message", message}}}}.dump(), "application/json");
}

// SSE frames produced on the engine executor, drained by the HTTP thread.
struct EventQueue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::string> frames;
  bool finished = false;
};

}  // namespace

int http_status(std::string_view error_code) {
  if (error_code == "invalid_request" || error_code == "unsupported_schema") return 400;
  if (error_code == "model_not_found") return 404;
  return 500;
}

HttpServer::HttpServer(engine::Engine& engine, const HttpOptions& options)
    : engine_(engine), server_(std::make_unique<httplib::Server>()) {
  server_->Get("/v1/models", [this](const httplib::Request&, httplib::Response& res) {
    Json data = Json::array();
    for (const auto& id : engine_.model_ids()) data.push_back({{"id", id}});
    res.set_content(Json{{"data", data}}.dump(), "application/json");
  });

  server_->Post("/v1/chat/completions", [this](const httplib::Request& http_req, httplib::Response& res) {
    if (engine_.loading()) {
      reply_error(res, 503, "loading", "a model load is in progress");
      return;
    }
    Json body;
    ChatRequest req;
    try {
      body = Json::parse(http_req.body);
      req = ChatRequest::from_json(body);
    } catch (const Json::parse_error& e) {
      reply_error(res, 400, errc_name(Errc::invalid_request), std::string("body is not JSON: ") + e.what());
      return;
    } catch (const Error& e) {
      reply_error(res, 400, errc_name(e.code()), e.what());
      return;
    }
    if (!engine_.has_model(req.model)) {
      reply_error(res, 404, errc_name(Errc::model_not_found), "no model loaded as '" + req.model + "'");
      return;
    }
    const std::string id = new_uuid();

    if (!req.stream) {
      auto result = std::make_shared<std::promise<ChatChunk>>();
      auto fut = result->get_future();
      engine_.chat_completion(id, std::move(req), [result](const ChatChunk& c) {
        if (c.terminal()) result->set_value(c);
      });
      const ChatChunk c = fut.get();
      res.status = c.error ? http_status(c.error->code) : 200;
      res.set_content(c.to_json().dump(), "application/json");
      return;
    }

    auto q = std::make_shared<EventQueue>();
    engine_.chat_completion(id, std::move(req), [q](const ChatChunk& c) {
      {
        std::lock_guard lk(q->mu);
        q->frames.push_back("data: " + c.to_json().dump() + "\n\n");
        if (c.terminal()) {
          q->frames.push_back("data: [DONE]\n\n");
          q->finished = true;
        }
      }
      q->cv.notify_all();
    });
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, q, id](size_t, httplib::DataSink& sink) {
          std::unique_lock lk(q->mu);
          q->cv.wait(lk, [&] { return !q->frames.empty() || q->finished; });
          while (!q->frames.empty()) {
            const std::string frame = std::move(q->frames.front());
            q->frames.pop_front();
            lk.unlock();
            if (!sink.write(frame.data(), frame.size())) {
              engine_.interrupt(id);
              return false;
            }
            lk.lock();
          }
          if (q->finished) sink.done();
          return true;
        },
        [this, id](bool success) {
          if (!success) engine_.interrupt(id);
        });
  });

  port_ = options.port == 0 ? server_->bind_to_any_port(options.host)
                            : (server_->bind_to_port(options.host, options.port) ? options.port : -1);
  if (port_ <= 0)
    throw Error(Errc::internal, "cannot listen on " + options.host + ":" + std::to_string(options.port));
  listener_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::stop() {
  server_->stop();
  if (listener_.joinable()) listener_.join();
}

void HttpServer::wait() {
  if (listener_.joinable()) listener_.join();
}

std::unique_ptr<HttpServer> serve_http(engine::Engine& engine, const HttpOptions& options) {
  return std::make_unique<HttpServer>(engine, options);
}

}  // namespace ember::wire
