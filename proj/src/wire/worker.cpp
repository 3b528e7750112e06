// SPDX-License-Identifier: Apache-2.0
#include "ember/wire/worker.h"

#include <algorithm>
#include <memory>

namespace ember::wire {

BackendWorker::BackendWorker(engine::Engine& engine, Channel& channel) : engine_(engine), channel_(channel) {
  reader_ = std::thread([this] { read_loop(); });
}

BackendWorker::~BackendWorker() {
  channel_.close();
  reader_.join();
  std::unique_lock lk(mu_);
  for (const auto& id : in_flight_) engine_.interrupt(id);
  idle_.wait(lk, [&] { return in_flight_.empty(); });
}

void BackendWorker::send(const WireMessage& m) { channel_.write_line(m.encode()); }

void BackendWorker::finished(const std::string& request_id) {
  std::lock_guard lk(mu_);
  in_flight_.erase(request_id);
  idle_.notify_all();
}

void BackendWorker::read_loop() {
  while (auto line = channel_.read_line()) {
    WireMessage m;
    try {
      m = WireMessage::decode(*line);
    } catch (const Error& e) {
      std::string id;
      try {
        const auto j = Json::parse(*line);
        if (j.is_object() && j.contains("request_id") && j["request_id"].is_string()) id = j["request_id"];
      } catch (...) {
      }
      send(error_message(id, errc_name(e.code()), e.what()));
      continue;
    }
    handle(m);
  }
}

void BackendWorker::handle(const WireMessage& m) {
  const std::string id = m.request_id;
  if (!from_frontend(m.kind)) {
    send(error_message(id, errc_name(Errc::invalid_request),
                       "the backend does not accept '" + std::string(kind_name(m.kind)) + "' messages"));
    return;
  }
  {
    std::lock_guard lk(mu_);
    if (!in_flight_.insert(id).second) {
      send(error_message(id, errc_name(Errc::duplicate_request_id), "request id '" + id + "' is already in flight"));
      return;
    }
  }

  switch (m.kind) {
    case Kind::reload: {
      auto last = std::make_shared<double>(0.0);
      auto progress = [this, id, last](const model::LoadProgress& p) {
        double f = p.total_bytes ? double(p.loaded_bytes) / double(p.total_bytes) : 0.0;
        f = std::clamp(std::max(f, *last), 0.0, 1.0);
        *last = f;
        send(progress_message(id, f, p.text));
      };
      engine_.load(m.payload["model_id"], m.payload["source"], progress, [this, id, last](const Error* e) {
        if (e) {
          const auto code = e->code() == Errc::duplicate_model_id ? Errc::duplicate_model_id : Errc::load_failed;
          send(error_message(id, errc_name(code), std::string(errc_name(e->code())) + ": " + e->what()));
        } else {
          if (*last < 1.0) send(progress_message(id, 1.0, "Ready"));
          send(done_message(id));
        }
        finished(id);
      });
      break;
    }
    case Kind::chat_completion:
      engine_.chat_completion(id, m.payload, [this, id](const engine::ChatChunk& c) {
        send(chunk_message(id, c));
        if (!c.terminal()) return;
        if (c.error) send(error_message(id, c.error->code, c.error->message));
        else send(done_message(id));
        finished(id);
      });
      break;
    case Kind::interrupt:
      engine_.interrupt(m.payload["target"]);
      send(done_message(id));
      finished(id);
      break;
    default:
      break;
  }
}

}  // namespace ember::wire
