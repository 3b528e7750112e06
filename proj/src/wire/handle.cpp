// SPDX-License-Identifier: Apache-2.0
#include "ember/wire/handle.h"

namespace ember::wire {

namespace {

std::exception_ptr as_error(Errc code, const std::string& message) {
  return std::make_exception_ptr(Error(code, message));
}

}  // namespace

EngineHandle::EngineHandle(Channel& channel) : channel_(channel) {
  dispatcher_ = std::thread([this] { dispatch(); });
}

EngineHandle::~EngineHandle() {
  channel_.close();
  dispatcher_.join();
}

bool EngineHandle::connected() const {
  std::lock_guard lk(mu_);
  return !closed_;
}

std::future<void> EngineHandle::send(const WireMessage& m, Pending p) {
  auto fut = p.done.get_future();
  std::unique_lock lk(mu_);
  if (closed_) {
    p.done.set_exception(as_error(Errc::disconnected, "channel closed"));
    return fut;
  }
  if (pending_.count(m.request_id)) {
    p.done.set_exception(as_error(Errc::duplicate_request_id, "request id '" + m.request_id + "' is already pending"));
    return fut;
  }
  pending_.emplace(m.request_id, std::move(p));
  // Written under the lock so sends stay in call order.
  if (!channel_.write_line(m.encode())) {
    auto node = pending_.extract(m.request_id);
    node.mapped().done.set_exception(as_error(Errc::disconnected, "channel closed"));
  }
  return fut;
}

std::future<void> EngineHandle::reload(const std::string& model_id, const std::string& source,
                                       InitProgressFn on_progress, const std::string& request_id) {
  Pending p;
  p.on_progress = std::move(on_progress);
  return send(reload_message(request_id.empty() ? new_uuid() : request_id, model_id, source), std::move(p));
}

std::future<void> EngineHandle::chat(const std::string& request_id, const engine::Json& request, ChunkFn on_chunk) {
  Pending p;
  p.on_chunk = std::move(on_chunk);
  return send(chat_message(request_id, request), std::move(p));
}

std::future<void> EngineHandle::interrupt(const std::string& target, const std::string& request_id) {
  return send(interrupt_message(request_id.empty() ? new_uuid() : request_id, target), Pending{});
}

void EngineHandle::fail_all(Errc code, const std::string& message) {
  std::map<std::string, Pending> orphans;
  {
    std::lock_guard lk(mu_);
    closed_ = true;
    orphans.swap(pending_);
  }
  for (auto& [id, p] : orphans) p.done.set_exception(as_error(code, message));
}

void EngineHandle::dispatch() {
  while (auto line = channel_.read_line()) {
    WireMessage m;
    try {
      m = WireMessage::decode(*line);
    } catch (const Error&) {
      continue;  // nothing to route it to
    }
    // Callbacks are looked up under the lock but run outside it; only this
    // thread removes entries, so the pointer stays valid.
    Pending* p = nullptr;
    {
      std::lock_guard lk(mu_);
      auto it = pending_.find(m.request_id);
      if (it != pending_.end()) p = &it->second;
    }
    if (!p) continue;
    try {
      switch (m.kind) {
        case Kind::chunk:
          if (p->on_chunk) p->on_chunk(engine::ChatChunk::from_json(m.payload));
          break;
        case Kind::init_progress:
          if (p->on_progress) p->on_progress({m.payload["progress"].get<double>(), m.payload["text"]});
          break;
        default:
          break;
      }
    } catch (...) {
    }
    if (m.kind != Kind::done && m.kind != Kind::error) continue;
    Pending done;
    {
      std::lock_guard lk(mu_);
      auto node = pending_.extract(m.request_id);
      done = std::move(node.mapped());
    }
    if (m.kind == Kind::done) {
      done.done.set_value();
    } else {
      const auto code = errc_from_name(m.payload["code"].get<std::string>()).value_or(Errc::internal);
      done.done.set_exception(as_error(code, m.payload["message"].get<std::string>()));
    }
  }
  fail_all(Errc::disconnected, "channel closed");
}

}  // namespace ember::wire
