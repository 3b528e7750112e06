// SPDX-License-Identifier: Apache-2.0
#include "ember/engine/engine.h"

#include <chrono>
#include <cmath>
#include <future>
#include <limits>

#include "ember/grammar/grammar.h"
#include "ember/utf8.h"

namespace ember::engine {

namespace {

struct SequenceGuard {
  model::Model* m = nullptr;
  kv::SeqId seq = 0;
  ~SequenceGuard() {
    if (m) m->remove_sequence(seq);
  }
};

double rate(uint32_t tokens, double seconds) { return seconds > 0 ? tokens / seconds : 0.0; }

}  // namespace

Engine::Engine(std::shared_ptr<gpu::Device> device, EngineOptions options)
    : device_(std::move(device)), options_(std::move(options)) {
  if (!device_) throw Error(Errc::invalid_request, "engine needs a device");
  if (options_.prefill_chunk == 0) options_.prefill_chunk = 1;
  backend_ = device_->backend();
  adapter_ = device_->adapter().name;
  thread_ = std::thread([this] { run(); });
}

Engine::~Engine() {
  push(Command::make(Command::shutdown, ""));
  thread_.join();
}

void Engine::push(Command c) {
  {
    std::lock_guard lk(mu_);
    queue_.push_back(std::move(c));
  }
  cv_.notify_one();
}

double Engine::now() const {
  if (options_.clock) return options_.clock();
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void Engine::load(std::string model_id, std::string source, ProgressFn progress, LoadDoneFn done) {
  ++loads_in_flight_;
  Command c = Command::make(Command::load, std::move(model_id));
  c.source = std::move(source);
  c.progress = std::move(progress);
  c.done = std::move(done);
  push(std::move(c));
}

void Engine::chat_completion(std::string request_id, ChatRequest request, ChunkFn emit) {
  Command c = Command::make(Command::chat, std::move(request_id));
  c.model_hint = request.model;
  c.request = std::move(request);
  c.emit = std::move(emit);
  push(std::move(c));
}

void Engine::chat_completion(std::string request_id, const Json& request, ChunkFn emit) {
  Command c = Command::make(Command::chat, std::move(request_id));
  c.emit = std::move(emit);
  if (request.is_object() && request.contains("model") && request["model"].is_string())
    c.model_hint = request["model"].get<std::string>();
  try {
    c.request = ChatRequest::from_json(request);
  } catch (const Error& e) {
    c.invalid = e.what();
  }
  push(std::move(c));
}

void Engine::interrupt(std::string request_id) { push(Command::make(Command::interrupt, std::move(request_id))); }

void Engine::load_sync(const std::string& model_id, const std::string& source, ProgressFn progress) {
  std::promise<void> p;
  load(model_id, source, std::move(progress), [&p](const Error* e) {
    if (e) p.set_exception(std::make_exception_ptr(*e));
    else p.set_value();
  });
  p.get_future().get();
}

std::vector<ChatChunk> Engine::chat_sync(const std::string& request_id, const ChatRequest& request) {
  std::promise<void> p;
  std::vector<ChatChunk> out;
  chat_completion(request_id, request, [&](const ChatChunk& c) {
    out.push_back(c);
    if (c.terminal()) p.set_value();
  });
  p.get_future().get();
  return out;
}

std::vector<std::string> Engine::model_ids() const {
  std::lock_guard lk(mu_);
  return published_ids_;
}

bool Engine::has_model(const std::string& model_id) const {
  std::lock_guard lk(mu_);
  return std::find(published_ids_.begin(), published_ids_.end(), model_id) != published_ids_.end();
}

void Engine::run() {
  for (;;) {
    Command c;
    {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] { return !queue_.empty(); });
      c = std::move(queue_.front());
      queue_.pop_front();
      if (c.kind == Command::interrupt) {
        bool hit = false;
        apply_interrupt(c.id, "", hit);
        continue;
      }
    }
    switch (c.kind) {
      case Command::load: do_load(c); break;
      case Command::chat: do_chat(c); break;
      case Command::shutdown: return;
      case Command::interrupt: break;
    }
  }
}

void Engine::apply_interrupt(const std::string& target, const std::string& active, bool& hit) {
  if (!active.empty() && target == active) {
    hit = true;
    return;
  }
  for (auto& q : queue_)
    if (q.kind == Command::chat && q.id == target) q.cancelled = true;
}

bool Engine::poll_interrupts(const std::string& active) {
  bool hit = false;
  std::lock_guard lk(mu_);
  for (auto it = queue_.begin(); it != queue_.end();) {
    if (it->kind == Command::interrupt) {
      const std::string target = it->id;
      it = queue_.erase(it);
      apply_interrupt(target, active, hit);
    } else {
      ++it;
    }
  }
  return hit;
}

void Engine::do_load(Command& c) {
  auto finish = [&](const Error* e) {
    --loads_in_flight_;
    if (c.done) {
      try {
        c.done(e);
      } catch (...) {
      }
    }
  };
  if (models_.count(c.id)) {
    const Error e(Errc::duplicate_model_id, "model id '" + c.id + "' is already loaded");
    finish(&e);
    return;
  }
  try {
    model::LoadOptions opt;
    opt.max_pages = options_.kv_pages;
    opt.on_progress = c.progress;
    auto m = model::load_model(c.source, device_, opt);
    models_[c.id] = std::move(m);
    {
      std::lock_guard lk(mu_);
      published_ids_.clear();
      for (const auto& [id, _] : models_) published_ids_.push_back(id);
    }
    finish(nullptr);
  } catch (const Error& e) {
    finish(&e);
  } catch (const std::exception& e) {
    const Error err(Errc::internal, e.what());
    finish(&err);
  }
}

void Engine::do_chat(Command& c) {
  const std::string id = "chatcmpl-" + c.id;
  auto send = [&](const ChatChunk& chunk) {
    try {
      c.emit(chunk);
    } catch (...) {
    }
  };
  if (!c.request) {
    send(error_chunk(id, c.model_hint, Errc::invalid_request, c.invalid));
    return;
  }
  const ChatRequest& req = *c.request;
  auto fail = [&](Errc code, const std::string& message) {
    auto chunk = error_chunk(id, req.model, code, message);
    chunk.message = !req.stream;
    send(chunk);
  };
  const auto found = models_.find(req.model);
  if (found == models_.end()) {
    fail(Errc::model_not_found, "no model loaded as '" + req.model + "'");
    return;
  }
  model::Model& m = *found->second;
  const auto& tok = m.tokenizer();
  const uint32_t ctx = m.config().context_window;

  std::optional<grammar::Matcher> matcher;
  try {
    if (req.response_format.type == FormatType::json_object)
      matcher.emplace(grammar::Grammar::json_object());
    else if (req.response_format.type == FormatType::json_schema)
      matcher.emplace(grammar::Grammar::from_schema(req.response_format.schema->dump()));
  } catch (const Error& e) {
    fail(e.code(), e.what());
    return;
  }

  Usage usage;
  std::string message_text;
  SequenceGuard guard;
  try {
    const auto prompt = render_prompt(req.messages, m.config().chat_template, tok);
    usage.prompt_tokens = static_cast<uint32_t>(prompt.size());
    if (prompt.size() > ctx)
      throw Error(Errc::context_overflow, "prompt of " + std::to_string(prompt.size()) +
                                              " tokens exceeds the context window of " + std::to_string(ctx));

    bool interrupted = c.cancelled;
    guard.seq = m.add_sequence();
    guard.m = &m;

    const double t0 = now();
    kernels::Tensor last;
    for (size_t off = 0; off < prompt.size() && !interrupted; off += options_.prefill_chunk) {
      if ((interrupted = poll_interrupts(c.id))) break;
      const size_t n = std::min<size_t>(options_.prefill_chunk, prompt.size() - off);
      last = m.prefill(guard.seq, std::span(prompt).subspan(off, n));
      if (options_.on_prefill) options_.on_prefill(c.id, static_cast<uint32_t>(off + n), usage.prompt_tokens);
    }
    std::vector<float> logits;
    if (!interrupted) logits = last.to_host();
    const double t1 = now();
    usage.prefill_tokens_per_s = rate(usage.prompt_tokens, t1 - t0);

    Rng rng(req.seed ? static_cast<uint64_t>(*req.seed) : std::random_device{}());
    tokenizer::DecodeStream decoder(tok);
    StopScanner scanner(req.stop);
    FinishReason finish = FinishReason::stop;
    auto deliver = [&](const std::string& raw) {
      const std::string text = utf8::sanitize(raw);
      if (text.empty()) return;
      if (!req.stream) {
        message_text += text;
        return;
      }
      ChatChunk chunk;
      chunk.id = id;
      chunk.model = req.model;
      chunk.content = text;
      send(chunk);
    };

    while (!interrupted) {
      if ((interrupted = poll_interrupts(c.id))) break;
      check_finite(logits);
      if (matcher) {
        const uint32_t room = ctx - m.length(guard.seq) + 1;
        const uint32_t budget = std::min(req.max_tokens - usage.completion_tokens, room);
        const auto mask = matcher->compute_mask(tok, budget);
        for (uint32_t i = 0; i < logits.size(); ++i)
          if (!mask.allowed(i)) logits[i] = -std::numeric_limits<float>::infinity();
      } else if (req.ignore_eos) {
        logits[tok.eos_id()] = -std::numeric_limits<float>::infinity();
      }
      const uint32_t next = sample_token(logits, req.temperature, req.top_p, rng);
      if (next == tok.eos_id()) {
        finish = FinishReason::stop;
        break;
      }
      if (matcher) matcher = matcher->accept_token(next, tok);
      ++usage.completion_tokens;
      if (auto piece = decoder.push(next)) {
        deliver(scanner.push(*piece));
        if (scanner.stopped()) {
          finish = FinishReason::stop;
          break;
        }
      }
      if (usage.completion_tokens == req.max_tokens || m.length(guard.seq) >= ctx) {
        // A budget that ends on a complete document ended naturally.
        finish = matcher && matcher->is_terminated() ? FinishReason::stop : FinishReason::length;
        break;
      }
      logits = m.decode_step(guard.seq, next).to_host();
    }
    if (interrupted) finish = FinishReason::stop;
    const double t2 = now();
    usage.decode_tokens_per_s = rate(usage.completion_tokens, t2 - t1);

    std::string rest;
    if (!scanner.stopped()) {
      rest = scanner.push(decoder.finish());
      if (scanner.stopped()) finish = FinishReason::stop;
      else rest += scanner.finish();
    }
    ChatChunk terminal;
    terminal.id = id;
    terminal.model = req.model;
    terminal.finish_reason = finish;
    terminal.usage = usage;
    terminal.message = !req.stream;
    terminal.content = req.stream ? utf8::sanitize(rest) : message_text + utf8::sanitize(rest);
    send(terminal);
  } catch (const Error& e) {
    fail(e.code(), e.what());
  } catch (const std::exception& e) {
    fail(Errc::internal, e.what());
  }
}

}  // namespace ember::engine
