// SPDX-License-Identifier: Apache-2.0
// ember: chat REPL, bench, make-toy and serve.
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <unistd.h>

#include "CLI11.hpp"
#include "ember/cli/bench.h"
#include "ember/engine/engine.h"
#include "ember/error.h"
#include "ember/model/model.h"
#include "ember/wire/channel.h"
#include "ember/wire/handle.h"
#include "ember/wire/http.h"
#include "ember/wire/worker.h"

namespace fs = std::filesystem;
using namespace ember;
using engine::Json;

namespace {

bool g_json = false;
std::atomic<bool> g_signal{false};

extern "C" void on_signal(int) { g_signal.store(true); }

// No SA_RESTART, so a blocked read returns EINTR instead of swallowing it.
void install_signal(int sig) {
  struct sigaction sa {};
  sa.sa_handler = on_signal;
  sigemptyset(&sa.sa_mask);
  sa.sa_flags = 0;
  sigaction(sig, &sa, nullptr);
}

Json error_json(std::string_view code, const std::string& message) {
  return Json{{"error", {{"code", code}, {"message", message}}}};
}

// The one machine-parsable failure line.
void report_error(std::string_view code, const std::string& message) {
  std::string flat = message;
  for (char& c : flat)
    if (c == '\n' || c == '\r') c = ' ';
  if (g_json)
    std::cout << error_json(code, flat).dump() << std::endl;
  else
    std::cerr << "error: " << code << ": " << flat << std::endl;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::invalid_request, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string default_model_id(const std::string& dir) {
  std::string d = dir;
  while (d.size() > 1 && d.back() == '/') d.pop_back();
  const std::string name = fs::path(d).filename().string();
  return name.empty() ? "model" : name;
}

cli::Backend resolve_backend(const std::string& flag) {
  if (!flag.empty()) return cli::parse_backend(flag);
  if (auto env = cli::backend_from_env()) return *env;
  return cli::Backend::gpu;
}

void print_progress(const wire::InitProgress& p) {
  if (g_json) return;
  std::fprintf(stderr, "\r[%3.0f%%] %s\033[K", 100 * p.progress, p.text.c_str());
  if (p.progress >= 1) std::fputc('\n', stderr);
}

// Engine behind a worker on a loopback channel; the CLI only talks to the
// handle, like any other client.
struct Session {
  std::unique_ptr<engine::Engine> engine;
  std::pair<std::unique_ptr<wire::Channel>, std::unique_ptr<wire::Channel>> ends = wire::loopback_pair();
  std::unique_ptr<wire::BackendWorker> worker;
  std::unique_ptr<wire::EngineHandle> handle;

  explicit Session(std::shared_ptr<gpu::Device> device) {
    engine = std::make_unique<engine::Engine>(std::move(device));
    worker = std::make_unique<wire::BackendWorker>(*engine, *ends.second);
    handle = std::make_unique<wire::EngineHandle>(*ends.first);
  }
  ~Session() {
    handle.reset();
    worker.reset();
    engine.reset();
  }
};

struct ChatFlags {
  std::string model_dir;
  std::string backend;
  std::optional<double> temperature;
  std::optional<double> top_p;
  std::optional<int64_t> max_tokens;
  std::optional<int64_t> seed;
  std::string schema_file;
};

int cmd_chat(const ChatFlags& f) {
  engine::ChatRequest base;
  base.model = default_model_id(f.model_dir);
  base.stream = true;
  if (f.temperature) base.temperature = *f.temperature;
  if (f.top_p) base.top_p = *f.top_p;
  if (f.max_tokens) base.max_tokens = *f.max_tokens;
  base.seed = f.seed;
  if (!f.schema_file.empty()) {
    Json schema;
    try {
      schema = Json::parse(read_file(f.schema_file));
    } catch (const Json::exception& e) {
      throw Error(Errc::invalid_request, f.schema_file + ": " + e.what());
    }
    base.response_format = {engine::FormatType::json_schema, schema};
  }

  Session s(cli::make_device(resolve_backend(f.backend)));
  s.handle->reload(base.model, f.model_dir, print_progress).get();

  install_signal(SIGINT);
  const bool interactive = !g_json && ::isatty(STDIN_FILENO);
  std::vector<engine::Message> history;
  uint64_t turn = 0;
  for (;;) {
    if (interactive) std::cout << "> " << std::flush;
    std::string line;
    g_signal = false;
    if (!std::getline(std::cin, line)) {
      if (g_signal) {  // Ctrl-C at the prompt interrupts the read, not the REPL
        std::clearerr(stdin);
        std::cin.clear();
        if (!g_json) std::cout << std::endl;
        continue;
      }
      break;
    }
    if (line.empty()) continue;
    if (line == "/quit") break;
    if (line == "/reset") {
      history.clear();
      if (g_json)
        std::cout << Json{{"reset", true}}.dump() << std::endl;
      else
        std::cout << "(conversation cleared)" << std::endl;
      continue;
    }

    history.push_back({engine::Role::user, line});
    engine::ChatRequest req = base;
    req.messages = history;
    const std::string rid = "chat-" + std::to_string(++turn);
    std::string reply;
    std::optional<engine::ChatChunk> last;
    auto fut = s.handle->chat(rid, req, [&](const engine::ChatChunk& c) {
      reply += c.content;
      if (!g_json) std::cout << c.content << std::flush;
      if (c.terminal()) last = c;
    });
    bool interrupted = false;
    while (fut.wait_for(std::chrono::milliseconds(20)) != std::future_status::ready) {
      if (g_signal.exchange(false) && !interrupted) {
        interrupted = true;
        s.handle->interrupt(rid).get();
      }
    }
    try {
      fut.get();
    } catch (const Error& e) {
      if (!g_json) std::cout << std::endl;
      report_error(errc_name(e.code()), e.what());
      history.pop_back();
      continue;
    }
    // Partial replies stay in the history.
    history.push_back({engine::Role::assistant, reply});
    if (g_json) {
      Json out{{"content", reply}};
      if (last && last->finish_reason) out["finish_reason"] = engine::finish_reason_name(*last->finish_reason);
      if (interrupted) out["interrupted"] = true;
      if (last && last->usage)
        out["usage"] = {{"prompt_tokens", last->usage->prompt_tokens},
                        {"completion_tokens", last->usage->completion_tokens}};
      std::cout << out.dump() << std::endl;
    } else {
      std::cout << (interrupted ? " [interrupted]" : "") << std::endl;
    }
  }
  return 0;
}

struct BenchFlags {
  cli::BenchOptions options;
  std::string backend;
  std::string baseline;
  std::string out;
};

int cmd_bench(BenchFlags f) {
  auto& o = f.options;
  if (o.model_id.empty()) o.model_id = default_model_id(o.model_dir);
  o.backend = resolve_backend(f.backend);
  if (o.gen_len == 0) throw Error(Errc::invalid_request, "--gen-len must be positive");
  if (o.runs == 0) throw Error(Errc::invalid_request, "--runs must be positive");

  cli::BenchReport report = cli::run_bench(o);
  std::string baseline = f.baseline;
  if (baseline.empty()) baseline = o.backend == cli::Backend::gpu ? "cpu" : "none";
  if (baseline == "gpu" || baseline == "cpu" || baseline == "cpu_reference") {
    cli::BenchOptions b = o;
    b.backend = cli::parse_backend(baseline);
    b.require_hardware = false;
    cli::set_baseline(report, cli::run_bench(b));
  } else if (baseline != "none") {
    Json j;
    try {
      j = Json::parse(read_file(baseline));
    } catch (const Json::exception& e) {
      throw Error(Errc::invalid_request, baseline + ": " + e.what());
    }
    cli::set_baseline(report, cli::BenchReport::from_json(j));
  }

  if (!f.out.empty()) {
    std::ofstream out(f.out);
    out << report.to_json().dump(2) << "\n";
    if (!out) throw Error(Errc::internal, "cannot write " + f.out);
  }
  if (g_json) {
    std::cout << report.to_json().dump() << std::endl;
  } else {
    std::cout << cli::table_header(report) << "\n" << cli::table_row(report) << "\n";
    std::printf("prompt %u tokens, prefill %.1f tok/s; decode %u tokens over %zu runs; adapter: %s\n",
                report.prompt_tokens, report.prefill_tok_per_s, report.gen_tokens, report.decode_runs.size(),
                report.adapter.c_str());
  }
  return 0;
}

int cmd_make_toy(uint64_t seed, const std::string& out, const std::string& quant) {
  model::ModelConfig cfg = model::toy_config();
  if (quant == "q4g32")
    cfg.quantization = model::Quantization::q4g32;
  else if (quant == "f32")
    cfg.quantization = model::Quantization::f32;
  else
    throw Error(Errc::invalid_request, "unknown quantization '" + quant + "' (expected q4g32 or f32)");
  model::make_toy_artifact(seed, cfg, out);
  if (g_json)
    std::cout << Json{{"out", out}, {"seed", seed}, {"quantization", quant}}.dump() << std::endl;
  else
    std::cout << "wrote toy model (seed " << seed << ", " << quant << ") to " << out << std::endl;
  return 0;
}

int cmd_serve(const std::string& model_dir, std::string model_id, const std::string& backend,
              const wire::HttpOptions& http) {
  if (model_id.empty()) model_id = default_model_id(model_dir);
  engine::Engine eng(cli::make_device(resolve_backend(backend)));
  install_signal(SIGINT);
  install_signal(SIGTERM);
  auto server = wire::serve_http(eng, http);
  eng.load_sync(model_id, model_dir, [](const model::LoadProgress& p) {
    print_progress({p.total_bytes ? double(p.loaded_bytes) / double(p.total_bytes) : 1.0, p.text});
  });
  if (g_json)
    std::cout << Json{{"listening", {{"host", http.host}, {"port", server->port()}}}, {"model", model_id}}.dump()
              << std::endl;
  else
    std::cout << "serving " << model_id << " on http://" << http.host << ":" << server->port() << std::endl;
  while (!g_signal) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server->stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i)
    if (std::string_view(argv[i]) == "--json") g_json = true;

  CLI::App app{"ember: in-process LLM engine with a worker-style frontend handle"};
  app.require_subcommand(1);
  app.add_flag("--json", g_json, "Emit JSON on stdout for every output, errors included");
  app.fallthrough();

  ChatFlags chat;
  auto* c = app.add_subcommand("chat", "Interactive chat; /reset clears the conversation, /quit exits");
  c->add_option("model-dir", chat.model_dir, "Model artifact directory")->required();
  c->add_option("--backend", chat.backend, "gpu or cpu (default: ENGINE_BACKEND, else gpu)");
  c->add_option("--temperature", chat.temperature, "Sampling temperature; 0 is greedy");
  c->add_option("--top-p", chat.top_p, "Nucleus mass in (0, 1]");
  c->add_option("--max-tokens", chat.max_tokens, "Tokens per reply");
  c->add_option("--seed", chat.seed, "Sampling seed");
  c->add_option("--schema", chat.schema_file, "JSON Schema file; replies are constrained to it");

  BenchFlags bench;
  bench.options.model_id.clear();
  auto* b = app.add_subcommand("bench", "Decode throughput against a baseline runtime");
  b->add_option("model-dir", bench.options.model_dir, "Model artifact directory")->required();
  b->add_option("--model-id", bench.options.model_id, "Name in the report (default: directory name)");
  b->add_option("--prompt-len", bench.options.prompt_len, "Prompt tokens")->capture_default_str();
  b->add_option("--gen-len", bench.options.gen_len, "Generated tokens per run")->capture_default_str();
  b->add_option("--runs", bench.options.runs, "Measured runs after the warmup")->capture_default_str();
  b->add_option("--backend", bench.backend, "gpu or cpu (default: ENGINE_BACKEND, else gpu)");
  b->add_flag("--require-hardware", bench.options.require_hardware, "Refuse the software gpu adapter");
  b->add_option("--baseline", bench.baseline,
                "gpu, cpu, none, or a saved report.json (default: cpu when measuring gpu)");
  b->add_option("--out", bench.out, "Also write the report to this file");

  uint64_t toy_seed = 42;
  std::string toy_out, toy_quant = "q4g32";
  auto* t = app.add_subcommand("make-toy", "Write a seeded toy model artifact");
  t->add_option("--seed", toy_seed, "Weight seed")->capture_default_str();
  t->add_option("--out", toy_out, "Output directory")->required();
  t->add_option("--quant", toy_quant, "q4g32 or f32")->capture_default_str();

  std::string serve_model, serve_id, serve_backend;
  wire::HttpOptions http;
  http.port = 8000;
  auto* s = app.add_subcommand("serve", "OpenAI-compatible HTTP endpoint");
  s->add_option("--model", serve_model, "Model artifact directory")->required();
  s->add_option("--model-id", serve_id, "Model id clients send (default: directory name)");
  s->add_option("--backend", serve_backend, "gpu or cpu (default: ENGINE_BACKEND, else gpu)");
  s->add_option("--host", http.host, "Bind address")->capture_default_str();
  s->add_option("--port", http.port, "Port; 0 picks a free one")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("invalid_request", e.what());
    return 1;
  }

  try {
    if (*c) return cmd_chat(chat);
    if (*b) return cmd_bench(bench);
    if (*t) return cmd_make_toy(toy_seed, toy_out, toy_quant);
    if (*s) return cmd_serve(serve_model, serve_id, serve_backend, http);
  } catch (const Error& e) {
    report_error(errc_name(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 1;
  }
  return 1;
}
