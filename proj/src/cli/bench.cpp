// SPDX-License-Identifier: Apache-2.0
#include "ember/cli/bench.h"

#include <algorithm>
#include <cstdio>
#include <cstdlib>

#include "ember/engine/engine.h"
#include "ember/model/config.h"
#include "ember/tokenizer/byte_tokenizer.h"
#include "ember/wire/channel.h"
#include "ember/wire/handle.h"
#include "ember/wire/worker.h"

namespace ember::cli {

using engine::Json;

std::string_view backend_label(Backend b) { return b == Backend::gpu ? "gpu" : "cpu_reference"; }

Backend parse_backend(std::string_view name) {
  if (name == "gpu") return Backend::gpu;
  if (name == "cpu" || name == "cpu_reference") return Backend::cpu;
  throw Error(Errc::invalid_request, "unknown backend '" + std::string(name) + "' (expected gpu or cpu)");
}

std::optional<Backend> backend_from_env() {
  const char* v = std::getenv("ENGINE_BACKEND");
  if (!v || !*v) return std::nullopt;
  return parse_backend(v);
}

std::shared_ptr<gpu::Device> make_device(Backend b, bool require_hardware) {
  gpu::DeviceOptions o;
  o.preference = b == Backend::gpu ? gpu::DevicePreference::gpu : gpu::DevicePreference::cpu_reference;
  o.allow_fallback_adapter = !require_hardware;
  return gpu::init_device(o);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Json BenchReport::to_json() const {
  Json j;
  j["model_id"] = model_id;
  j["prompt_tokens"] = prompt_tokens;
  j["gen_tokens"] = gen_tokens;
  j["prefill_tok_per_s"] = prefill_tok_per_s;
  j["decode_tok_per_s"] = decode_tok_per_s;
  j["backend"] = backend;
  j["adapter"] = adapter;
  j["decode_runs"] = decode_runs;
  if (retained_pct) {
    j["retained_pct"] = *retained_pct;
    j["baseline_backend"] = *baseline_backend;
    j["baseline_decode_tok_per_s"] = *baseline_decode_tok_per_s;
  }
  return j;
}

BenchReport BenchReport::from_json(const Json& j) {
  try {
    BenchReport r;
    r.model_id = j.at("model_id").get<std::string>();
    r.prompt_tokens = j.at("prompt_tokens").get<uint32_t>();
    r.gen_tokens = j.at("gen_tokens").get<uint32_t>();
    r.prefill_tok_per_s = j.at("prefill_tok_per_s").get<double>();
    r.decode_tok_per_s = j.at("decode_tok_per_s").get<double>();
    r.backend = j.at("backend").get<std::string>();
    r.adapter = j.value("adapter", "");
    r.decode_runs = j.value("decode_runs", std::vector<double>{});
    if (j.contains("retained_pct")) {
      r.retained_pct = j["retained_pct"].get<double>();
      r.baseline_backend = j.at("baseline_backend").get<std::string>();
      r.baseline_decode_tok_per_s = j.at("baseline_decode_tok_per_s").get<double>();
    }
    return r;
  } catch (const Json::exception& e) {
    throw Error(Errc::invalid_request, std::string("not a bench report: ") + e.what());
  }
}

void set_baseline(BenchReport& report, const BenchReport& baseline) {
  if (!(baseline.decode_tok_per_s > 0)) throw Error(Errc::invalid_request, "baseline decode rate must be positive");
  report.baseline_backend = baseline.backend;
  report.baseline_decode_tok_per_s = baseline.decode_tok_per_s;
  report.retained_pct = 100.0 * report.decode_tok_per_s / baseline.decode_tok_per_s;
}

BenchReport run_bench(const BenchOptions& options) {
  auto device = make_device(options.backend, options.require_hardware);
  auto [front, back] = wire::loopback_pair();
  engine::Engine engine(device);
  BenchReport report;
  report.model_id = options.model_id;
  report.backend = std::string(backend_label(options.backend));
  report.adapter = engine.adapter_name();
  {
    wire::BackendWorker worker(engine, *back);
    wire::EngineHandle handle(*front);
    handle.reload(options.model_id, options.model_dir).get();

    // Sized so the rendered prompt has prompt_len tokens under the default
    // template; usage reports what it really was.
    engine::ChatRequest req;
    req.model = options.model_id;
    const size_t overhead =
        engine::render_prompt({{engine::Role::user, ""}}, model::kDefaultChatTemplate, tokenizer::ByteTokenizer())
            .size();
    const std::string filler = "the quick brown fox jumps over the lazy dog ";
    std::string content;
    while (content.size() + overhead < options.prompt_len) content += filler[content.size() % filler.size()];
    req.messages = {{engine::Role::user, content}};
    req.max_tokens = options.gen_len;
    req.temperature = 0;
    req.ignore_eos = true;

    std::vector<double> prefill;
    for (uint32_t i = 0; i <= options.runs; ++i) {
      std::optional<engine::ChatChunk> last;
      handle.chat("bench-" + std::to_string(i), req, [&](const engine::ChatChunk& c) {
        if (c.terminal()) last = c;
      }).get();
      if (!last || !last->usage) throw Error(Errc::internal, "bench run ended without usage");
      if (i == 0) continue;  // warmup
      report.prompt_tokens = last->usage->prompt_tokens;
      report.gen_tokens = last->usage->completion_tokens;
      report.decode_runs.push_back(last->usage->decode_tokens_per_s);
      prefill.push_back(last->usage->prefill_tokens_per_s);
    }
    report.decode_tok_per_s = median(report.decode_runs);
    report.prefill_tok_per_s = median(prefill);
  }
  return report;
}

namespace {

std::string fixed1(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

std::string table_header(const BenchReport& r) {
  return "model  " + r.backend + " (tok/s)  " + (r.baseline_backend ? *r.baseline_backend : "baseline") +
         " (tok/s)  retained";
}

std::string table_row(const BenchReport& r) {
  std::string row = r.model_id + "  " + fixed1(r.decode_tok_per_s) + "  ";
  if (!r.retained_pct) return row + "-  -";
  return row + fixed1(*r.baseline_decode_tok_per_s) + "  " + fixed1(*r.retained_pct) + "%";
}

}  // namespace ember::cli
