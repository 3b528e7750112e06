// SPDX-License-Identifier: Apache-2.0
// Decode-throughput benchmark laid out as a browser-vs-native table:
// one backend measured, another (or a saved report) as the baseline.
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ember/engine/protocol.h"
#include "ember/gpu/device.h"

namespace ember::cli {

enum class Backend { gpu, cpu };

std::string_view backend_label(Backend b);  // "gpu" or "cpu_reference"
// Accepts gpu, cpu and cpu_reference; throws InvalidRequest otherwise.
Backend parse_backend(std::string_view name);
// The backend named by ENGINE_BACKEND, if set.
std::optional<Backend> backend_from_env();

// A device for `b`. The gpu backend accepts the software adapter unless
// `require_hardware` is set.
std::shared_ptr<gpu::Device> make_device(Backend b, bool require_hardware = false);

struct BenchOptions {
  std::string model_dir;
  std::string model_id = "toy";
  uint32_t prompt_len = 64;
  uint32_t gen_len = 64;
  Backend backend = Backend::gpu;
  bool require_hardware = false;
  uint32_t runs = 3;  // measured runs after one warmup
};

struct BenchReport {
  std::string model_id;
  uint32_t prompt_tokens = 0;
  uint32_t gen_tokens = 0;
  double prefill_tok_per_s = 0;
  double decode_tok_per_s = 0;
  std::string backend;  // gpu or cpu_reference
  std::string adapter;
  std::vector<double> decode_runs;  // measured runs, in order
  // Against a baseline: 100 * decode / baseline decode.
  std::optional<double> retained_pct;
  std::optional<std::string> baseline_backend;
  std::optional<double> baseline_decode_tok_per_s;

  engine::Json to_json() const;
  static BenchReport from_json(const engine::Json& j);
};

// Loads the model behind a loopback worker, runs one warmup and
// `options.runs` greedy generations of exactly gen_len tokens, and reports
// the medians. Load errors propagate.
BenchReport run_bench(const BenchOptions& options);

void set_baseline(BenchReport& report, const BenchReport& baseline);

double median(std::vector<double> v);

// "model  tok/s  baseline  pct%" with one decimal, as in a published table.
std::string table_header(const BenchReport& report);
std::string table_row(const BenchReport& report);

}  // namespace ember::cli
