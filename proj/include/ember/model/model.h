// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ember/kernels/tensor.h"
#include "ember/kv/paged_kv_cache.h"
#include "ember/model/artifact.h"
#include "ember/model/config.h"
#include "ember/tokenizer/byte_tokenizer.h"

namespace ember::model {

struct LoadProgress {
  uint64_t loaded_bytes = 0;
  uint64_t total_bytes = 0;
  std::string text;
};

struct LoadOptions {
  // KV pages per layer; 0 sizes the pool for four full context windows.
  uint32_t max_pages = 0;
  std::function<void(const LoadProgress&)> on_progress;
};

// A projection weight: q4g32 on device, or dense f32 stored [in, out].
struct Linear {
  kernels::QuantTensor q;
  kernels::Tensor dense;
  uint32_t in = 0;
  uint32_t out = 0;

  kernels::Tensor apply(const kernels::Tensor& x) const;
};

struct LayerWeights {
  kernels::Tensor input_norm;
  kernels::Tensor post_norm;
  Linear q_proj, k_proj, v_proj, o_proj;
  Linear gate_proj, up_proj, down_proj;
};

// Llama-style decoder (RMSNorm, RoPE, SwiGLU, grouped-query attention) with
// all weights resident on one device and its own paged KV cache.
class Model {
 public:
  const ModelConfig& config() const { return cfg_; }
  const tokenizer::ByteTokenizer& tokenizer() const { return tok_; }
  kv::PagedKvCache& cache() { return *cache_; }
  gpu::Device& device() const { return *device_; }
  const std::shared_ptr<gpu::Device>& device_ptr() const { return device_; }
  uint64_t weight_bytes() const { return weight_bytes_; }

  kv::SeqId add_sequence() { return cache_->add_sequence(); }
  kv::SeqId fork(kv::SeqId seq) { return cache_->fork(seq); }
  void remove_sequence(kv::SeqId seq) { cache_->remove_sequence(seq); }
  uint32_t length(kv::SeqId seq) const { return cache_->length(seq); }

  // Runs `ids` through the model at the end of `seq` and returns the logits
  // of the last position ([vocab_size]).
  kernels::Tensor prefill(kv::SeqId seq, std::span<const uint32_t> ids);
  kernels::Tensor decode_step(kv::SeqId seq, uint32_t id);

 private:
  friend std::unique_ptr<Model> load_model(const std::string&, std::shared_ptr<gpu::Device>,
                                           const LoadOptions&);
  Model(ModelConfig cfg, tokenizer::ByteTokenizer tok, std::shared_ptr<gpu::Device> device)
      : cfg_(std::move(cfg)), tok_(std::move(tok)), device_(std::move(device)) {}

  kernels::Tensor forward(kv::SeqId seq, std::span<const uint32_t> ids);

  ModelConfig cfg_;
  tokenizer::ByteTokenizer tok_;
  std::shared_ptr<gpu::Device> device_;
  kernels::Tensor embed_;
  std::vector<LayerWeights> layers_;
  kernels::Tensor final_norm_;
  kernels::Tensor lm_head_;
  std::unique_ptr<kv::PagedKvCache> cache_;
  uint64_t weight_bytes_ = 0;
};

// `source` is an artifact directory or an http:// base URL.
std::unique_ptr<Model> load_model(const std::string& source, std::shared_ptr<gpu::Device> device,
                                  const LoadOptions& options = {});

// Seeded random weights for `cfg`, quantized per cfg.quantization, written
// as a complete artifact. Identical seeds give byte-identical files.
void make_toy_artifact(uint64_t seed, const ModelConfig& cfg, const std::filesystem::path& out);

}  // namespace ember::model
