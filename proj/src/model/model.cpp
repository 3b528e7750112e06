// SPDX-License-Identifier: Apache-2.0
#include "ember/model/model.h"

#include <cstring>
#include <numeric>

#include "ember/error.h"
#include "ember/kernels/ops.h"

namespace ember::model {

using kernels::Tensor;

namespace {

template <class T>
std::vector<T> as_vector(std::string_view bytes) {
  std::vector<T> out(bytes.size() / sizeof(T));
  std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
  return out;
}

}  // namespace

Tensor Linear::apply(const Tensor& x) const {
  if (dense.valid()) return kernels::gemm(x, dense);
  return kernels::dequant_matvec(q, x);
}

std::unique_ptr<Model> load_model(const std::string& location, std::shared_ptr<gpu::Device> device,
                                  const LoadOptions& options) {
  const auto source = open_source(location);
  auto cfg = ModelConfig::from_json(source->fetch("config.json"));
  auto tok = tokenizer::ByteTokenizer::from_json(source->fetch("tokenizer.json"), cfg.vocab_size);
  const auto manifest = WeightManifest::from_json(source->fetch("manifest.json"));
  manifest.validate(cfg);

  std::unique_ptr<Model> m(new Model(cfg, std::move(tok), device));
  LoadProgress progress{0, manifest.total_bytes(), "Fetching " + source->describe()};
  if (options.on_progress) options.on_progress(progress);

  // Raw record bytes, keyed by name, collected shard by shard.
  std::map<std::string, std::string> raw;
  for (size_t i = 0; i < manifest.shards.size(); ++i) {
    const ShardInfo& shard = manifest.shards[i];
    std::string bytes = source->fetch(shard.file);
    if (bytes.size() != shard.nbytes) {
      throw Error(Errc::checksum_mismatch, shard.file + ": expected " + std::to_string(shard.nbytes) +
                                               " bytes, got " + std::to_string(bytes.size()));
    }
    if (crc32_of(bytes) != shard.crc32) {
      throw Error(Errc::checksum_mismatch, shard.file + ": crc32 mismatch");
    }
    for (const auto& r : manifest.records) {
      if (r.shard_file == shard.file) raw[r.name] = bytes.substr(r.byte_offset, r.nbytes);
    }
    progress.loaded_bytes += shard.nbytes;
    progress.text = "Loaded " + shard.file + " (" + std::to_string(i + 1) + "/" +
                    std::to_string(manifest.shards.size()) + ")";
    if (options.on_progress) options.on_progress(progress);
  }

  auto dense = [&](const std::string& name, std::vector<uint32_t> shape) {
    return Tensor::from_host(device, std::move(shape), as_vector<float>(raw.at(name)));
  };
  auto linear = [&](const ParamSpec& p) {
    Linear l;
    l.out = p.shape[0];
    l.in = p.shape[1];
    if (cfg.quantization == Quantization::f32) {
      l.dense = dense(p.name, {l.in, l.out});
      return l;
    }
    kernels::QuantizedMatrix q;
    q.rows = l.out;
    q.cols = l.in;
    std::string codes = raw.at(p.name + ".codes");
    codes.resize((codes.size() + 3) / 4 * 4, '\0');
    q.packed = as_vector<uint32_t>(codes);
    q.scales = as_vector<uint16_t>(raw.at(p.name + ".scales"));
    l.q = kernels::QuantTensor::from_host(device, q);
    return l;
  };

  const uint64_t live_before = device->live_bytes();
  const auto params = required_params(cfg);
  size_t next = 0;
  m->embed_ = dense(params[next].name, params[next].shape);
  ++next;
  for (uint32_t l = 0; l < cfg.num_layers; ++l) {
    LayerWeights w;
    w.input_norm = dense(params[next].name, params[next].shape), ++next;
    w.q_proj = linear(params[next++]);
    w.k_proj = linear(params[next++]);
    w.v_proj = linear(params[next++]);
    w.o_proj = linear(params[next++]);
    w.post_norm = dense(params[next].name, params[next].shape), ++next;
    w.gate_proj = linear(params[next++]);
    w.up_proj = linear(params[next++]);
    w.down_proj = linear(params[next++]);
    m->layers_.push_back(std::move(w));
  }
  m->final_norm_ = dense(params[next].name, params[next].shape), ++next;
  m->lm_head_ = dense(params[next].name, params[next].shape), ++next;
  m->weight_bytes_ = device->live_bytes() - live_before;

  kv::CacheConfig kc;
  kc.num_layers = cfg.num_layers;
  kc.num_kv_heads = cfg.num_kv_heads;
  kc.head_dim = cfg.head_dim;
  kc.page_size = 16;
  kc.max_pages = options.max_pages != 0 ? options.max_pages : 4 * ((cfg.context_window + 15) / 16);
  m->cache_ = std::make_unique<kv::PagedKvCache>(kc, device);
  device->synchronize();
  return m;
}

Tensor Model::prefill(kv::SeqId seq, std::span<const uint32_t> ids) {
  if (ids.empty()) throw Error(Errc::invalid_request, "prefill needs at least one token");
  return forward(seq, ids);
}

Tensor Model::decode_step(kv::SeqId seq, uint32_t id) {
  if (cache_->length(seq) == 0) throw Error(Errc::invalid_request, "decode_step on an empty sequence");
  const uint32_t ids[] = {id};
  return forward(seq, ids);
}

Tensor Model::forward(kv::SeqId seq, std::span<const uint32_t> ids) {
  const uint32_t first = cache_->length(seq);
  const auto t = static_cast<uint32_t>(ids.size());
  if (uint64_t{first} + t > cfg_.context_window) {
    throw Error(Errc::context_overflow, "sequence of " + std::to_string(first) + " + " +
                                            std::to_string(t) + " tokens exceeds the context window of " +
                                            std::to_string(cfg_.context_window));
  }
  for (uint32_t id : ids) {
    if (id >= cfg_.vocab_size) throw Error(Errc::id_out_of_range, "token id " + std::to_string(id));
  }
  // Reserve the KV rows before any compute so CacheFull leaves nothing behind.
  cache_->extend(seq, t);

  try {
    const uint32_t hd = cfg_.head_dim;
    std::vector<uint32_t> positions(t);
    std::iota(positions.begin(), positions.end(), first);

    Tensor residual = kernels::embedding_lookup(embed_, ids);
    Tensor h = kernels::rmsnorm(residual, layers_[0].input_norm, cfg_.norm_eps);
    for (uint32_t l = 0; l < cfg_.num_layers; ++l) {
      const LayerWeights& w = layers_[l];
      Tensor q = kernels::rope_apply(w.q_proj.apply(h).reshape({t, cfg_.num_heads, hd}), positions,
                                     cfg_.rope_theta);
      Tensor k = kernels::rope_apply(w.k_proj.apply(h).reshape({t, cfg_.num_kv_heads, hd}), positions,
                                     cfg_.rope_theta);
      Tensor v = w.v_proj.apply(h);
      cache_->write(seq, l, first, k, v);
      Tensor attn = kernels::paged_attention(q, cache_->view(seq, l), first + t)
                        .reshape({t, cfg_.num_heads * hd});
      auto post = kernels::fused_residual_rmsnorm(w.o_proj.apply(attn), residual, w.post_norm,
                                                  cfg_.norm_eps);
      Tensor act = kernels::silu_mul(w.gate_proj.apply(post.normed), w.up_proj.apply(post.normed));
      const Tensor& next_norm = l + 1 < cfg_.num_layers ? layers_[l + 1].input_norm : final_norm_;
      auto out = kernels::fused_residual_rmsnorm(w.down_proj.apply(act), post.sum, next_norm,
                                                 cfg_.norm_eps);
      residual = std::move(out.sum);
      h = std::move(out.normed);
    }
    Tensor last = t == 1 ? std::move(h) : kernels::slice_rows(h, t - 1, 1);
    return kernels::gemm(last, lm_head_).reshape({cfg_.vocab_size});
  } catch (...) {
    cache_->truncate(seq, first);
    throw;
  }
}

}  // namespace ember::model
