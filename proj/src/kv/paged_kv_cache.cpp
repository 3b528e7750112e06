// SPDX-License-Identifier: Apache-2.0
#include "ember/kv/paged_kv_cache.h"

#include <string>

#include "ember/error.h"

namespace ember::kv {

PagedKvCache::PagedKvCache(const CacheConfig& cfg, std::shared_ptr<gpu::Device> device)
    : cfg_(cfg), device_(std::move(device)) {
  if (cfg_.num_layers == 0 || cfg_.num_kv_heads == 0 || cfg_.head_dim == 0 || cfg_.page_size == 0 ||
      cfg_.max_pages == 0) {
    throw Error(Errc::invalid_artifact, "cache config fields must be positive");
  }
  const uint64_t pool_bytes = uint64_t{cfg_.max_pages} * cfg_.page_elems() * sizeof(float);
  if (pool_bytes > device_->limits().max_buffer_bytes) {
    throw Error(Errc::out_of_memory, "kv pool of " + std::to_string(pool_bytes) +
                                         " bytes exceeds the device buffer limit");
  }
  if (2 * pool_bytes * cfg_.num_layers > device_->limits().max_total_bytes - device_->live_bytes()) {
    throw Error(Errc::out_of_memory, "kv cache does not fit in device memory");
  }
  for (uint32_t l = 0; l < cfg_.num_layers; ++l) {
    k_pools_.emplace_back(device_, pool_bytes, gpu::kStorageUsage);
    v_pools_.emplace_back(device_, pool_bytes, gpu::kStorageUsage);
  }
  refcount_.assign(cfg_.max_pages, 0);
  for (uint32_t p = cfg_.max_pages; p-- > 0;) free_.push_back(p);
}

PagedKvCache::Sequence& PagedKvCache::get(SeqId seq, const char* op) {
  auto it = seqs_.find(seq);
  if (it == seqs_.end()) {
    throw Error(Errc::unknown_sequence, std::string(op) + ": unknown sequence " + std::to_string(seq));
  }
  return it->second;
}

const PagedKvCache::Sequence& PagedKvCache::get(SeqId seq, const char* op) const {
  return const_cast<PagedKvCache*>(this)->get(seq, op);
}

SeqId PagedKvCache::add_sequence() {
  const SeqId id = next_id_++;
  seqs_[id];
  return id;
}

SeqId PagedKvCache::fork(SeqId src) {
  const Sequence copy = get(src, "fork");
  for (uint32_t p : copy.pages) ++refcount_[p];
  const SeqId id = next_id_++;
  seqs_[id] = copy;
  refresh_guards();
  return id;
}

void PagedKvCache::remove_sequence(SeqId seq) {
  const Sequence s = get(seq, "remove_sequence");
  seqs_.erase(seq);
  for (uint32_t p : s.pages) release_page(p);
  refresh_guards();
}

uint32_t PagedKvCache::take_page() {
  const uint32_t p = free_.back();
  free_.pop_back();
  refcount_[p] = 1;
  return p;
}

void PagedKvCache::release_page(uint32_t page) {
  if (--refcount_[page] == 0) free_.push_back(page);
}

std::vector<uint32_t> PagedKvCache::extend(SeqId seq, uint32_t tokens) {
  Sequence& s = get(seq, "extend");
  const uint32_t ps = cfg_.page_size;
  const uint64_t new_len = uint64_t{s.length} + tokens;
  const uint64_t new_pages = (new_len + ps - 1) / ps - s.pages.size();
  const bool cow = tokens > 0 && s.length % ps != 0 && refcount_[s.pages.back()] > 1;
  if (new_pages + (cow ? 1 : 0) > free_.size()) {
    throw Error(Errc::cache_full, "kv cache full: need " + std::to_string(new_pages + (cow ? 1 : 0)) +
                                      " pages, " + std::to_string(free_.size()) + " free");
  }

  bool guards_dirty = new_pages > 0;
  if (cow) {
    const uint32_t shared = s.pages.back();
    const uint32_t fresh = take_page();
    for (uint32_t l = 0; l < cfg_.num_layers; ++l) {
      kernels::page_copy(*device_, k_pools_[l].desc(), v_pools_[l].desc(), shared, fresh,
                         static_cast<uint32_t>(cfg_.page_elems()));
    }
    release_page(shared);
    s.pages.back() = fresh;
    guards_dirty = true;
  }
  for (uint64_t i = 0; i < new_pages; ++i) s.pages.push_back(take_page());

  std::vector<uint32_t> slots;
  slots.reserve(tokens);
  for (uint32_t pos = s.length; pos < new_len; ++pos) slots.push_back(s.pages[pos / ps] * ps + pos % ps);
  s.length = static_cast<uint32_t>(new_len);
  if (guards_dirty) refresh_guards();
  return slots;
}

void PagedKvCache::truncate(SeqId seq, uint32_t length) {
  Sequence& s = get(seq, "truncate");
  if (length >= s.length) return;
  const size_t keep = (size_t{length} + cfg_.page_size - 1) / cfg_.page_size;
  while (s.pages.size() > keep) {
    release_page(s.pages.back());
    s.pages.pop_back();
  }
  s.length = length;
  refresh_guards();
}

void PagedKvCache::write(SeqId seq, uint32_t layer, uint32_t first_pos, const kernels::Tensor& k,
                         const kernels::Tensor& v) {
  const Sequence& s = get(seq, "write");
  if (layer >= cfg_.num_layers) throw Error(Errc::shape_mismatch, "layer index out of range");
  const uint64_t row = uint64_t{cfg_.num_kv_heads} * cfg_.head_dim;
  if (k.numel() % row != 0 || k.numel() != v.numel()) {
    throw Error(Errc::shape_mismatch, "kv rows must be num_kv_heads*head_dim wide");
  }
  const auto t = static_cast<uint32_t>(k.numel() / row);
  if (uint64_t{first_pos} + t > s.length) {
    throw Error(Errc::unallocated_page, "kv write past the sequence length; extend first");
  }
  const uint32_t ps = cfg_.page_size;
  std::vector<uint32_t> slots(t);
  for (uint32_t i = 0; i < t; ++i) {
    const uint32_t pos = first_pos + i;
    slots[i] = s.pages[pos / ps] * ps + pos % ps;
  }
  kernels::kv_append(*device_, k_pools_[layer].desc(), v_pools_[layer].desc(), slots, k, v);
}

void PagedKvCache::append(SeqId seq, std::span<const kernels::Tensor> k_layers,
                          std::span<const kernels::Tensor> v_layers) {
  if (k_layers.size() != cfg_.num_layers || v_layers.size() != cfg_.num_layers) {
    throw Error(Errc::shape_mismatch, "append needs K and V for every layer");
  }
  const uint64_t row = uint64_t{cfg_.num_kv_heads} * cfg_.head_dim;
  const uint64_t t = k_layers[0].numel() / row;
  for (uint32_t l = 0; l < cfg_.num_layers; ++l) {
    if (k_layers[l].numel() != t * row || v_layers[l].numel() != t * row || t == 0) {
      throw Error(Errc::shape_mismatch, "every layer must carry the same number of rows");
    }
  }
  const uint32_t first = get(seq, "append").length;
  extend(seq, static_cast<uint32_t>(t));
  for (uint32_t l = 0; l < cfg_.num_layers; ++l) write(seq, l, first, k_layers[l], v_layers[l]);
}

uint32_t PagedKvCache::length(SeqId seq) const { return get(seq, "length").length; }

const std::vector<uint32_t>& PagedKvCache::page_table(SeqId seq) const {
  return get(seq, "page_table").pages;
}

bool PagedKvCache::page_shared(SeqId seq, size_t i) const {
  return refcount_[get(seq, "page_shared").pages.at(i)] > 1;
}

kernels::PagedKvView PagedKvCache::view(SeqId seq, uint32_t layer) const {
  const Sequence& s = get(seq, "view");
  return {k_pools_.at(layer).desc(), v_pools_.at(layer).desc(), s.pages, cfg_.page_size,
          cfg_.num_kv_heads, cfg_.head_dim};
}

std::vector<float> PagedKvCache::read_pool(const gpu::Buffer& pool, SeqId seq) const {
  const Sequence& s = get(seq, "read");
  const auto all = pool.download<float>();
  const uint64_t row = uint64_t{cfg_.num_kv_heads} * cfg_.head_dim;
  std::vector<float> out;
  out.reserve(s.length * row);
  for (uint32_t pos = 0; pos < s.length; ++pos) {
    const uint64_t slot = uint64_t{s.pages[pos / cfg_.page_size]} * cfg_.page_size + pos % cfg_.page_size;
    out.insert(out.end(), all.begin() + slot * row, all.begin() + (slot + 1) * row);
  }
  return out;
}

std::vector<float> PagedKvCache::read_keys(SeqId seq, uint32_t layer) const {
  return read_pool(k_pools_.at(layer), seq);
}

std::vector<float> PagedKvCache::read_values(SeqId seq, uint32_t layer) const {
  return read_pool(v_pools_.at(layer), seq);
}

bool PagedKvCache::conserved() const {
  std::vector<uint32_t> counted(cfg_.max_pages, 0);
  for (const auto& [id, s] : seqs_) {
    if (s.pages.size() != (uint64_t{s.length} + cfg_.page_size - 1) / cfg_.page_size) return false;
    for (uint32_t p : s.pages) ++counted[p];
  }
  if (counted != refcount_) return false;
  uint32_t in_use = 0;
  for (uint32_t c : refcount_) in_use += c > 0;
  std::vector<bool> seen(cfg_.max_pages, false);
  for (uint32_t p : free_) {
    if (refcount_[p] != 0 || seen[p]) return false;
    seen[p] = true;
  }
  return in_use + free_.size() == cfg_.max_pages;
}

// Bytes of shared pages are write-protected in every pool, so a kernel that
// tried to write one would fail instead of corrupting another sequence.
void PagedKvCache::refresh_guards() {
  const uint64_t page_bytes = cfg_.page_elems() * sizeof(float);
  std::vector<gpu::ByteRange> ranges;
  for (uint32_t p = 0; p < cfg_.max_pages; ++p) {
    if (refcount_[p] <= 1) continue;
    const uint64_t begin = p * page_bytes;
    if (!ranges.empty() && ranges.back().end == begin) {
      ranges.back().end += page_bytes;
    } else {
      ranges.push_back({begin, begin + page_bytes});
    }
  }
  for (uint32_t l = 0; l < cfg_.num_layers; ++l) {
    device_->set_write_guards(k_pools_[l].desc(), ranges);
    device_->set_write_guards(v_pools_[l].desc(), ranges);
  }
}

}  // namespace ember::kv
