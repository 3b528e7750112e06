// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "ember/gpu/device.h"
#include "ember/kernels/ops.h"
#include "ember/kernels/tensor.h"

namespace ember::kv {

struct CacheConfig {
  uint32_t num_layers = 0;
  uint32_t num_kv_heads = 0;
  uint32_t head_dim = 0;
  uint32_t page_size = 16;
  uint32_t max_pages = 0;

  // Floats per page in one pool (K or V) of one layer.
  uint64_t page_elems() const { return uint64_t{page_size} * num_kv_heads * head_dim; }
  // K and V bytes of one page in one layer.
  uint64_t page_bytes() const { return 2 * page_elems() * sizeof(float); }
};

using SeqId = uint64_t;

// Key/value storage split into fixed-size token pages. Every layer owns a K
// pool and a V pool laid out [page][slot][kv_head][head_dim]; a sequence is a
// length plus a page table. Pages are refcounted so fork is metadata-only and
// a shared tail page is copied at the first append that would write it.
class PagedKvCache {
 public:
  PagedKvCache(const CacheConfig& cfg, std::shared_ptr<gpu::Device> device);

  const CacheConfig& config() const { return cfg_; }

  SeqId add_sequence();
  SeqId fork(SeqId src);
  void remove_sequence(SeqId seq);
  bool contains(SeqId seq) const { return seqs_.count(seq) != 0; }

  // Grows `seq` by `tokens` positions and returns the physical slot of each
  // new position. Allocates pages as they are crossed and copies a shared
  // partial tail page first. On CacheFull nothing changes.
  std::vector<uint32_t> extend(SeqId seq, uint32_t tokens);

  // Shrinks `seq` to `length` positions, releasing pages no longer covered.
  void truncate(SeqId seq, uint32_t length);

  // Stores rows of k/v ([t, kv_heads*head_dim] or [t, kv_heads, head_dim])
  // at positions [first_pos, first_pos+t) of `seq`, which must already exist.
  void write(SeqId seq, uint32_t layer, uint32_t first_pos, const kernels::Tensor& k,
             const kernels::Tensor& v);

  // extend + write for every layer. k_layers[l]/v_layers[l] hold the new rows.
  void append(SeqId seq, std::span<const kernels::Tensor> k_layers,
              std::span<const kernels::Tensor> v_layers);

  uint32_t length(SeqId seq) const;
  const std::vector<uint32_t>& page_table(SeqId seq) const;
  // True when the i-th page of seq is referenced by another sequence too.
  bool page_shared(SeqId seq, size_t i) const;
  kernels::PagedKvView view(SeqId seq, uint32_t layer) const;

  // Contiguous copy of a sequence's keys and values, [length][kv_heads][head_dim].
  std::vector<float> read_keys(SeqId seq, uint32_t layer) const;
  std::vector<float> read_values(SeqId seq, uint32_t layer) const;

  uint32_t free_pages() const { return static_cast<uint32_t>(free_.size()); }
  uint32_t refcount(uint32_t page) const { return refcount_.at(page); }
  size_t num_sequences() const { return seqs_.size(); }
  // free pages + pages with refcount > 0 == max_pages, and every page table
  // agrees with the refcounts.
  bool conserved() const;

  gpu::Device& device() const { return *device_; }
  const std::shared_ptr<gpu::Device>& device_ptr() const { return device_; }

 private:
  struct Sequence {
    uint32_t length = 0;
    std::vector<uint32_t> pages;
  };

  Sequence& get(SeqId seq, const char* op);
  const Sequence& get(SeqId seq, const char* op) const;
  uint32_t take_page();
  void release_page(uint32_t page);
  void refresh_guards();
  std::vector<float> read_pool(const gpu::Buffer& pool, SeqId seq) const;

  CacheConfig cfg_;
  std::shared_ptr<gpu::Device> device_;
  std::vector<gpu::Buffer> k_pools_;
  std::vector<gpu::Buffer> v_pools_;
  std::vector<uint32_t> refcount_;
  std::vector<uint32_t> free_;  // stack; lowest index handed out first
  std::map<SeqId, Sequence> seqs_;
  SeqId next_id_ = 1;
};

}  // namespace ember::kv
