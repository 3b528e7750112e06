// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "ember/kernels/tensor.h"

namespace ember::kernels {

// C[m,n] = A[m,k] * B[k,n] through the tiled kernel.
Tensor gemm(const Tensor& a, const Tensor& b);

// y = W x with W dequantized on the fly. x is [cols] or [batch, cols];
// the result is [rows] or [batch, rows].
Tensor dequant_matvec(const QuantTensor& w, const Tensor& x);

// Row-wise over the last dimension of x ([n] or [rows, n]).
Tensor rmsnorm(const Tensor& x, const Tensor& weight, float eps);

struct ResidualNorm {
  Tensor sum;
  Tensor normed;
};
ResidualNorm fused_residual_rmsnorm(const Tensor& x, const Tensor& residual, const Tensor& weight,
                                    float eps);

Tensor softmax_rows(const Tensor& x);

// qk is [heads, head_dim] at one position, or [rows, heads, head_dim] with
// one position per row.
Tensor rope_apply(const Tensor& qk, uint32_t position, float theta);
Tensor rope_apply(const Tensor& qk, std::span<const uint32_t> positions, float theta);

// One sequence's keys and values for one layer, addressed through its pages.
struct PagedKvView {
  gpu::DeviceBuffer k_pool;
  gpu::DeviceBuffer v_pool;
  std::span<const uint32_t> pages;
  uint32_t page_size = 16;
  uint32_t num_kv_heads = 0;
  uint32_t head_dim = 0;
};

// Marks a page-table entry with no physical page behind it.
inline constexpr uint32_t kNoPage = 0xffffffffu;

// q is [heads, head_dim] (one query at position seq_len-1) or
// [n, heads, head_dim] (the last n positions, causally masked).
Tensor paged_attention(const Tensor& q, const PagedKvView& kv, uint32_t seq_len);

Tensor embedding_lookup(const Tensor& table, std::span<const uint32_t> ids);
Tensor silu_mul(const Tensor& gate, const Tensor& up);

// Rows [first, first+count) of a [rows, n] tensor as a new [count, n] tensor.
Tensor slice_rows(const Tensor& x, uint32_t first, uint32_t count);

void fill_zero(gpu::Device& device, const gpu::DeviceBuffer& buffer);

// Writes row t of k_new/v_new ([tokens, row_elems]) to slot slots[t] of each pool.
void kv_append(gpu::Device& device, const gpu::DeviceBuffer& k_pool,
               const gpu::DeviceBuffer& v_pool, std::span<const uint32_t> slots,
               const Tensor& k_new, const Tensor& v_new);

void page_copy(gpu::Device& device, const gpu::DeviceBuffer& k_pool,
               const gpu::DeviceBuffer& v_pool, uint32_t src_page, uint32_t dst_page,
               uint32_t page_elems);

}  // namespace ember::kernels
