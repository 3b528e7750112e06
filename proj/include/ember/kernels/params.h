// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

// Uniform blocks, laid out exactly like the `Params` structs in shaders/*.wgsl
// (4-byte scalars, padded to 16 bytes).
namespace ember::kernels {

struct FillParams {
  uint32_t count;
  uint32_t pad0, pad1, pad2;
};

struct GemmParams {
  uint32_t m, k, n;
  uint32_t pad0;
};

struct DequantParams {
  uint32_t rows, cols, batch;
  uint32_t pad0;
};

struct NormParams {
  uint32_t n, rows;
  float eps;
  uint32_t pad0;
};

struct SoftmaxParams {
  uint32_t m, n;
  uint32_t pad0, pad1;
};

struct RopeParams {
  uint32_t rows, heads, head_dim;
  float theta;
};

struct AttentionParams {
  uint32_t num_queries, num_heads, num_kv_heads, head_dim;
  uint32_t page_size, kv_len_first, num_pages;
  float scale;
};

struct KvAppendParams {
  uint32_t tokens, row_elems;
  uint32_t pad0, pad1;
};

struct PageCopyParams {
  uint32_t src_page, dst_page, page_elems;
  uint32_t pad0;
};

struct EmbeddingParams {
  uint32_t tokens, hidden, vocab;
  uint32_t pad0;
};

struct SiluMulParams {
  uint32_t count;
  uint32_t pad0, pad1, pad2;
};

inline constexpr uint32_t kGemmTile = 32;
inline constexpr uint32_t kGemmThreadTile = 4;
inline constexpr uint32_t kQuantGroup = 32;
inline constexpr uint32_t kAttentionTile = 32;
inline constexpr uint32_t kMaxHeadDim = 256;
inline constexpr uint32_t kLinearWorkgroup = 64;

}  // namespace ember::kernels
