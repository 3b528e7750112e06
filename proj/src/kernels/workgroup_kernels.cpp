// SPDX-License-Identifier: Apache-2.0
//
// Workgroup bodies for the gpu backend. Each function is a line-for-line
// rendering of shaders/<name>.wgsl: `var<workgroup>` arrays become locals,
// per-invocation registers become arrays indexed by local_invocation_index,
// and each barrier-separated phase is a loop over the invocations.

#include <array>
#include <cmath>
#include <limits>

#include "ember/half.h"
#include "ember/kernels/builtin.h"
#include "ember/kernels/params.h"

namespace ember::kernels {

namespace {

using gpu::KernelArgs;
using gpu::WorkgroupContext;

constexpr uint32_t kLinear = kLinearWorkgroup;

uint32_t linear_base(const WorkgroupContext& ctx) {
  const auto& id = ctx.workgroup_id;
  const auto& n = ctx.num_workgroups;
  return ((id.z * n.y + id.y) * n.x + id.x) * ctx.workgroup_size.x;
}

// Tree reduction over kLinear partial sums held in workgroup memory.
float reduce_sum(std::array<float, kLinear>& partial) {
  for (uint32_t stride = kLinear / 2; stride > 0; stride /= 2) {
    for (uint32_t lid = 0; lid < stride; ++lid) partial[lid] += partial[lid + stride];
    // workgroupBarrier()
  }
  return partial[0];
}

float reduce_max(std::array<float, kLinear>& partial) {
  for (uint32_t stride = kLinear / 2; stride > 0; stride /= 2) {
    for (uint32_t lid = 0; lid < stride; ++lid) {
      partial[lid] = std::max(partial[lid], partial[lid + stride]);
    }
  }
  return partial[0];
}

void fill_zero(const KernelArgs& args, const WorkgroupContext& ctx) {
  const auto p = args.uniform<FillParams>(1);
  auto data = args.rw<uint32_t>(0);
  const uint32_t base = linear_base(ctx);
  for (uint32_t lid = 0; lid < kLinear; ++lid) {
    const uint32_t i = base + lid;
    if (i < p.count) data[i] = 0;
  }
}

// 32x32 output tile per workgroup, 8x8 invocations each owning a 4x4 block,
// K staged through workgroup memory 32 columns at a time.
void gemm(const KernelArgs& args, const WorkgroupContext& ctx) {
  constexpr uint32_t T = kGemmTile;
  constexpr uint32_t R = kGemmThreadTile;
  constexpr uint32_t kThreads = (T / R) * (T / R);
  const auto p = args.uniform<GemmParams>(3);
  const auto a = args.ro<float>(0);
  const auto b = args.ro<float>(1);
  auto c = args.rw<float>(2);

  std::array<float, T * T> tile_a;
  std::array<float, T * T> tile_b;
  std::array<std::array<float, R * R>, kThreads> acc{};

  const uint32_t row0 = ctx.workgroup_id.y * T;
  const uint32_t col0 = ctx.workgroup_id.x * T;
  for (uint32_t k0 = 0; k0 < p.k; k0 += T) {
    for (uint32_t lid = 0; lid < kThreads; ++lid) {
      for (uint32_t e = lid; e < T * T; e += kThreads) {
        const uint32_t r = e / T;
        const uint32_t cc = e % T;
        const uint32_t ar = row0 + r, ac = k0 + cc;
        tile_a[e] = (ar < p.m && ac < p.k) ? a[size_t{ar} * p.k + ac] : 0.0f;
        const uint32_t br = k0 + r, bc = col0 + cc;
        tile_b[e] = (br < p.k && bc < p.n) ? b[size_t{br} * p.n + bc] : 0.0f;
      }
    }
    // workgroupBarrier()
    for (uint32_t lid = 0; lid < kThreads; ++lid) {
      const uint32_t ty = lid / (T / R);
      const uint32_t tx = lid % (T / R);
      auto& reg = acc[lid];
      for (uint32_t kk = 0; kk < T; ++kk) {
        std::array<float, R> av, bv;
        for (uint32_t i = 0; i < R; ++i) av[i] = tile_a[(ty * R + i) * T + kk];
        for (uint32_t j = 0; j < R; ++j) bv[j] = tile_b[kk * T + tx * R + j];
        for (uint32_t i = 0; i < R; ++i) {
          for (uint32_t j = 0; j < R; ++j) reg[i * R + j] += av[i] * bv[j];
        }
      }
    }
    // workgroupBarrier()
  }
  for (uint32_t lid = 0; lid < kThreads; ++lid) {
    const uint32_t ty = lid / (T / R);
    const uint32_t tx = lid % (T / R);
    for (uint32_t i = 0; i < R; ++i) {
      for (uint32_t j = 0; j < R; ++j) {
        const uint32_t r = row0 + ty * R + i;
        const uint32_t cc = col0 + tx * R + j;
        if (r < p.m && cc < p.n) c[size_t{r} * p.n + cc] = acc[lid][i * R + j];
      }
    }
  }
}

// One workgroup per (row, batch item). Invocations stride over quantization
// groups, dequantizing nibbles in registers, then reduce.
void dequant_matvec(const KernelArgs& args, const WorkgroupContext& ctx) {
  const auto p = args.uniform<DequantParams>(4);
  const auto packed = args.ro<uint32_t>(0);
  const auto scales = args.ro<uint32_t>(1);
  const auto x = args.ro<float>(2);
  auto y = args.rw<float>(3);
  const uint32_t row = ctx.workgroup_id.x;
  const uint32_t item = ctx.workgroup_id.y;
  if (row >= p.rows || item >= p.batch) return;
  const uint32_t groups = p.cols / kQuantGroup;
  const uint32_t words_per_group = kQuantGroup / 8;

  std::array<float, kLinear> partial;
  for (uint32_t lid = 0; lid < kLinear; ++lid) {
    float sum = 0.0f;
    for (uint32_t g = lid; g < groups; g += kLinear) {
      const uint32_t scale_index = row * groups + g;
      const uint32_t sw = scales[scale_index / 2];
      const float scale =
          half_to_float(static_cast<uint16_t>(scale_index % 2 == 0 ? sw & 0xffffu : sw >> 16));
      const uint32_t word0 = (row * p.cols + g * kQuantGroup) / 8;
      const float* xg = x.data() + size_t{item} * p.cols + g * kQuantGroup;
      float group_sum = 0.0f;
      for (uint32_t w = 0; w < words_per_group; ++w) {
        const uint32_t bits = packed[word0 + w];
        for (uint32_t n = 0; n < 8; ++n) {
          const float code = static_cast<float>((bits >> (4 * n)) & 0xfu);
          group_sum += (code - 8.0f) * xg[w * 8 + n];
        }
      }
      sum += scale * group_sum;
    }
    partial[lid] = sum;
  }
  // workgroupBarrier()
  const float total = reduce_sum(partial);
  y[size_t{item} * p.rows + row] = total;
}

void rmsnorm_row(std::span<const float> x, std::span<const float> w, std::span<float> out,
                 uint32_t n, uint32_t row, float eps) {
  const size_t base = size_t{row} * n;
  std::array<float, kLinear> partial;
  for (uint32_t lid = 0; lid < kLinear; ++lid) {
    float ss = 0.0f;
    for (uint32_t i = lid; i < n; i += kLinear) ss += x[base + i] * x[base + i];
    partial[lid] = ss;
  }
  const float inv = 1.0f / std::sqrt(reduce_sum(partial) / static_cast<float>(n) + eps);
  for (uint32_t lid = 0; lid < kLinear; ++lid) {
    for (uint32_t i = lid; i < n; i += kLinear) out[base + i] = w[i] * (x[base + i] * inv);
  }
}

void rmsnorm(const KernelArgs& args, const WorkgroupContext& ctx) {
  const auto p = args.uniform<NormParams>(3);
  if (ctx.workgroup_id.x >= p.rows) return;
  rmsnorm_row(args.ro<float>(0), args.ro<float>(1), args.rw<float>(2), p.n, ctx.workgroup_id.x,
              p.eps);
}

void fused_residual_rmsnorm(const KernelArgs& args, const WorkgroupContext& ctx) {
  const auto p = args.uniform<NormParams>(5);
  const uint32_t row = ctx.workgroup_id.x;
  if (row >= p.rows) return;
  const auto x = args.ro<float>(0);
  const auto res = args.ro<float>(1);
  auto sum = args.rw<float>(3);
  const size_t base = size_t{row} * p.n;
  for (uint32_t lid = 0; lid < kLinear; ++lid) {
    for (uint32_t i = lid; i < p.n; i += kLinear) sum[base + i] = x[base + i] + res[base + i];
  }
  // storageBarrier(): each invocation re-reads only elements it wrote.
  rmsnorm_row(sum, args.ro<float>(2), args.rw<float>(4), p.n, row, p.eps);
}

void softmax_rows(const KernelArgs& args, const WorkgroupContext& ctx) {
  const auto p = args.uniform<SoftmaxParams>(2);
  const uint32_t row = ctx.workgroup_id.x;
  if (row >= p.m) return;
  const auto x = args.ro<float>(0);
  auto y = args.rw<float>(1);
  const size_t base = size_t{row} * p.n;
  std::array<float, kLinear> partial;
  for (uint32_t lid = 0; lid < kLinear; ++lid) {
    float mx = -std::numeric_limits<float>::infinity();
    for (uint32_t i = lid; i < p.n; i += kLinear) mx = std::max(mx, x[base + i]);
    partial[lid] = mx;
  }
  const float row_max = reduce_max(partial);
  for (uint32_t lid = 0; lid < kLinear; ++lid) {
    float s = 0.0f;
    for (uint32_t i = lid; i < p.n; i += kLinear) s += std::exp(x[base + i] - row_max);
    partial[lid] = s;
  }
  const float denom = reduce_sum(partial);
  for (uint32_t lid = 0; lid < kLinear; ++lid) {
    for (uint32_t i = lid; i < p.n; i += kLinear) y[base + i] = std::exp(x[base + i] - row_max) / denom;
  }
}

void rope_apply(const KernelArgs& args, const WorkgroupContext& ctx) {
  const auto p = args.uniform<RopeParams>(3);
  const auto in = args.ro<float>(0);
  const auto pos = args.ro<uint32_t>(1);
  auto out = args.rw<float>(2);
  const uint32_t half = p.head_dim / 2;
  const uint32_t total = p.rows * p.heads * half;
  const uint32_t base = linear_base(ctx);
  for (uint32_t lid = 0; lid < kLinear; ++lid) {
    const uint32_t idx = base + lid;
    if (idx >= total) continue;
    const uint32_t i = idx % half;
    const uint32_t row = idx / (half * p.heads);
    const float freq = std::pow(p.theta, -2.0f * static_cast<float>(i) / static_cast<float>(p.head_dim));
    const float angle = static_cast<float>(pos[row]) * freq;
    const float cs = std::cos(angle);
    const float sn = std::sin(angle);
    const size_t e = size_t{idx} * 2;
    const float x0 = in[e];
    const float x1 = in[e + 1];
    out[e] = x0 * cs - x1 * sn;
    out[e + 1] = x0 * sn + x1 * cs;
  }
}

// One workgroup per (head, query). Keys are visited a tile of 32 positions at
// a time through the page table; a running max and denominator rescale the
// accumulator so no full score row is ever stored.
void paged_attention(const KernelArgs& args, const WorkgroupContext& ctx) {
  constexpr uint32_t T = kAttentionTile;
  constexpr uint32_t kDimsPerThread = kMaxHeadDim / T;
  const auto p = args.uniform<AttentionParams>(5);
  const auto q = args.ro<float>(0);
  const auto k_pool = args.ro<float>(1);
  const auto v_pool = args.ro<float>(2);
  const auto table = args.ro<uint32_t>(3);
  auto out = args.rw<float>(4);

  const uint32_t head = ctx.workgroup_id.x;
  const uint32_t query = ctx.workgroup_id.y;
  if (head >= p.num_heads || query >= p.num_queries) return;
  const uint32_t kv_head = head * p.num_kv_heads / p.num_heads;
  const uint32_t len = p.kv_len_first + query;
  const uint32_t d = p.head_dim;
  const float* qv = q.data() + (size_t{query} * p.num_heads + head) * d;

  std::array<float, T> scores;
  std::array<float, T> probs;
  std::array<std::array<float, kDimsPerThread>, T> acc{};
  std::array<float, T> run_max;
  std::array<float, T> run_sum{};
  run_max.fill(-std::numeric_limits<float>::infinity());

  auto row_offset = [&](uint32_t pos) {
    const size_t slot = size_t{table[pos / p.page_size]} * p.page_size + pos % p.page_size;
    return (slot * p.num_kv_heads + kv_head) * d;
  };

  for (uint32_t t0 = 0; t0 < len; t0 += T) {
    for (uint32_t lid = 0; lid < T; ++lid) {
      const uint32_t pos = t0 + lid;
      float s = -std::numeric_limits<float>::infinity();
      if (pos < len) {
        const size_t off = row_offset(pos);
        float dot = 0.0f;
        for (uint32_t i = 0; i < d; ++i) dot += qv[i] * k_pool[off + i];
        s = dot * p.scale;
      }
      scores[lid] = s;
    }
    // workgroupBarrier()
    std::array<float, T> alpha;
    for (uint32_t lid = 0; lid < T; ++lid) {
      float tile_max = -std::numeric_limits<float>::infinity();
      for (uint32_t j = 0; j < T; ++j) tile_max = std::max(tile_max, scores[j]);
      const float new_max = std::max(run_max[lid], tile_max);
      alpha[lid] = std::exp(run_max[lid] - new_max);
      run_max[lid] = new_max;
      probs[lid] = std::exp(scores[lid] - new_max);
    }
    // workgroupBarrier()
    for (uint32_t lid = 0; lid < T; ++lid) {
      float tile_sum = 0.0f;
      for (uint32_t j = 0; j < T; ++j) tile_sum += probs[j];
      run_sum[lid] = run_sum[lid] * alpha[lid] + tile_sum;
      for (uint32_t k = 0; k < kDimsPerThread; ++k) {
        const uint32_t dim = lid + k * T;
        if (dim >= d) break;
        float v_acc = acc[lid][k] * alpha[lid];
        for (uint32_t j = 0; j < T && t0 + j < len; ++j) {
          v_acc += probs[j] * v_pool[row_offset(t0 + j) + dim];
        }
        acc[lid][k] = v_acc;
      }
    }
    // workgroupBarrier()
  }
  float* o = out.data() + (size_t{query} * p.num_heads + head) * d;
  for (uint32_t lid = 0; lid < T; ++lid) {
    for (uint32_t k = 0; k < kDimsPerThread; ++k) {
      const uint32_t dim = lid + k * T;
      if (dim >= d) break;
      o[dim] = acc[lid][k] / run_sum[lid];
    }
  }
}

void kv_append(const KernelArgs& args, const WorkgroupContext& ctx) {
  const auto p = args.uniform<KvAppendParams>(5);
  const auto k_new = args.ro<float>(0);
  const auto v_new = args.ro<float>(1);
  const auto slots = args.ro<uint32_t>(2);
  auto k_pool = args.rw<float>(3);
  auto v_pool = args.rw<float>(4);
  const uint32_t base = linear_base(ctx);
  const uint32_t total = p.tokens * p.row_elems;
  for (uint32_t lid = 0; lid < kLinear; ++lid) {
    const uint32_t idx = base + lid;
    if (idx >= total) continue;
    const uint32_t t = idx / p.row_elems;
    const uint32_t i = idx % p.row_elems;
    const size_t dst = size_t{slots[t]} * p.row_elems + i;
    if (i == 0 || lid == 0) {
      // Write-barrier validation for the row, not part of the shader.
      args.check_writable(3, dst * 4, (p.row_elems - i) * 4);
      args.check_writable(4, dst * 4, (p.row_elems - i) * 4);
    }
    k_pool[dst] = k_new[idx];
    v_pool[dst] = v_new[idx];
  }
}

void page_copy(const KernelArgs& args, const WorkgroupContext& ctx) {
  const auto p = args.uniform<PageCopyParams>(2);
  auto k_pool = args.rw<float>(0);
  auto v_pool = args.rw<float>(1);
  const uint32_t base = linear_base(ctx);
  if (base < p.page_elems) {
    const uint64_t n = std::min(kLinear, p.page_elems - base);
    args.check_writable(0, (uint64_t{p.dst_page} * p.page_elems + base) * 4, n * 4);
    args.check_writable(1, (uint64_t{p.dst_page} * p.page_elems + base) * 4, n * 4);
  }
  for (uint32_t lid = 0; lid < kLinear; ++lid) {
    const uint32_t i = base + lid;
    if (i >= p.page_elems) continue;
    k_pool[size_t{p.dst_page} * p.page_elems + i] = k_pool[size_t{p.src_page} * p.page_elems + i];
    v_pool[size_t{p.dst_page} * p.page_elems + i] = v_pool[size_t{p.src_page} * p.page_elems + i];
  }
}

void embedding_lookup(const KernelArgs& args, const WorkgroupContext& ctx) {
  const auto p = args.uniform<EmbeddingParams>(3);
  const auto table = args.ro<float>(0);
  const auto ids = args.ro<uint32_t>(1);
  auto out = args.rw<float>(2);
  const uint32_t base = linear_base(ctx);
  for (uint32_t lid = 0; lid < kLinear; ++lid) {
    const uint32_t idx = base + lid;
    if (idx >= p.tokens * p.hidden) continue;
    const uint32_t t = idx / p.hidden;
    const uint32_t i = idx % p.hidden;
    const uint32_t id = ids[t];
    out[idx] = id < p.vocab ? table[size_t{id} * p.hidden + i] : 0.0f;
  }
}

void silu_mul(const KernelArgs& args, const WorkgroupContext& ctx) {
  const auto p = args.uniform<SiluMulParams>(3);
  const auto gate = args.ro<float>(0);
  const auto up = args.ro<float>(1);
  auto out = args.rw<float>(2);
  const uint32_t base = linear_base(ctx);
  for (uint32_t lid = 0; lid < kLinear; ++lid) {
    const uint32_t i = base + lid;
    if (i >= p.count) continue;
    const float g = gate[i];
    out[i] = g / (1.0f + std::exp(-g)) * up[i];
  }
}

}  // namespace

std::vector<std::pair<const char*, gpu::WorkgroupKernel>> workgroup_kernels() {
  return {
      {"fill_zero", fill_zero},
      {"gemm", gemm},
      {"dequant_matvec", dequant_matvec},
      {"rmsnorm", rmsnorm},
      {"fused_residual_rmsnorm", fused_residual_rmsnorm},
      {"softmax_rows", softmax_rows},
      {"rope_apply", rope_apply},
      {"paged_attention", paged_attention},
      {"kv_append", kv_append},
      {"page_copy", page_copy},
      {"embedding_lookup", embedding_lookup},
      {"silu_mul", silu_mul},
  };
}

}  // namespace ember::kernels
