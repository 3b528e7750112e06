// SPDX-License-Identifier: Apache-2.0
//
// Scalar oracles for every kernel, run by the cpu_reference backend. They read
// the same bindings and uniform blocks as the shaders but ignore the launch
// grid, and they favour plain loops with double accumulators over speed.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ember/half.h"
#include "ember/kernels/builtin.h"
#include "ember/kernels/params.h"

namespace ember::kernels {

namespace {

using gpu::KernelArgs;

float scale_at(std::span<const uint32_t> words, size_t index) {
  const uint32_t w = words[index / 2];
  const uint16_t h = static_cast<uint16_t>(index % 2 == 0 ? (w & 0xffffu) : (w >> 16));
  return half_to_float(h);
}

uint32_t code_at(std::span<const uint32_t> words, size_t index) {
  return (words[index / 8] >> (4 * (index % 8))) & 0xfu;
}

void fill_zero(const KernelArgs& args) {
  const auto p = args.uniform<FillParams>(1);
  auto data = args.rw<uint32_t>(0);
  for (uint32_t i = 0; i < p.count && i < data.size(); ++i) data[i] = 0;
}

void gemm(const KernelArgs& args) {
  const auto p = args.uniform<GemmParams>(3);
  const auto a = args.ro<float>(0);
  const auto b = args.ro<float>(1);
  auto c = args.rw<float>(2);
  for (uint32_t i = 0; i < p.m; ++i) {
    for (uint32_t j = 0; j < p.n; ++j) {
      double acc = 0.0;
      for (uint32_t t = 0; t < p.k; ++t) {
        acc += double{a[size_t{i} * p.k + t]} * b[size_t{t} * p.n + j];
      }
      c[size_t{i} * p.n + j] = static_cast<float>(acc);
    }
  }
}

void dequant_matvec(const KernelArgs& args) {
  const auto p = args.uniform<DequantParams>(4);
  const auto packed = args.ro<uint32_t>(0);
  const auto scales = args.ro<uint32_t>(1);
  const auto x = args.ro<float>(2);
  auto y = args.rw<float>(3);
  const uint32_t groups = p.cols / kQuantGroup;
  for (uint32_t b = 0; b < p.batch; ++b) {
    for (uint32_t r = 0; r < p.rows; ++r) {
      double acc = 0.0;
      for (uint32_t c = 0; c < p.cols; ++c) {
        const size_t idx = size_t{r} * p.cols + c;
        const double w = double{scale_at(scales, size_t{r} * groups + c / kQuantGroup)} *
                         (static_cast<int>(code_at(packed, idx)) - 8);
        acc += w * x[size_t{b} * p.cols + c];
      }
      y[size_t{b} * p.rows + r] = static_cast<float>(acc);
    }
  }
}

void rmsnorm_rows(std::span<const float> x, std::span<const float> w, std::span<float> out,
                  uint32_t n, uint32_t rows, float eps) {
  for (uint32_t r = 0; r < rows; ++r) {
    const float* row = x.data() + size_t{r} * n;
    double ss = 0.0;
    for (uint32_t i = 0; i < n; ++i) ss += double{row[i]} * row[i];
    const double inv = 1.0 / std::sqrt(ss / n + double{eps});
    for (uint32_t i = 0; i < n; ++i) {
      out[size_t{r} * n + i] = static_cast<float>(double{w[i]} * row[i] * inv);
    }
  }
}

void rmsnorm(const KernelArgs& args) {
  const auto p = args.uniform<NormParams>(3);
  rmsnorm_rows(args.ro<float>(0), args.ro<float>(1), args.rw<float>(2), p.n, p.rows, p.eps);
}

void fused_residual_rmsnorm(const KernelArgs& args) {
  const auto p = args.uniform<NormParams>(5);
  const auto x = args.ro<float>(0);
  const auto res = args.ro<float>(1);
  auto sum = args.rw<float>(3);
  const size_t total = size_t{p.n} * p.rows;
  for (size_t i = 0; i < total; ++i) sum[i] = x[i] + res[i];
  rmsnorm_rows(sum, args.ro<float>(2), args.rw<float>(4), p.n, p.rows, p.eps);
}

void softmax_rows(const KernelArgs& args) {
  const auto p = args.uniform<SoftmaxParams>(2);
  const auto x = args.ro<float>(0);
  auto y = args.rw<float>(1);
  for (uint32_t r = 0; r < p.m; ++r) {
    const float* row = x.data() + size_t{r} * p.n;
    double mx = -std::numeric_limits<double>::infinity();
    for (uint32_t i = 0; i < p.n; ++i) mx = std::max(mx, double{row[i]});
    double denom = 0.0;
    for (uint32_t i = 0; i < p.n; ++i) denom += std::exp(double{row[i]} - mx);
    for (uint32_t i = 0; i < p.n; ++i) {
      y[size_t{r} * p.n + i] = static_cast<float>(std::exp(double{row[i]} - mx) / denom);
    }
  }
}

void rope_apply(const KernelArgs& args) {
  const auto p = args.uniform<RopeParams>(3);
  const auto in = args.ro<float>(0);
  const auto pos = args.ro<uint32_t>(1);
  auto out = args.rw<float>(2);
  const uint32_t half = p.head_dim / 2;
  for (uint32_t r = 0; r < p.rows; ++r) {
    for (uint32_t h = 0; h < p.heads; ++h) {
      for (uint32_t i = 0; i < half; ++i) {
        const double freq = std::pow(double{p.theta}, -2.0 * i / p.head_dim);
        const double angle = static_cast<double>(pos[r]) * freq;
        const size_t base = (size_t{r} * p.heads + h) * p.head_dim + 2 * i;
        const double x0 = in[base];
        const double x1 = in[base + 1];
        out[base] = static_cast<float>(x0 * std::cos(angle) - x1 * std::sin(angle));
        out[base + 1] = static_cast<float>(x0 * std::sin(angle) + x1 * std::cos(angle));
      }
    }
  }
}

// Gathers keys/values through the page table into contiguous rows, then does
// an ordinary two-pass softmax.
void paged_attention(const KernelArgs& args) {
  const auto p = args.uniform<AttentionParams>(5);
  const auto q = args.ro<float>(0);
  const auto k_pool = args.ro<float>(1);
  const auto v_pool = args.ro<float>(2);
  const auto table = args.ro<uint32_t>(3);
  auto out = args.rw<float>(4);
  const uint32_t d = p.head_dim;
  for (uint32_t qi = 0; qi < p.num_queries; ++qi) {
    const uint32_t len = p.kv_len_first + qi;
    for (uint32_t h = 0; h < p.num_heads; ++h) {
      const uint32_t kvh = h * p.num_kv_heads / p.num_heads;
      const float* qv = q.data() + (size_t{qi} * p.num_heads + h) * d;
      std::vector<double> scores(len);
      std::vector<size_t> rows(len);
      for (uint32_t t = 0; t < len; ++t) {
        const size_t slot = size_t{table[t / p.page_size]} * p.page_size + t % p.page_size;
        rows[t] = (slot * p.num_kv_heads + kvh) * d;
        double dot = 0.0;
        for (uint32_t i = 0; i < d; ++i) dot += double{qv[i]} * k_pool[rows[t] + i];
        scores[t] = dot * p.scale;
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (double s : scores) mx = std::max(mx, s);
      double denom = 0.0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        denom += s;
      }
      float* o = out.data() + (size_t{qi} * p.num_heads + h) * d;
      for (uint32_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (uint32_t t = 0; t < len; ++t) acc += scores[t] * v_pool[rows[t] + i];
        o[i] = static_cast<float>(acc / denom);
      }
    }
  }
}

void kv_append(const KernelArgs& args) {
  const auto p = args.uniform<KvAppendParams>(5);
  const auto k_new = args.ro<float>(0);
  const auto v_new = args.ro<float>(1);
  const auto slots = args.ro<uint32_t>(2);
  auto k_pool = args.rw<float>(3);
  auto v_pool = args.rw<float>(4);
  for (uint32_t t = 0; t < p.tokens; ++t) {
    const size_t dst = size_t{slots[t]} * p.row_elems;
    const uint64_t bytes = uint64_t{p.row_elems} * sizeof(float);
    args.check_writable(3, dst * sizeof(float), bytes);
    args.check_writable(4, dst * sizeof(float), bytes);
    for (uint32_t i = 0; i < p.row_elems; ++i) {
      k_pool[dst + i] = k_new[size_t{t} * p.row_elems + i];
      v_pool[dst + i] = v_new[size_t{t} * p.row_elems + i];
    }
  }
}

void page_copy(const KernelArgs& args) {
  const auto p = args.uniform<PageCopyParams>(2);
  auto k_pool = args.rw<float>(0);
  auto v_pool = args.rw<float>(1);
  const size_t src = size_t{p.src_page} * p.page_elems;
  const size_t dst = size_t{p.dst_page} * p.page_elems;
  const uint64_t bytes = uint64_t{p.page_elems} * sizeof(float);
  args.check_writable(0, dst * sizeof(float), bytes);
  args.check_writable(1, dst * sizeof(float), bytes);
  for (uint32_t i = 0; i < p.page_elems; ++i) {
    k_pool[dst + i] = k_pool[src + i];
    v_pool[dst + i] = v_pool[src + i];
  }
}

void embedding_lookup(const KernelArgs& args) {
  const auto p = args.uniform<EmbeddingParams>(3);
  const auto table = args.ro<float>(0);
  const auto ids = args.ro<uint32_t>(1);
  auto out = args.rw<float>(2);
  for (uint32_t t = 0; t < p.tokens; ++t) {
    for (uint32_t i = 0; i < p.hidden; ++i) {
      out[size_t{t} * p.hidden + i] =
          ids[t] < p.vocab ? table[size_t{ids[t]} * p.hidden + i] : 0.0f;
    }
  }
}

void silu_mul(const KernelArgs& args) {
  const auto p = args.uniform<SiluMulParams>(3);
  const auto gate = args.ro<float>(0);
  const auto up = args.ro<float>(1);
  auto out = args.rw<float>(2);
  for (uint32_t i = 0; i < p.count; ++i) {
    const double g = gate[i];
    out[i] = static_cast<float>(g / (1.0 + std::exp(-g)) * up[i]);
  }
}

}  // namespace

std::vector<std::pair<const char*, gpu::ReferenceKernel>> reference_kernels() {
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
