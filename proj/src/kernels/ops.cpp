// SPDX-License-Identifier: Apache-2.0
#include "ember/kernels/ops.h"

#include <cmath>
#include <sstream>

#include "ember/error.h"
#include "ember/kernels/params.h"

namespace ember::kernels {

namespace {

using gpu::DeviceBuffer;
using gpu::Extent3;

template <class P>
gpu::Buffer make_uniform(const std::shared_ptr<gpu::Device>& device, const P& params) {
  static_assert(sizeof(P) % 16 == 0, "uniform blocks are 16-byte multiples");
  gpu::Buffer buf(device, sizeof(P), gpu::kUniformUsage);
  device->write_buffer(buf.desc(), 0, std::as_bytes(std::span<const P>(&params, 1)));
  return buf;
}

gpu::Buffer make_u32(const std::shared_ptr<gpu::Device>& device, std::span<const uint32_t> values) {
  gpu::Buffer buf(device, std::max<size_t>(values.size(), 1) * 4, gpu::kStorageUsage);
  if (!values.empty()) buf.upload(values);
  return buf;
}

Extent3 linear_grid(const gpu::Device& device, uint64_t invocations) {
  const uint64_t groups = std::max<uint64_t>(1, (invocations + kLinearWorkgroup - 1) / kLinearWorkgroup);
  const uint64_t max_x = device.limits().max_workgroups_per_dimension;
  const uint64_t x = std::min(groups, max_x);
  const uint64_t y = (groups + x - 1) / x;
  return {static_cast<uint32_t>(x), static_cast<uint32_t>(y), 1};
}

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw Error(Errc::shape_mismatch, std::string(op) + ": " + what);
}

std::string shape_str(const std::vector<uint32_t>& shape) {
  std::ostringstream s;
  s << '[';
  for (size_t i = 0; i < shape.size(); ++i) s << (i ? "," : "") << shape[i];
  s << ']';
  return s.str();
}

void require_f32(const Tensor& t, const char* op) {
  require(t.valid() && t.dtype() == DType::f32, op, "expects a valid f32 tensor");
}

void dispatch(gpu::Device& device, std::string_view name, std::initializer_list<DeviceBuffer> bindings,
              Extent3 grid) {
  const std::vector<DeviceBuffer> list(bindings);
  device.dispatch(device.kernel(name), list, grid);
}

// Rows and row length of a tensor treated as [rows, last_dim].
std::pair<uint32_t, uint32_t> as_rows(const Tensor& t) {
  const uint32_t n = t.shape().back();
  return {static_cast<uint32_t>(t.numel() / n), n};
}

}  // namespace

Tensor gemm(const Tensor& a, const Tensor& b) {
  require_f32(a, "gemm");
  require_f32(b, "gemm");
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), "gemm",
          "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const uint32_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto device = a.device_ptr();
  Tensor c(device, {m, n});
  auto params = make_uniform(device, GemmParams{m, k, n, 0});
  dispatch(*device, "gemm", {a.buffer(), b.buffer(), c.buffer(), params.desc()},
           {(n + kGemmTile - 1) / kGemmTile, (m + kGemmTile - 1) / kGemmTile, 1});
  return c;
}

Tensor dequant_matvec(const QuantTensor& w, const Tensor& x) {
  require_f32(x, "dequant_matvec");
  require(x.shape().back() == w.cols && x.rank() <= 2, "dequant_matvec",
          "x " + shape_str(x.shape()) + " does not match cols " + std::to_string(w.cols));
  const uint32_t batch = x.rank() == 2 ? x.dim(0) : 1;
  auto device = x.device_ptr();
  Tensor y = x.rank() == 2 ? Tensor(device, {batch, w.rows}) : Tensor(device, {w.rows});
  auto params = make_uniform(device, DequantParams{w.rows, w.cols, batch, 0});
  dispatch(*device, "dequant_matvec",
           {w.packed.desc(), w.scales.desc(), x.buffer(), y.buffer(), params.desc()},
           {w.rows, batch, 1});
  return y;
}

Tensor rmsnorm(const Tensor& x, const Tensor& weight, float eps) {
  require_f32(x, "rmsnorm");
  require_f32(weight, "rmsnorm");
  require(weight.rank() == 1 && weight.dim(0) == x.shape().back(), "rmsnorm",
          "weight " + shape_str(weight.shape()) + " vs x " + shape_str(x.shape()));
  require(eps > 0.0f, "rmsnorm", "eps must be positive");
  const auto [rows, n] = as_rows(x);
  auto device = x.device_ptr();
  Tensor out(device, x.shape());
  auto params = make_uniform(device, NormParams{n, rows, eps, 0});
  dispatch(*device, "rmsnorm", {x.buffer(), weight.buffer(), out.buffer(), params.desc()},
           {rows, 1, 1});
  return out;
}

ResidualNorm fused_residual_rmsnorm(const Tensor& x, const Tensor& residual, const Tensor& weight,
                                    float eps) {
  require_f32(x, "fused_residual_rmsnorm");
  require_f32(residual, "fused_residual_rmsnorm");
  require_f32(weight, "fused_residual_rmsnorm");
  require(x.shape() == residual.shape(), "fused_residual_rmsnorm",
          "x " + shape_str(x.shape()) + " vs residual " + shape_str(residual.shape()));
  require(weight.rank() == 1 && weight.dim(0) == x.shape().back(), "fused_residual_rmsnorm",
          "weight does not match the last dimension");
  require(eps > 0.0f, "fused_residual_rmsnorm", "eps must be positive");
  const auto [rows, n] = as_rows(x);
  auto device = x.device_ptr();
  ResidualNorm out{Tensor(device, x.shape()), Tensor(device, x.shape())};
  auto params = make_uniform(device, NormParams{n, rows, eps, 0});
  dispatch(*device, "fused_residual_rmsnorm",
           {x.buffer(), residual.buffer(), weight.buffer(), out.sum.buffer(), out.normed.buffer(),
            params.desc()},
           {rows, 1, 1});
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  require_f32(x, "softmax_rows");
  const auto [m, n] = as_rows(x);
  auto device = x.device_ptr();
  Tensor y(device, x.shape());
  auto params = make_uniform(device, SoftmaxParams{m, n, 0, 0});
  dispatch(*device, "softmax_rows", {x.buffer(), y.buffer(), params.desc()}, {m, 1, 1});
  return y;
}

Tensor rope_apply(const Tensor& qk, uint32_t position, float theta) {
  require(qk.rank() == 2, "rope_apply", "single-position form expects [heads, head_dim]");
  const uint32_t pos[] = {position};
  return rope_apply(qk, pos, theta);
}

Tensor rope_apply(const Tensor& qk, std::span<const uint32_t> positions, float theta) {
  require_f32(qk, "rope_apply");
  require(qk.rank() == 2 || qk.rank() == 3, "rope_apply", "expects [heads, d] or [rows, heads, d]");
  const uint32_t rows = qk.rank() == 3 ? qk.dim(0) : 1;
  const uint32_t heads = qk.dim(qk.rank() - 2);
  const uint32_t head_dim = qk.dim(qk.rank() - 1);
  if (head_dim % 2 != 0) {
    throw Error(Errc::odd_head_dim, "rope_apply: head_dim " + std::to_string(head_dim) + " is odd");
  }
  require(positions.size() == rows, "rope_apply", "one position per row required");
  auto device = qk.device_ptr();
  Tensor out(device, qk.shape());
  auto pos = make_u32(device, positions);
  auto params = make_uniform(device, RopeParams{rows, heads, head_dim, theta});
  dispatch(*device, "rope_apply", {qk.buffer(), pos.desc(), out.buffer(), params.desc()},
           linear_grid(*device, uint64_t{rows} * heads * head_dim / 2));
  return out;
}

Tensor paged_attention(const Tensor& q, const PagedKvView& kv, uint32_t seq_len) {
  require_f32(q, "paged_attention");
  require(q.rank() == 2 || q.rank() == 3, "paged_attention", "q must be [heads, d] or [n, heads, d]");
  const uint32_t num_queries = q.rank() == 3 ? q.dim(0) : 1;
  const uint32_t heads = q.dim(q.rank() - 2);
  const uint32_t d = q.dim(q.rank() - 1);
  require(d == kv.head_dim, "paged_attention", "q head_dim differs from the cache");
  require(d <= kMaxHeadDim, "paged_attention", "head_dim above 256 is not supported");
  require(kv.num_kv_heads > 0 && heads % kv.num_kv_heads == 0, "paged_attention",
          "num_heads must be a multiple of num_kv_heads");
  require(seq_len >= num_queries && seq_len >= 1, "paged_attention",
          "seq_len must cover every query position");
  const uint32_t pages_needed = (seq_len + kv.page_size - 1) / kv.page_size;
  if (kv.pages.size() < pages_needed) {
    throw Error(Errc::unallocated_page, "paged_attention: positions up to " +
                                            std::to_string(seq_len) + " need " +
                                            std::to_string(pages_needed) + " pages, table has " +
                                            std::to_string(kv.pages.size()));
  }
  for (uint32_t i = 0; i < pages_needed; ++i) {
    if (kv.pages[i] == kNoPage) {
      throw Error(Errc::unallocated_page, "paged_attention: page " + std::to_string(i) + " unallocated");
    }
  }
  auto device = q.device_ptr();
  Tensor out(device, q.shape());
  auto table = make_u32(device, kv.pages.subspan(0, pages_needed));
  const AttentionParams params_host{num_queries,  heads,
                                    kv.num_kv_heads, d,
                                    kv.page_size, seq_len - num_queries + 1,
                                    pages_needed, 1.0f / std::sqrt(static_cast<float>(d))};
  auto params = make_uniform(device, params_host);
  dispatch(*device, "paged_attention",
           {q.buffer(), kv.k_pool, kv.v_pool, table.desc(), out.buffer(), params.desc()},
           {heads, num_queries, 1});
  return out;
}

Tensor embedding_lookup(const Tensor& table, std::span<const uint32_t> ids) {
  require_f32(table, "embedding_lookup");
  require(table.rank() == 2, "embedding_lookup", "table must be [vocab, hidden]");
  require(!ids.empty(), "embedding_lookup", "no ids");
  const uint32_t vocab = table.dim(0), hidden = table.dim(1);
  for (uint32_t id : ids) {
    if (id >= vocab) throw Error(Errc::id_out_of_range, "embedding id " + std::to_string(id) + " >= vocab");
  }
  auto device = table.device_ptr();
  const uint32_t tokens = static_cast<uint32_t>(ids.size());
  Tensor out(device, {tokens, hidden});
  auto id_buf = make_u32(device, ids);
  auto params = make_uniform(device, EmbeddingParams{tokens, hidden, vocab, 0});
  dispatch(*device, "embedding_lookup", {table.buffer(), id_buf.desc(), out.buffer(), params.desc()},
           linear_grid(*device, uint64_t{tokens} * hidden));
  return out;
}

Tensor silu_mul(const Tensor& gate, const Tensor& up) {
  require_f32(gate, "silu_mul");
  require_f32(up, "silu_mul");
  require(gate.shape() == up.shape(), "silu_mul", "gate and up shapes differ");
  auto device = gate.device_ptr();
  Tensor out(device, gate.shape());
  const auto count = static_cast<uint32_t>(gate.numel());
  auto params = make_uniform(device, SiluMulParams{count, 0, 0, 0});
  dispatch(*device, "silu_mul", {gate.buffer(), up.buffer(), out.buffer(), params.desc()},
           linear_grid(*device, count));
  return out;
}

Tensor slice_rows(const Tensor& x, uint32_t first, uint32_t count) {
  require_f32(x, "slice_rows");
  require(x.rank() == 2 && count >= 1 && first + count <= x.dim(0), "slice_rows", "row range out of bounds");
  const uint32_t n = x.dim(1);
  Tensor out(x.device_ptr(), {count, n});
  x.device().copy_buffer(x.buffer(), uint64_t{first} * n * 4, out.buffer(), 0, uint64_t{count} * n * 4);
  return out;
}

void fill_zero(gpu::Device& device, const gpu::DeviceBuffer& buffer) {
  // Shared ownership is needed for the uniform; borrow it from a fresh handle.
  const auto words = static_cast<uint32_t>(buffer.nbytes / 4);
  if (words == 0) return;
  const FillParams params{words, 0, 0, 0};
  const auto desc = device.create_buffer(sizeof(params), gpu::kUniformUsage);
  device.write_buffer(desc, 0, std::as_bytes(std::span<const FillParams>(&params, 1)));
  const uint64_t groups = (words + kLinearWorkgroup - 1) / kLinearWorkgroup;
  const uint32_t x = static_cast<uint32_t>(std::min<uint64_t>(groups, device.limits().max_workgroups_per_dimension));
  const uint32_t y = static_cast<uint32_t>((groups + x - 1) / x);
  try {
    dispatch(device, "fill_zero", {buffer, desc}, {x, y, 1});
  } catch (...) {
    device.destroy_buffer(desc);
    throw;
  }
  device.destroy_buffer(desc);
}

void kv_append(gpu::Device& device, const gpu::DeviceBuffer& k_pool, const gpu::DeviceBuffer& v_pool,
               std::span<const uint32_t> slots, const Tensor& k_new, const Tensor& v_new) {
  require_f32(k_new, "kv_append");
  require_f32(v_new, "kv_append");
  require(k_new.numel() == v_new.numel(), "kv_append", "k and v sizes differ");
  const auto tokens = static_cast<uint32_t>(slots.size());
  require(tokens >= 1 && k_new.numel() % tokens == 0, "kv_append", "rows do not match slot count");
  const auto row_elems = static_cast<uint32_t>(k_new.numel() / tokens);
  auto dev = k_new.device_ptr();
  auto slot_buf = make_u32(dev, slots);
  auto params = make_uniform(dev, KvAppendParams{tokens, row_elems, 0, 0});
  dispatch(device, "kv_append",
           {k_new.buffer(), v_new.buffer(), slot_buf.desc(), k_pool, v_pool, params.desc()},
           linear_grid(device, uint64_t{tokens} * row_elems));
}

void page_copy(gpu::Device& device, const gpu::DeviceBuffer& k_pool, const gpu::DeviceBuffer& v_pool,
               uint32_t src_page, uint32_t dst_page, uint32_t page_elems) {
  const PageCopyParams params{src_page, dst_page, page_elems, 0};
  const auto desc = device.create_buffer(sizeof(params), gpu::kUniformUsage);
  device.write_buffer(desc, 0, std::as_bytes(std::span<const PageCopyParams>(&params, 1)));
  try {
    dispatch(device, "page_copy", {k_pool, v_pool, desc}, linear_grid(device, page_elems));
  } catch (...) {
    device.destroy_buffer(desc);
    throw;
  }
  device.destroy_buffer(desc);
}

}  // namespace ember::kernels
