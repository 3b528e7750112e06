// SPDX-License-Identifier: Apache-2.0
#include "ember/kernels/tensor.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ember/error.h"
#include "ember/half.h"
#include "ember/kernels/params.h"

namespace ember::kernels {

namespace {

uint64_t product(const std::vector<uint32_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), uint64_t{1},
                         [](uint64_t a, uint32_t b) { return a * b; });
}

}  // namespace

Tensor::Tensor(std::shared_ptr<gpu::Device> device, std::vector<uint32_t> shape, DType dtype)
    : shape_(std::move(shape)), dtype_(dtype) {
  if (shape_.empty() || std::any_of(shape_.begin(), shape_.end(), [](uint32_t d) { return d == 0; })) {
    throw Error(Errc::shape_mismatch, "tensor dimensions must be >= 1");
  }
  // f16 tensors round up to whole words so kernels can address them as u32.
  const uint64_t bytes = (product(shape_) * dtype_size(dtype_) + 3) / 4 * 4;
  buffer_ = gpu::Buffer(std::move(device), bytes, gpu::kStorageUsage);
}

Tensor Tensor::from_host(std::shared_ptr<gpu::Device> device, std::vector<uint32_t> shape,
                         std::span<const float> values) {
  Tensor t(std::move(device), std::move(shape));
  if (values.size() != t.numel()) {
    throw Error(Errc::shape_mismatch, "host data size does not match tensor shape");
  }
  t.device().write_buffer(t.buffer(), 0, std::as_bytes(values));
  return t;
}

std::vector<float> Tensor::to_host() const {
  if (dtype_ != DType::f32) throw Error(Errc::shape_mismatch, "to_host expects an f32 tensor");
  const auto bytes = device().read_buffer(buffer(), 0, numel() * sizeof(float));
  std::vector<float> out(numel());
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

Tensor Tensor::reshape(std::vector<uint32_t> shape) && {
  if (product(shape) != numel() || shape.empty()) {
    throw Error(Errc::shape_mismatch, "reshape changes the element count");
  }
  Tensor t;
  t.buffer_ = std::move(buffer_);
  t.shape_ = std::move(shape);
  t.dtype_ = dtype_;
  return t;
}

uint64_t Tensor::numel() const { return product(shape_); }

uint32_t QuantizedMatrix::code(uint32_t r, uint32_t c) const {
  const size_t idx = size_t{r} * cols + c;
  return (packed[idx / 8] >> (4 * (idx % 8))) & 0xfu;
}

float QuantizedMatrix::scale(uint32_t r, uint32_t c) const {
  return half_to_float(scales[size_t{r} * (cols / kQuantGroup) + c / kQuantGroup]);
}

QuantizedMatrix quantize_q4g32(std::span<const float> weights, uint32_t rows, uint32_t cols) {
  if (cols % kQuantGroup != 0) {
    throw Error(Errc::shape_mismatch, "q4g32 needs cols divisible by 32");
  }
  if (weights.size() != size_t{rows} * cols) {
    throw Error(Errc::shape_mismatch, "weight count does not match rows*cols");
  }
  QuantizedMatrix q;
  q.rows = rows;
  q.cols = cols;
  q.packed.assign((size_t{rows} * cols + 7) / 8, 0u);
  q.scales.resize(size_t{rows} * (cols / kQuantGroup));

  for (uint32_t r = 0; r < rows; ++r) {
    for (uint32_t g = 0; g < cols / kQuantGroup; ++g) {
      const float* w = weights.data() + size_t{r} * cols + size_t{g} * kQuantGroup;
      float amax = 0.0f;
      for (uint32_t i = 0; i < kQuantGroup; ++i) amax = std::max(amax, std::fabs(w[i]));
      uint16_t s = 0;
      float sf = 0.0f;
      if (amax > 0.0f) {
        s = float_to_half(amax / 7.0f);
        if (s == 0) s = 1;
        sf = half_to_float(s);
        // Keep every code within 8 +- 7 after rounding.
        while (amax / sf > 7.5f && s < 0x7bffu) {
          ++s;
          sf = half_to_float(s);
        }
      }
      q.scales[size_t{r} * (cols / kQuantGroup) + g] = s;
      for (uint32_t i = 0; i < kQuantGroup; ++i) {
        int level = 0;
        if (sf > 0.0f) level = static_cast<int>(std::nearbyint(w[i] / sf));
        const uint32_t code = static_cast<uint32_t>(std::clamp(level, -8, 7) + 8);
        const size_t idx = size_t{r} * cols + size_t{g} * kQuantGroup + i;
        q.packed[idx / 8] |= code << (4 * (idx % 8));
      }
    }
  }
  return q;
}

std::vector<float> dequantize(const QuantizedMatrix& q) {
  std::vector<float> out(size_t{q.rows} * q.cols);
  for (uint32_t r = 0; r < q.rows; ++r) {
    for (uint32_t c = 0; c < q.cols; ++c) {
      out[size_t{r} * q.cols + c] = q.scale(r, c) * (static_cast<float>(q.code(r, c)) - 8.0f);
    }
  }
  return out;
}

std::vector<uint32_t> pack_scales(std::span<const uint16_t> scales) {
  std::vector<uint32_t> words((scales.size() + 1) / 2, 0u);
  for (size_t i = 0; i < scales.size(); ++i) {
    words[i / 2] |= uint32_t{scales[i]} << (16 * (i % 2));
  }
  return words;
}

std::vector<uint16_t> unpack_scales(std::span<const uint32_t> words, size_t count) {
  std::vector<uint16_t> out(count);
  for (size_t i = 0; i < count; ++i) {
    out[i] = static_cast<uint16_t>((words[i / 2] >> (16 * (i % 2))) & 0xffffu);
  }
  return out;
}

QuantTensor QuantTensor::from_host(std::shared_ptr<gpu::Device> device, const QuantizedMatrix& q) {
  if (q.cols % kQuantGroup != 0 || q.rows == 0 || q.cols == 0) {
    throw Error(Errc::shape_mismatch, "quantized matrix needs cols divisible by 32");
  }
  QuantTensor t;
  t.rows = q.rows;
  t.cols = q.cols;
  const auto scale_words = pack_scales(q.scales);
  t.packed = gpu::Buffer(device, q.packed.size() * 4, gpu::kStorageUsage);
  t.scales = gpu::Buffer(device, scale_words.size() * 4, gpu::kStorageUsage);
  t.packed.upload(std::span<const uint32_t>(q.packed));
  t.scales.upload(std::span<const uint32_t>(scale_words));
  return t;
}

}  // namespace ember::kernels
