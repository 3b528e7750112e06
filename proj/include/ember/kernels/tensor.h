// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ember/gpu/device.h"

namespace ember::kernels {

enum class DType { f32, f16 };

inline uint32_t dtype_size(DType t) { return t == DType::f32 ? 4 : 2; }

// Dense row-major tensor resident on a device. Owns its buffer.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::shared_ptr<gpu::Device> device, std::vector<uint32_t> shape,
         DType dtype = DType::f32);

  static Tensor from_host(std::shared_ptr<gpu::Device> device, std::vector<uint32_t> shape,
                          std::span<const float> values);

  std::vector<float> to_host() const;

  // Same buffer viewed with another shape of equal element count.
  Tensor reshape(std::vector<uint32_t> shape) &&;

  const std::vector<uint32_t>& shape() const { return shape_; }
  uint32_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  uint64_t numel() const;
  DType dtype() const { return dtype_; }
  uint64_t logical_bytes() const { return numel() * dtype_size(dtype_); }

  const gpu::DeviceBuffer& buffer() const { return buffer_.desc(); }
  gpu::Device& device() const { return buffer_.device(); }
  const std::shared_ptr<gpu::Device>& device_ptr() const { return buffer_.device_ptr(); }
  bool valid() const { return buffer_.valid(); }

 private:
  gpu::Buffer buffer_;
  std::vector<uint32_t> shape_;
  DType dtype_ = DType::f32;
};

// Host-side 4-bit group-quantized matrix: w = scale * (code - 8), one f16
// scale per 32 consecutive columns of a row.
struct QuantizedMatrix {
  uint32_t rows = 0;
  uint32_t cols = 0;
  std::vector<uint32_t> packed;  // rows*cols nibbles, 8 per word, low nibble first
  std::vector<uint16_t> scales;  // rows*cols/32 binary16 values

  uint32_t code(uint32_t r, uint32_t c) const;
  float scale(uint32_t r, uint32_t c) const;
};

QuantizedMatrix quantize_q4g32(std::span<const float> weights, uint32_t rows, uint32_t cols);
std::vector<float> dequantize(const QuantizedMatrix& q);

// Scales as stored on device: two binary16 values per word, low half first.
std::vector<uint32_t> pack_scales(std::span<const uint16_t> scales);
std::vector<uint16_t> unpack_scales(std::span<const uint32_t> words, size_t count);

struct QuantTensor {
  gpu::Buffer packed;
  gpu::Buffer scales;
  uint32_t rows = 0;
  uint32_t cols = 0;
  uint32_t group_size = 32;

  static QuantTensor from_host(std::shared_ptr<gpu::Device> device, const QuantizedMatrix& q);
};

}  // namespace ember::kernels
