// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ember/gpu/kernel_registry.h"

namespace ember::gpu {

enum class BackendKind { gpu, cpu_reference };
enum class DevicePreference { gpu, cpu_reference, automatic };

std::string_view backend_name(BackendKind kind);

struct DeviceLimits {
  uint32_t max_workgroup_invocations = 256;
  uint32_t max_workgroups_per_dimension = 65535;
  uint64_t max_buffer_bytes = 256ull << 20;
  // Sum of live buffer sizes; allocation beyond it is OutOfMemory.
  uint64_t max_total_bytes = 2ull << 30;
};

enum class BufferUsage : uint32_t {
  none = 0,
  storage = 1u << 0,
  uniform = 1u << 1,
  copy_src = 1u << 2,
  copy_dst = 1u << 3,
};

constexpr BufferUsage operator|(BufferUsage a, BufferUsage b) {
  return static_cast<BufferUsage>(static_cast<uint32_t>(a) | static_cast<uint32_t>(b));
}
constexpr bool has_usage(BufferUsage set, BufferUsage flag) {
  return (static_cast<uint32_t>(set) & static_cast<uint32_t>(flag)) != 0;
}

inline constexpr BufferUsage kStorageUsage =
    BufferUsage::storage | BufferUsage::copy_src | BufferUsage::copy_dst;
inline constexpr BufferUsage kUniformUsage = BufferUsage::uniform | BufferUsage::copy_dst;

// Plain descriptor. Buffers are owned by the device; see Buffer for RAII.
struct DeviceBuffer {
  uint64_t id = 0;
  uint64_t nbytes = 0;
  BufferUsage usage = BufferUsage::none;
};

struct AdapterInfo {
  std::string name;
  bool is_fallback = false;
};

struct DeviceOptions {
  DevicePreference preference = DevicePreference::automatic;
  // Accept a software adapter when no hardware adapter exists, the way
  // requestAdapter({forceFallbackAdapter}) does. EMBER_ALLOW_FALLBACK_ADAPTER=1
  // in the environment has the same effect.
  bool allow_fallback_adapter = false;
  // Directory of <kernel>.wgsl files; empty means $EMBER_SHADER_DIR or the
  // directory baked in at build time.
  std::string shader_dir;
  DeviceLimits limits;
  std::shared_ptr<const KernelRegistry> kernels;  // null: builtin kernels
};

// Hardware adapters visible to this build, plus the software fallback when
// `include_fallback` is set.
std::vector<AdapterInfo> enumerate_adapters(bool include_fallback);

class Device {
 public:
  Device(const Device&) = delete;
  Device& operator=(const Device&) = delete;
  ~Device();

  BackendKind backend() const { return backend_; }
  const DeviceLimits& limits() const { return limits_; }
  const AdapterInfo& adapter() const { return adapter_; }

  DeviceBuffer create_buffer(uint64_t nbytes, BufferUsage usage);
  void destroy_buffer(const DeviceBuffer& buf);

  void write_buffer(const DeviceBuffer& buf, uint64_t offset, std::span<const std::byte> data);
  std::vector<std::byte> read_buffer(const DeviceBuffer& buf, uint64_t offset, uint64_t len);
  void copy_buffer(const DeviceBuffer& src, uint64_t src_offset, const DeviceBuffer& dst,
                   uint64_t dst_offset, uint64_t len);

  const KernelHandle& kernel(std::string_view name) const;
  bool has_kernel(std::string_view name) const;
  std::vector<std::string> kernel_names() const;

  void dispatch(const KernelHandle& kernel, std::span<const DeviceBuffer> bindings, Extent3 grid);
  void synchronize();

  // Byte ranges of `buf` that kernels and writes must not touch. Violations
  // raise SharedPageWrite.
  void set_write_guards(const DeviceBuffer& buf, std::vector<ByteRange> ranges);

  uint64_t live_bytes() const { return live_bytes_; }
  size_t live_buffers() const { return buffers_.size(); }
  uint64_t dispatch_count() const { return dispatch_count_; }

  // Marks the device lost; every later call raises DeviceLost.
  void lose();

 private:
  struct Storage;
  using Guards = std::shared_ptr<const std::vector<ByteRange>>;

  Device(BackendKind backend, AdapterInfo adapter, DeviceLimits limits,
         std::shared_ptr<const KernelRegistry> kernels, std::map<std::string, KernelHandle> shaders);
  friend std::shared_ptr<Device> init_device(const DeviceOptions& options);

  std::shared_ptr<Storage> lookup(const DeviceBuffer& buf, const char* what) const;
  void check_alive() const;
  void enqueue(std::function<void()> command);
  void flush();

  BackendKind backend_;
  AdapterInfo adapter_;
  DeviceLimits limits_;
  std::shared_ptr<const KernelRegistry> registry_;
  std::map<std::string, KernelHandle, std::less<>> shaders_;
  std::map<uint64_t, std::shared_ptr<Storage>> buffers_;
  std::vector<std::function<void()>> queue_;
  uint64_t next_id_ = 1;
  uint64_t live_bytes_ = 0;
  uint64_t dispatch_count_ = 0;
  bool lost_ = false;
};

std::shared_ptr<Device> init_device(const DeviceOptions& options);
std::shared_ptr<Device> init_device(DevicePreference preference);

// Move-only owner that destroys its buffer with the device.
class Buffer {
 public:
  Buffer() = default;
  Buffer(std::shared_ptr<Device> device, uint64_t nbytes, BufferUsage usage);
  Buffer(Buffer&& other) noexcept;
  Buffer& operator=(Buffer&& other) noexcept;
  Buffer(const Buffer&) = delete;
  Buffer& operator=(const Buffer&) = delete;
  ~Buffer();

  const DeviceBuffer& desc() const { return desc_; }
  uint64_t nbytes() const { return desc_.nbytes; }
  bool valid() const { return device_ != nullptr; }
  Device& device() const { return *device_; }
  const std::shared_ptr<Device>& device_ptr() const { return device_; }

  template <class T>
  void upload(std::span<const T> values, uint64_t offset = 0) {
    device_->write_buffer(desc_, offset, std::as_bytes(values));
  }

  template <class T>
  std::vector<T> download(uint64_t offset = 0, uint64_t count = ~0ull) const {
    if (count == ~0ull) count = (desc_.nbytes - offset) / sizeof(T);
    const auto bytes = device_->read_buffer(desc_, offset, count * sizeof(T));
    std::vector<T> out(count);
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
  }

 private:
  void reset();

  std::shared_ptr<Device> device_;
  DeviceBuffer desc_;
};

// Loads every <name>.wgsl under `dir` and derives its KernelHandle from the
// entry point's @workgroup_size and @group(0) @binding declarations.
std::map<std::string, KernelHandle> load_shader_library(const std::string& dir,
                                                        const DeviceLimits& limits);
KernelHandle parse_shader(std::string_view name, std::string_view source);

std::string default_shader_dir();

}  // namespace ember::gpu
