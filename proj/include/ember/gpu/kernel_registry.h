// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ember::gpu {

struct Extent3 {
  uint32_t x = 1;
  uint32_t y = 1;
  uint32_t z = 1;

  uint64_t count() const { return uint64_t{x} * y * z; }
  friend bool operator==(const Extent3&, const Extent3&) = default;
};

enum class BindingKind { storage_ro, storage_rw, uniform };

struct BindSlot {
  uint32_t slot = 0;
  BindingKind kind = BindingKind::storage_ro;
  friend bool operator==(const BindSlot&, const BindSlot&) = default;
};

struct KernelHandle {
  std::string name;
  Extent3 workgroup_size;
  std::vector<BindSlot> bind_slots;
};

struct ByteRange {
  uint64_t begin = 0;
  uint64_t end = 0;
};

// What a kernel body sees of one dispatch: its bound buffers, in slot order.
class KernelArgs {
 public:
  struct Binding {
    std::byte* data = nullptr;
    uint64_t nbytes = 0;
    BindingKind kind = BindingKind::storage_ro;
    const std::vector<ByteRange>* guards = nullptr;
  };

  explicit KernelArgs(std::vector<Binding> bindings) : bindings_(std::move(bindings)) {}

  template <class T>
  std::span<T> rw(size_t slot) const {
    const Binding& b = bindings_.at(slot);
    return {reinterpret_cast<T*>(b.data), static_cast<size_t>(b.nbytes / sizeof(T))};
  }

  template <class T>
  std::span<const T> ro(size_t slot) const {
    const Binding& b = bindings_.at(slot);
    return {reinterpret_cast<const T*>(b.data), static_cast<size_t>(b.nbytes / sizeof(T))};
  }

  template <class T>
  T uniform(size_t slot) const {
    const Binding& b = bindings_.at(slot);
    T value{};
    std::memcpy(&value, b.data, std::min<uint64_t>(sizeof(T), b.nbytes));
    return value;
  }

  // Raises SharedPageWrite when [byte_offset, byte_offset+nbytes) of the slot
  // overlaps a guarded range.
  void check_writable(size_t slot, uint64_t byte_offset, uint64_t nbytes) const;

  size_t size() const { return bindings_.size(); }

 private:
  std::vector<Binding> bindings_;
};

struct WorkgroupContext {
  Extent3 workgroup_id;
  Extent3 num_workgroups;
  Extent3 workgroup_size;
};

// Scalar, order-deterministic oracle; ignores the launch grid.
using ReferenceKernel = void (*)(const KernelArgs&);
// Body of one workgroup. Invocations are stepped explicitly between barriers.
using WorkgroupKernel = void (*)(const KernelArgs&, const WorkgroupContext&);

struct KernelImpl {
  ReferenceKernel reference = nullptr;
  WorkgroupKernel workgroup = nullptr;
};

class KernelRegistry {
 public:
  void add(std::string name, KernelImpl impl) { impls_[std::move(name)] = impl; }
  const KernelImpl* find(std::string_view name) const {
    auto it = impls_.find(name);
    return it == impls_.end() ? nullptr : &it->second;
  }
  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, impl] : impls_) out.push_back(name);
    return out;
  }

 private:
  std::map<std::string, KernelImpl, std::less<>> impls_;
};

}  // namespace ember::gpu
