// SPDX-License-Identifier: Apache-2.0
#include "ember/gpu/device.h"

#include <cstdlib>
#include <sstream>

#include "ember/error.h"
#include "ember/kernels/builtin.h"

namespace ember::gpu {

struct Device::Storage {
  std::vector<uint32_t> words;  // 4-byte aligned backing
  uint64_t nbytes = 0;
  BufferUsage usage = BufferUsage::none;
  Guards guards;

  std::byte* data() { return reinterpret_cast<std::byte*>(words.data()); }
};

namespace {

bool env_flag(const char* name) {
  const char* v = std::getenv(name);
  return v != nullptr && (std::string_view(v) == "1" || std::string_view(v) == "true");
}

bool overlaps(const std::vector<ByteRange>& ranges, uint64_t begin, uint64_t end) {
  for (const ByteRange& r : ranges) {
    if (begin < r.end && r.begin < end) return true;
  }
  return false;
}

bool usage_allows(BufferUsage usage, BindingKind kind) {
  return kind == BindingKind::uniform ? has_usage(usage, BufferUsage::uniform)
                                      : has_usage(usage, BufferUsage::storage);
}

}  // namespace

std::string_view backend_name(BackendKind kind) {
  return kind == BackendKind::gpu ? "gpu" : "cpu_reference";
}

void KernelArgs::check_writable(size_t slot, uint64_t byte_offset, uint64_t nbytes) const {
  const Binding& b = bindings_.at(slot);
  if (b.guards != nullptr && overlaps(*b.guards, byte_offset, byte_offset + nbytes)) {
    std::ostringstream msg;
    msg << "kernel write to guarded bytes [" << byte_offset << ", " << byte_offset + nbytes
        << ") of binding " << slot;
    throw Error(Errc::shared_page_write, msg.str());
  }
}

std::vector<AdapterInfo> enumerate_adapters(bool include_fallback) {
  // No native compute API is linked into this build, so the only adapter on
  // offer is the software one.
  std::vector<AdapterInfo> adapters;
  if (include_fallback) adapters.push_back({"ember software adapter (workgroup emulation)", true});
  return adapters;
}

std::shared_ptr<Device> init_device(DevicePreference preference) {
  DeviceOptions options;
  options.preference = preference;
  return init_device(options);
}

std::shared_ptr<Device> init_device(const DeviceOptions& options) {
  const bool allow_fallback =
      options.allow_fallback_adapter || env_flag("EMBER_ALLOW_FALLBACK_ADAPTER");
  const auto adapters = enumerate_adapters(allow_fallback);

  BackendKind backend = BackendKind::cpu_reference;
  AdapterInfo adapter{"cpu reference interpreter", false};
  switch (options.preference) {
    case DevicePreference::gpu:
      if (adapters.empty()) {
        throw Error(Errc::no_adapter,
                    "no GPU adapter available (set EMBER_ALLOW_FALLBACK_ADAPTER=1 to accept the "
                    "software adapter)");
      }
      backend = BackendKind::gpu;
      adapter = adapters.front();
      break;
    case DevicePreference::automatic:
      if (!adapters.empty()) {
        backend = BackendKind::gpu;
        adapter = adapters.front();
      }
      break;
    case DevicePreference::cpu_reference:
      break;
  }

  if (options.limits.max_workgroup_invocations == 0 || options.limits.max_buffer_bytes == 0 ||
      options.limits.max_total_bytes == 0 || options.limits.max_workgroups_per_dimension == 0) {
    throw Error(Errc::internal, "device limits must be positive");
  }

  std::string dir = options.shader_dir.empty() ? default_shader_dir() : options.shader_dir;
  auto shaders = load_shader_library(dir, options.limits);
  auto kernels = options.kernels ? options.kernels : kernels::builtin_registry();
  return std::shared_ptr<Device>(
      new Device(backend, std::move(adapter), options.limits, std::move(kernels), std::move(shaders)));
}

Device::Device(BackendKind backend, AdapterInfo adapter, DeviceLimits limits,
               std::shared_ptr<const KernelRegistry> kernels,
               std::map<std::string, KernelHandle> shaders)
    : backend_(backend),
      adapter_(std::move(adapter)),
      limits_(limits),
      registry_(std::move(kernels)),
      shaders_(shaders.begin(), shaders.end()) {}

Device::~Device() = default;

void Device::check_alive() const {
  if (lost_) throw Error(Errc::device_lost, "device lost");
}

void Device::lose() {
  lost_ = true;
  queue_.clear();
}

std::shared_ptr<Device::Storage> Device::lookup(const DeviceBuffer& buf, const char* what) const {
  auto it = buffers_.find(buf.id);
  if (it == buffers_.end()) {
    std::ostringstream msg;
    msg << what << ": buffer " << buf.id << " does not exist or was destroyed";
    throw Error(Errc::invalid_buffer, msg.str());
  }
  return it->second;
}

DeviceBuffer Device::create_buffer(uint64_t nbytes, BufferUsage usage) {
  check_alive();
  if (nbytes == 0 || nbytes > limits_.max_buffer_bytes) {
    std::ostringstream msg;
    msg << "buffer size " << nbytes << " outside (0, " << limits_.max_buffer_bytes << "]";
    throw Error(Errc::size_exceeds_limit, msg.str());
  }
  if (live_bytes_ + nbytes > limits_.max_total_bytes) {
    std::ostringstream msg;
    msg << "allocating " << nbytes << " bytes exceeds device memory (" << live_bytes_ << " of "
        << limits_.max_total_bytes << " in use)";
    throw Error(Errc::out_of_memory, msg.str());
  }
  auto storage = std::make_shared<Storage>();
  try {
    storage->words.assign((nbytes + 3) / 4, 0u);
  } catch (const std::bad_alloc&) {
    throw Error(Errc::out_of_memory, "host allocation failed");
  }
  storage->nbytes = nbytes;
  storage->usage = usage;
  const DeviceBuffer desc{next_id_++, nbytes, usage};
  buffers_.emplace(desc.id, std::move(storage));
  live_bytes_ += nbytes;
  return desc;
}

void Device::destroy_buffer(const DeviceBuffer& buf) {
  auto it = buffers_.find(buf.id);
  if (it == buffers_.end()) return;
  live_bytes_ -= it->second->nbytes;
  // Queued commands hold their own reference, so in-flight work still sees
  // the storage.
  buffers_.erase(it);
}

void Device::write_buffer(const DeviceBuffer& buf, uint64_t offset,
                          std::span<const std::byte> data) {
  check_alive();
  auto storage = lookup(buf, "write_buffer");
  if (!has_usage(storage->usage, BufferUsage::copy_dst)) {
    throw Error(Errc::missing_usage, "write_buffer requires copy_dst usage");
  }
  if (offset > storage->nbytes || data.size() > storage->nbytes - offset) {
    throw Error(Errc::out_of_bounds, "write_buffer range exceeds buffer size");
  }
  if (storage->guards && overlaps(*storage->guards, offset, offset + data.size())) {
    throw Error(Errc::shared_page_write, "write_buffer touches guarded bytes");
  }
  if (data.empty()) return;
  if (backend_ == BackendKind::cpu_reference) {
    std::memcpy(storage->data() + offset, data.data(), data.size());
    return;
  }
  // queue.writeBuffer semantics: the data is captured now, applied in order.
  std::vector<std::byte> copy(data.begin(), data.end());
  enqueue([storage, offset, copy = std::move(copy)] {
    std::memcpy(storage->data() + offset, copy.data(), copy.size());
  });
}

std::vector<std::byte> Device::read_buffer(const DeviceBuffer& buf, uint64_t offset,
                                           uint64_t len) {
  check_alive();
  auto storage = lookup(buf, "read_buffer");
  if (!has_usage(storage->usage, BufferUsage::copy_src)) {
    throw Error(Errc::missing_usage, "read_buffer requires copy_src usage");
  }
  if (offset > storage->nbytes || len > storage->nbytes - offset) {
    std::ostringstream msg;
    msg << "read_buffer(" << offset << ", " << len << ") exceeds buffer size " << storage->nbytes;
    throw Error(Errc::out_of_bounds, msg.str());
  }
  // Mapping for read waits on all submitted work.
  flush();
  const std::byte* src = storage->data() + offset;
  return std::vector<std::byte>(src, src + len);
}

void Device::copy_buffer(const DeviceBuffer& src, uint64_t src_offset, const DeviceBuffer& dst,
                         uint64_t dst_offset, uint64_t len) {
  check_alive();
  auto s = lookup(src, "copy_buffer");
  auto d = lookup(dst, "copy_buffer");
  if (!has_usage(s->usage, BufferUsage::copy_src) || !has_usage(d->usage, BufferUsage::copy_dst)) {
    throw Error(Errc::missing_usage, "copy_buffer requires copy_src on source and copy_dst on destination");
  }
  if (src_offset > s->nbytes || len > s->nbytes - src_offset || dst_offset > d->nbytes ||
      len > d->nbytes - dst_offset) {
    throw Error(Errc::out_of_bounds, "copy_buffer range exceeds buffer size");
  }
  if (d->guards && overlaps(*d->guards, dst_offset, dst_offset + len)) {
    throw Error(Errc::shared_page_write, "copy_buffer touches guarded bytes");
  }
  auto command = [s, d, src_offset, dst_offset, len] {
    std::memmove(d->data() + dst_offset, s->data() + src_offset, len);
  };
  if (backend_ == BackendKind::cpu_reference) {
    command();
  } else {
    enqueue(std::move(command));
  }
}

const KernelHandle& Device::kernel(std::string_view name) const {
  auto it = shaders_.find(name);
  if (it == shaders_.end() || registry_->find(name) == nullptr) {
    throw Error(Errc::unknown_kernel, "unknown kernel '" + std::string(name) + "'");
  }
  return it->second;
}

bool Device::has_kernel(std::string_view name) const {
  return shaders_.find(name) != shaders_.end() && registry_->find(name) != nullptr;
}

std::vector<std::string> Device::kernel_names() const {
  std::vector<std::string> out;
  for (const auto& [name, handle] : shaders_) {
    if (registry_->find(name) != nullptr) out.push_back(name);
  }
  return out;
}

void Device::set_write_guards(const DeviceBuffer& buf, std::vector<ByteRange> ranges) {
  check_alive();
  auto storage = lookup(buf, "set_write_guards");
  auto guards = ranges.empty() ? nullptr
                               : std::make_shared<const std::vector<ByteRange>>(std::move(ranges));
  // Guards are validation state: they apply to work submitted from now on.
  // Dispatches already queued keep the guards they were submitted with.
  storage->guards = std::move(guards);
}

void Device::dispatch(const KernelHandle& kernel, std::span<const DeviceBuffer> bindings,
                      Extent3 grid) {
  check_alive();
  const KernelImpl* impl = registry_->find(kernel.name);
  auto shader = shaders_.find(kernel.name);
  if (impl == nullptr || shader == shaders_.end()) {
    throw Error(Errc::unknown_kernel, "unknown kernel '" + kernel.name + "'");
  }
  const KernelHandle& handle = shader->second;
  if (bindings.size() != handle.bind_slots.size()) {
    std::ostringstream msg;
    msg << kernel.name << ": " << bindings.size() << " bindings for " << handle.bind_slots.size()
        << " slots";
    throw Error(Errc::binding_mismatch, msg.str());
  }
  for (uint32_t v : {grid.x, grid.y, grid.z}) {
    if (v == 0 || v > limits_.max_workgroups_per_dimension) {
      throw Error(Errc::out_of_bounds, kernel.name + ": workgroup count outside [1, limit]");
    }
  }

  std::vector<std::shared_ptr<Storage>> storages;
  storages.reserve(bindings.size());
  for (size_t i = 0; i < bindings.size(); ++i) {
    auto storage = lookup(bindings[i], kernel.name.c_str());
    const BindingKind kind = handle.bind_slots[i].kind;
    if (!usage_allows(storage->usage, kind)) {
      std::ostringstream msg;
      msg << kernel.name << ": binding " << i << " lacks the usage its slot requires";
      throw Error(Errc::binding_mismatch, msg.str());
    }
    for (size_t j = 0; j < i; ++j) {
      const bool writable = kind == BindingKind::storage_rw ||
                            handle.bind_slots[j].kind == BindingKind::storage_rw;
      if (storages[j] == storage && writable) {
        throw Error(Errc::binding_mismatch,
                    kernel.name + ": writable storage binding aliases another binding");
      }
    }
    storages.push_back(std::move(storage));
  }

  std::vector<Guards> guards;
  for (const auto& s : storages) guards.push_back(s->guards);

  ++dispatch_count_;
  auto run = [this, impl, storages = std::move(storages), guards = std::move(guards),
              slots = handle.bind_slots, wg_size = handle.workgroup_size, grid] {
    std::vector<KernelArgs::Binding> bound;
    bound.reserve(storages.size());
    for (size_t i = 0; i < storages.size(); ++i) {
      bound.push_back({storages[i]->data(), storages[i]->nbytes, slots[i].kind, guards[i].get()});
    }
    const KernelArgs args(std::move(bound));
    if (backend_ == BackendKind::cpu_reference) {
      impl->reference(args);
      return;
    }
    // TODO: spread workgroups over a worker pool when more than one core is
    // available; outputs are disjoint per workgroup so order does not matter.
    WorkgroupContext ctx{{}, grid, wg_size};
    for (uint32_t z = 0; z < grid.z; ++z) {
      for (uint32_t y = 0; y < grid.y; ++y) {
        for (uint32_t x = 0; x < grid.x; ++x) {
          ctx.workgroup_id = {x, y, z};
          impl->workgroup(args, ctx);
        }
      }
    }
  };
  if (backend_ == BackendKind::cpu_reference) {
    run();
  } else {
    enqueue(std::move(run));
  }
}

void Device::enqueue(std::function<void()> command) { queue_.push_back(std::move(command)); }

void Device::flush() {
  std::vector<std::function<void()>> pending;
  pending.swap(queue_);
  for (auto& command : pending) command();
}

void Device::synchronize() {
  check_alive();
  flush();
}

Buffer::Buffer(std::shared_ptr<Device> device, uint64_t nbytes, BufferUsage usage)
    : device_(std::move(device)) {
  desc_ = device_->create_buffer(nbytes, usage);
}

Buffer::Buffer(Buffer&& other) noexcept
    : device_(std::move(other.device_)), desc_(other.desc_) {
  other.desc_ = {};
}

Buffer& Buffer::operator=(Buffer&& other) noexcept {
  if (this != &other) {
    reset();
    device_ = std::move(other.device_);
    desc_ = other.desc_;
    other.desc_ = {};
  }
  return *this;
}

Buffer::~Buffer() { reset(); }

void Buffer::reset() {
  if (device_) device_->destroy_buffer(desc_);
  device_.reset();
  desc_ = {};
}

}  // namespace ember::gpu
