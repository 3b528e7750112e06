// SPDX-License-Identifier: Apache-2.0
#include <map>
#include <stdexcept>
#include <string>

#include "ember/kernels/builtin.h"

namespace ember::kernels {

std::shared_ptr<const gpu::KernelRegistry> builtin_registry() {
  static const std::shared_ptr<const gpu::KernelRegistry> registry = [] {
    std::map<std::string, gpu::KernelImpl> impls;
    for (const auto& [name, fn] : reference_kernels()) impls[name].reference = fn;
    for (const auto& [name, fn] : workgroup_kernels()) impls[name].workgroup = fn;
    auto reg = std::make_shared<gpu::KernelRegistry>();
    for (const auto& [name, impl] : impls) {
      if (impl.reference == nullptr || impl.workgroup == nullptr) {
        throw std::logic_error("kernel '" + name + "' lacks a reference or workgroup body");
      }
      reg->add(name, impl);
    }
    return reg;
  }();
  return registry;
}

}  // namespace ember::kernels
