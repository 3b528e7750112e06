// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "ember/gpu/kernel_registry.h"

namespace ember::kernels {

// Every kernel in shaders/, each with its scalar oracle and its workgroup body.
std::shared_ptr<const gpu::KernelRegistry> builtin_registry();

std::vector<std::pair<const char*, gpu::ReferenceKernel>> reference_kernels();
std::vector<std::pair<const char*, gpu::WorkgroupKernel>> workgroup_kernels();

}  // namespace ember::kernels
