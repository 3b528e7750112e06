// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "ember/error.h"
#include "ember/gpu/device.h"

#ifndef EMBER_SHADER_DIR
#define EMBER_SHADER_DIR "shaders"
#endif

namespace ember::gpu {

namespace {

std::string strip_comments(std::string_view source) {
  std::string out;
  out.reserve(source.size());
  size_t i = 0;
  while (i < source.size()) {
    if (source.compare(i, 2, "//") == 0) {
      while (i < source.size() && source[i] != '\n') ++i;
    } else if (source.compare(i, 2, "/*") == 0) {
      const size_t end = source.find("*/", i + 2);
      i = end == std::string_view::npos ? source.size() : end + 2;
    } else {
      out.push_back(source[i++]);
    }
  }
  return out;
}

}  // namespace

std::string default_shader_dir() {
  if (const char* env = std::getenv("EMBER_SHADER_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return EMBER_SHADER_DIR;
}

KernelHandle parse_shader(std::string_view name, std::string_view source) {
  const std::string text = strip_comments(source);
  KernelHandle handle;
  handle.name = std::string(name);

  static const std::regex entry_re(
      R"(@compute\s*@workgroup_size\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?(?:,\s*(\d+)\s*)?,?\s*\)\s*fn\s+main\s*\()");
  std::smatch m;
  if (!std::regex_search(text, m, entry_re)) {
    throw Error(Errc::shader_error,
                handle.name + ": no '@compute @workgroup_size(...) fn main' entry point");
  }
  handle.workgroup_size.x = static_cast<uint32_t>(std::stoul(m[1].str()));
  handle.workgroup_size.y = m[2].matched ? static_cast<uint32_t>(std::stoul(m[2].str())) : 1;
  handle.workgroup_size.z = m[3].matched ? static_cast<uint32_t>(std::stoul(m[3].str())) : 1;

  static const std::regex binding_re(
      R"(@group\(\s*0\s*\)\s*@binding\(\s*(\d+)\s*\)\s*var\s*<\s*(storage|uniform)\s*(?:,\s*(read|read_write)\s*)?>)");
  for (auto it = std::sregex_iterator(text.begin(), text.end(), binding_re);
       it != std::sregex_iterator(); ++it) {
    const auto& bm = *it;
    BindSlot slot;
    slot.slot = static_cast<uint32_t>(std::stoul(bm[1].str()));
    if (bm[2].str() == "uniform") {
      slot.kind = BindingKind::uniform;
    } else {
      slot.kind = bm[3].matched && bm[3].str() == "read_write" ? BindingKind::storage_rw
                                                                 : BindingKind::storage_ro;
    }
    handle.bind_slots.push_back(slot);
  }
  std::sort(handle.bind_slots.begin(), handle.bind_slots.end(),
            [](const BindSlot& a, const BindSlot& b) { return a.slot < b.slot; });
  for (size_t i = 0; i < handle.bind_slots.size(); ++i) {
    if (handle.bind_slots[i].slot != i) {
      throw Error(Errc::shader_error, handle.name + ": bindings must be numbered 0..n-1");
    }
  }
  if (handle.bind_slots.empty()) {
    throw Error(Errc::shader_error, handle.name + ": shader declares no bindings");
  }
  return handle;
}

std::map<std::string, KernelHandle> load_shader_library(const std::string& dir,
                                                        const DeviceLimits& limits) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    throw Error(Errc::shader_error, "shader directory '" + dir + "' not found");
  }
  std::map<std::string, KernelHandle> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".wgsl") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string name = entry.path().stem().string();
    KernelHandle handle = parse_shader(name, ss.str());
    const Extent3& wg = handle.workgroup_size;
    if (wg.x == 0 || wg.y == 0 || wg.z == 0 || wg.count() > limits.max_workgroup_invocations) {
      throw Error(Errc::shader_error,
                  name + ": workgroup size exceeds max_workgroup_invocations or is zero");
    }
    out.emplace(name, std::move(handle));
  }
  return out;
}

}  // namespace ember::gpu
