// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ember {

// Every failure the library reports carries one of these codes. The snake_case
// name of a code is what appears on the wire and in CLI error lines.
enum class Errc {
  // gpu runtime
  no_adapter,
  out_of_memory,
  size_exceeds_limit,
  out_of_bounds,
  missing_usage,
  binding_mismatch,
  unknown_kernel,
  invalid_buffer,
  device_lost,
  shader_error,
  shared_page_write,
  // kernels
  shape_mismatch,
  odd_head_dim,
  unallocated_page,
  // kv cache
  unknown_sequence,
  cache_full,
  // model
  missing_record,
  checksum_mismatch,
  invalid_artifact,
  context_overflow,
  io_error,
  // tokenizer
  id_out_of_range,
  // grammar
  unsupported_schema,
  token_rejected,
  dead_end_grammar,
  // engine
  duplicate_model_id,
  model_not_found,
  non_finite_logits,
  invalid_request,
  // wire
  load_failed,
  disconnected,
  duplicate_request_id,
  internal,
};

std::string_view errc_name(Errc code);

// Inverse of errc_name; nullopt for names that are not codes.
std::optional<Errc> errc_from_name(std::string_view name);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ember
