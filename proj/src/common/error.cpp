// SPDX-License-Identifier: Apache-2.0
#include "ember/error.h"

namespace ember {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::no_adapter: return "no_adapter";
    case Errc::out_of_memory: return "out_of_memory";
    case Errc::size_exceeds_limit: return "size_exceeds_limit";
    case Errc::out_of_bounds: return "out_of_bounds";
    case Errc::missing_usage: return "missing_usage";
    case Errc::binding_mismatch: return "binding_mismatch";
    case Errc::unknown_kernel: return "unknown_kernel";
    case Errc::invalid_buffer: return "invalid_buffer";
    case Errc::device_lost: return "device_lost";
    case Errc::shader_error: return "shader_error";
    case Errc::shared_page_write: return "shared_page_write";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::odd_head_dim: return "odd_head_dim";
    case Errc::unallocated_page: return "unallocated_page";
    case Errc::unknown_sequence: return "unknown_sequence";
    case Errc::cache_full: return "cache_full";
    case Errc::missing_record: return "missing_record";
    case Errc::checksum_mismatch: return "checksum_mismatch";
    case Errc::invalid_artifact: return "invalid_artifact";
    case Errc::context_overflow: return "context_overflow";
    case Errc::io_error: return "io_error";
    case Errc::id_out_of_range: return "id_out_of_range";
    case Errc::unsupported_schema: return "unsupported_schema";
    case Errc::token_rejected: return "token_rejected";
    case Errc::dead_end_grammar: return "dead_end_grammar";
    case Errc::duplicate_model_id: return "duplicate_model_id";
    case Errc::model_not_found: return "model_not_found";
    case Errc::non_finite_logits: return "non_finite_logits";
    case Errc::invalid_request: return "invalid_request";
    case Errc::load_failed: return "load_failed";
    case Errc::disconnected: return "disconnected";
    case Errc::duplicate_request_id: return "duplicate_request_id";
    case Errc::internal: return "internal";
  }
  return "internal";
}

std::optional<Errc> errc_from_name(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(Errc::internal); ++i)
    if (errc_name(static_cast<Errc>(i)) == name) return static_cast<Errc>(i);
  return std::nullopt;
}

}  // namespace ember
