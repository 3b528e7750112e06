// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace ember::model {

enum class Quantization { q4g32, f32 };

std::string_view quantization_name(Quantization q);

inline constexpr std::string_view kDefaultChatTemplate = "<s>[{role}]: {content}\n";

struct ModelConfig {
  uint32_t hidden_size = 64;
  uint32_t num_layers = 2;
  uint32_t num_heads = 4;
  uint32_t num_kv_heads = 2;
  uint32_t head_dim = 16;
  uint32_t ffn_hidden = 128;
  uint32_t vocab_size = 512;
  float rope_theta = 10000.0f;
  float norm_eps = 1e-5f;
  uint32_t context_window = 512;
  Quantization quantization = Quantization::q4g32;
  // Per-message template; {role} and {content} are substituted and a leading
  // "<s>" becomes the bos token. The prompt ends with "[assistant]: ".
  std::string chat_template = std::string(kDefaultChatTemplate);

  // Throws InvalidArtifact naming the first violated invariant.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(std::string_view text);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// 2 layers, hidden 64, 4 heads, 2 kv heads, ffn 128, vocab 512, context 512.
inline ModelConfig toy_config() { return ModelConfig{}; }

}  // namespace ember::model
