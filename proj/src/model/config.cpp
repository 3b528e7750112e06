// SPDX-License-Identifier: Apache-2.0
#include "ember/model/config.h"

#include "ember/error.h"
#include "ember/kernels/params.h"
#include "json.hpp"

namespace ember::model {

std::string_view quantization_name(Quantization q) {
  return q == Quantization::q4g32 ? "q4g32" : "f32";
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::invalid_artifact, "config: " + what); };
  if (hidden_size == 0 || num_layers == 0 || num_heads == 0 || num_kv_heads == 0 || head_dim == 0 ||
      ffn_hidden == 0 || vocab_size == 0 || context_window == 0) {
    fail("all sizes must be positive");
  }
  if (hidden_size != num_heads * head_dim) fail("hidden_size must equal num_heads * head_dim");
  if (num_heads % num_kv_heads != 0) fail("num_heads must be divisible by num_kv_heads");
  if (head_dim % 2 != 0) fail("head_dim must be even");
  if (head_dim > kernels::kMaxHeadDim) fail("head_dim above 256 is not supported");
  if (vocab_size < 258) fail("vocab_size must be at least 258");
  if (!(rope_theta > 0.0f) || !(norm_eps > 0.0f)) fail("rope_theta and norm_eps must be positive");
  if (quantization == Quantization::q4g32 &&
      (hidden_size % kernels::kQuantGroup != 0 || ffn_hidden % kernels::kQuantGroup != 0)) {
    fail("q4g32 needs hidden_size and ffn_hidden divisible by 32");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::ordered_json j;
  j["hidden_size"] = hidden_size;
  j["num_layers"] = num_layers;
  j["num_heads"] = num_heads;
  j["num_kv_heads"] = num_kv_heads;
  j["head_dim"] = head_dim;
  j["ffn_hidden"] = ffn_hidden;
  j["vocab_size"] = vocab_size;
  j["rope_theta"] = rope_theta;
  j["norm_eps"] = norm_eps;
  j["context_window"] = context_window;
  j["quantization"] = quantization_name(quantization);
  j["chat_template"] = chat_template;
  return j.dump(2) + "\n";
}

ModelConfig ModelConfig::from_json(std::string_view text) {
  ModelConfig c;
  try {
    const auto j = nlohmann::json::parse(text);
    c.hidden_size = j.at("hidden_size").get<uint32_t>();
    c.num_layers = j.at("num_layers").get<uint32_t>();
    c.num_heads = j.at("num_heads").get<uint32_t>();
    c.num_kv_heads = j.at("num_kv_heads").get<uint32_t>();
    c.head_dim = j.at("head_dim").get<uint32_t>();
    c.ffn_hidden = j.at("ffn_hidden").get<uint32_t>();
    c.vocab_size = j.at("vocab_size").get<uint32_t>();
    c.rope_theta = j.at("rope_theta").get<float>();
    c.norm_eps = j.at("norm_eps").get<float>();
    c.context_window = j.at("context_window").get<uint32_t>();
    const auto q = j.at("quantization").get<std::string>();
    if (q == "q4g32") {
      c.quantization = Quantization::q4g32;
    } else if (q == "f32") {
      c.quantization = Quantization::f32;
    } else {
      throw Error(Errc::invalid_artifact, "config: unknown quantization '" + q + "'");
    }
    c.chat_template = j.value("chat_template", std::string(kDefaultChatTemplate));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_artifact, std::string("config.json: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace ember::model
