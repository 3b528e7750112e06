// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <random>

#include "ember/error.h"
#include "ember/kernels/params.h"
#include "ember/kernels/tensor.h"
#include "ember/model/model.h"

namespace ember::model {

namespace {

// Portable uniform doubles: std::mt19937_64 is fully specified, the standard
// distributions are not.
class Uniform {
 public:
  explicit Uniform(uint64_t seed) : rng_(seed) {}
  double operator()(double lo, double hi) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

 private:
  std::mt19937_64 rng_;
};

template <class T>
std::string bytes_of(const std::vector<T>& v) {
  std::string s(v.size() * sizeof(T), '\0');
  std::memcpy(s.data(), v.data(), s.size());
  return s;
}

}  // namespace

void make_toy_artifact(uint64_t seed, const ModelConfig& cfg, const std::filesystem::path& out) {
  cfg.validate();
  Uniform uni(seed);
  ArtifactWriter writer(out);
  for (const ParamSpec& p : required_params(cfg)) {
    size_t n = 1;
    for (uint32_t d : p.shape) n *= d;
    std::vector<float> w(n);
    if (p.name.find("norm") != std::string::npos) {
      for (float& x : w) x = static_cast<float>(uni(0.8, 1.2));
    } else if (p.name == "model.embed_tokens.weight") {
      for (float& x : w) x = static_cast<float>(uni(-1.0, 1.0));
    } else {
      // Unit-variance activations: U(-a, a) with a = sqrt(3 / fan_in).
      const uint32_t fan_in = p.linear ? p.shape[1] : p.shape[0];
      const double a = std::sqrt(3.0 / fan_in);
      for (float& x : w) x = static_cast<float>(uni(-a, a));
    }

    if (!p.linear) {
      writer.add(p.name, RecordDtype::f32, p.shape, bytes_of(w));
    } else if (cfg.quantization == Quantization::f32) {
      // [out, in] -> [in, out]
      const uint32_t rows = p.shape[0], cols = p.shape[1];
      std::vector<float> t(n);
      for (uint32_t r = 0; r < rows; ++r)
        for (uint32_t c = 0; c < cols; ++c) t[size_t{c} * rows + r] = w[size_t{r} * cols + c];
      writer.add(p.name, RecordDtype::f32, {cols, rows}, bytes_of(t));
    } else {
      const auto q = kernels::quantize_q4g32(w, p.shape[0], p.shape[1]);
      std::string codes = bytes_of(q.packed);
      codes.resize(record_nbytes(RecordDtype::q4g32_codes, p.shape));
      writer.add(p.name + ".codes", RecordDtype::q4g32_codes, p.shape, std::move(codes));
      writer.add(p.name + ".scales", RecordDtype::f16_scales,
                 {p.shape[0], p.shape[1] / kernels::kQuantGroup}, bytes_of(q.scales));
    }
  }
  writer.finish(cfg, tokenizer::ByteTokenizer(cfg.vocab_size).to_json());
}

}  // namespace ember::model
