// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ember::engine {

using Rng = std::mt19937_64;

// Uniform double in [0, 1) from the top 53 bits of one draw.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Throws NonFiniteLogits on NaN or +inf. -inf marks a masked id.
void check_finite(std::span<const float> logits);

// The distribution sample_token draws from: temperature 0 puts all mass on
// the argmax (lowest id on ties); otherwise softmax(logits / temperature) in
// double, cut to the shortest descending prefix (ties by id) whose mass
// reaches top_p, then renormalized.
std::vector<double> nucleus_distribution(std::span<const float> logits, float temperature, float top_p);

uint32_t sample_token(std::span<const float> logits, float temperature, float top_p, Rng& rng);

// Finds stop strings in streamed text. Bytes that might begin a stop string
// are held back until it is decided; the cut never splits a UTF-8 sequence.
class StopScanner {
 public:
  explicit StopScanner(std::vector<std::string> stops);

  // Appends `text` and returns what can be released. After a match,
  // stopped() is true and the text from the match on is dropped.
  std::string push(std::string_view text);
  // Releases everything still held back.
  std::string finish();
  bool stopped() const { return stopped_; }

 private:
  std::vector<std::string> stops_;
  size_t hold_ = 0;
  std::string buf_;
  bool stopped_ = false;
};

}  // namespace ember::engine
