// SPDX-License-Identifier: Apache-2.0
#include "ember/engine/sampler.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ember/error.h"

namespace ember::engine {

void check_finite(std::span<const float> logits) {
  for (size_t i = 0; i < logits.size(); ++i) {
    const float x = logits[i];
    if (std::isnan(x) || x == std::numeric_limits<float>::infinity())
      throw Error(Errc::non_finite_logits, "logit " + std::to_string(i) + " is " + std::to_string(x));
  }
}

std::vector<double> nucleus_distribution(std::span<const float> logits, float temperature, float top_p) {
  check_finite(logits);
  const size_t n = logits.size();
  std::vector<double> p(n, 0.0);
  size_t best = n;
  for (size_t i = 0; i < n; ++i)
    if (std::isfinite(logits[i]) && (best == n || logits[i] > logits[best])) best = i;
  if (best == n) throw Error(Errc::non_finite_logits, "every logit is masked");
  if (temperature == 0.0f) {
    p[best] = 1.0;
    return p;
  }

  const double top = logits[best];
  double z = 0;
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(logits[i])) continue;
    p[i] = std::exp((static_cast<double>(logits[i]) - top) / temperature);
    z += p[i];
  }
  for (double& x : p) x /= z;

  std::vector<uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) { return p[a] > p[b]; });
  double cum = 0;
  size_t keep = 0;
  while (keep < n && p[order[keep]] > 0 && cum < top_p) cum += p[order[keep++]];
  std::vector<double> q(n, 0.0);
  for (size_t k = 0; k < keep; ++k) q[order[k]] = p[order[k]] / cum;
  return q;
}

uint32_t sample_token(std::span<const float> logits, float temperature, float top_p, Rng& rng) {
  const auto q = nucleus_distribution(logits, temperature, top_p);
  if (temperature == 0.0f) return static_cast<uint32_t>(std::max_element(q.begin(), q.end()) - q.begin());
  const double u = uniform01(rng);
  double cum = 0;
  uint32_t last = 0;
  for (uint32_t i = 0; i < q.size(); ++i) {
    if (q[i] == 0) continue;
    cum += q[i];
    last = i;
    if (u < cum) return i;
  }
  return last;
}

StopScanner::StopScanner(std::vector<std::string> stops) : stops_(std::move(stops)) {
  for (const auto& s : stops_) hold_ = std::max(hold_, s.empty() ? 0 : s.size() - 1);
}

std::string StopScanner::push(std::string_view text) {
  if (stopped_) return {};
  buf_ += text;
  size_t hit = std::string::npos;
  for (const auto& s : stops_) {
    if (s.empty()) continue;
    hit = std::min(hit, buf_.find(s));
  }
  if (hit != std::string::npos) {
    std::string out = buf_.substr(0, hit);
    buf_.clear();
    stopped_ = true;
    return out;
  }
  if (buf_.size() <= hold_) return {};
  size_t cut = buf_.size() - hold_;
  while (cut > 0 && cut < buf_.size() && (static_cast<uint8_t>(buf_[cut]) & 0xC0) == 0x80) --cut;
  std::string out = buf_.substr(0, cut);
  buf_.erase(0, cut);
  return out;
}

std::string StopScanner::finish() {
  std::string out;
  out.swap(buf_);
  return out;
}

}  // namespace ember::engine
