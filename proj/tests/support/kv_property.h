// SPDX-License-Identifier: Apache-2.0
// Model-based check of the paged cache: random add/append/fork/remove against
// shadow contiguous arrays, comparing attention after every step.
#pragma once

#include <map>
#include <random>
#include <sstream>
#include <string>

#include "ember/error.h"
#include "ember/kv/paged_kv_cache.h"
#include "support/devices.h"
#include "support/oracles.h"

namespace testing {

struct KvPropertyResult {
  bool ok = true;
  double max_err = 0;
  int ops = 0;
  int cache_full = 0;
  std::string failure;
};

inline KvPropertyResult run_kv_property(const std::shared_ptr<ember::gpu::Device>& dev, uint32_t seed,
                                        int max_ops = 64) {
  using ember::kernels::Tensor;
  constexpr uint32_t layers = 2, kvh = 2, d = 8, heads = 4, row = kvh * d;
  ember::kv::CacheConfig cfg{layers, kvh, d, 16, 10};
  ember::kv::PagedKvCache cache(cfg, dev);
  std::mt19937 rng(seed);
  KvPropertyResult res;

  struct Shadow {
    std::vector<std::vector<float>> k, v;  // per layer, contiguous rows
  };
  std::map<ember::kv::SeqId, Shadow> shadow;

  auto fail = [&](const std::string& what) {
    res.ok = false;
    std::ostringstream s;
    s << "seed " << seed << " op " << res.ops << ": " << what;
    res.failure = s.str();
  };

  auto check_seq = [&](ember::kv::SeqId id) {
    const Shadow& sh = shadow.at(id);
    const uint32_t len = uint32_t(sh.k[0].size() / row);
    if (cache.length(id) != len) return fail("length mismatch"), false;
    if (len == 0) return true;
    for (uint32_t l = 0; l < layers; ++l) {
      const uint32_t nq = uniform_int(rng, 1, std::min<uint32_t>(len, 3));
      const auto q = random_floats(rng, size_t{nq} * heads * d);
      const auto out = ember::kernels::paged_attention(Tensor::from_host(dev, {nq, heads, d}, q),
                                                       cache.view(id, l), len)
                           .to_host();
      const auto ref = oracle::attention(q, sh.k[l], sh.v[l], int(nq), heads, kvh, d, int(len));
      const double err = oracle::max_abs_diff(out, ref);
      res.max_err = std::max(res.max_err, err);
      if (!(err <= 1e-4)) return fail("attention differs by " + std::to_string(err)), false;
    }
    return true;
  };

  const int ops = uniform_int(rng, 1, max_ops);
  for (res.ops = 0; res.ops < ops && res.ok; ++res.ops) {
    std::vector<ember::kv::SeqId> live;
    for (const auto& [id, sh] : shadow) live.push_back(id);
    const uint32_t kind = uniform_int(rng, 0, 9);
    ember::kv::SeqId touched = 0;
    try {
      if (live.empty() || (kind == 0 && live.size() < 4)) {
        touched = cache.add_sequence();
        shadow[touched] = Shadow{std::vector<std::vector<float>>(layers), std::vector<std::vector<float>>(layers)};
      } else if (kind <= 6) {
        touched = live[uniform_int(rng, 0, uint32_t(live.size() - 1))];
        const uint32_t t = uniform_int(rng, 1, 20);
        std::vector<Tensor> ks, vs;
        std::vector<std::vector<float>> kh, vh;
        for (uint32_t l = 0; l < layers; ++l) {
          kh.push_back(random_floats(rng, size_t{t} * row));
          vh.push_back(random_floats(rng, size_t{t} * row));
          ks.push_back(Tensor::from_host(dev, {t, row}, kh.back()));
          vs.push_back(Tensor::from_host(dev, {t, row}, vh.back()));
        }
        const uint32_t free_before = cache.free_pages();
        const uint32_t len_before = cache.length(touched);
        try {
          cache.append(touched, ks, vs);
          for (uint32_t l = 0; l < layers; ++l) {
            auto& sh = shadow[touched];
            sh.k[l].insert(sh.k[l].end(), kh[l].begin(), kh[l].end());
            sh.v[l].insert(sh.v[l].end(), vh[l].begin(), vh[l].end());
          }
        } catch (const ember::Error& e) {
          if (e.code() != ember::Errc::cache_full) throw;
          ++res.cache_full;
          if (cache.free_pages() != free_before || cache.length(touched) != len_before) {
            fail("CacheFull changed cache state");
          }
        }
      } else if (kind <= 8) {
        const auto src = live[uniform_int(rng, 0, uint32_t(live.size() - 1))];
        if (live.size() < 4) {
          const uint32_t free_before = cache.free_pages();
          touched = cache.fork(src);
          shadow[touched] = shadow[src];
          if (cache.free_pages() != free_before) fail("fork allocated pages");
        }
      } else {
        const auto victim = live[uniform_int(rng, 0, uint32_t(live.size() - 1))];
        cache.remove_sequence(victim);
        shadow.erase(victim);
      }
      dev->synchronize();
    } catch (const ember::Error& e) {
      fail(std::string("unexpected error: ") + e.what());
      break;
    }
    if (!cache.conserved()) {
      fail("page conservation violated");
      break;
    }
    if (touched != 0 && shadow.count(touched)) check_seq(touched);
  }
  for (const auto& [id, sh] : shadow) {
    if (!res.ok) break;
    check_seq(id);
  }
  return res;
}

}  // namespace testing
