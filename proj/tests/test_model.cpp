// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "ember/kernels/tensor.h"
#include "ember/model/model.h"
#include "httplib.h"
#include "json.hpp"
#include "support/devices.h"
#include "support/errc.h"
#include "support/host_llama.h"
#include "support/oracles.h"
#include "support/toy.h"

using namespace ember;
using namespace ember::model;
using testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << s;
}

uint32_t argmax(const std::vector<float>& v) {
  return uint32_t(std::max_element(v.begin(), v.end()) - v.begin());
}

// Smallest gap between the top logit and the runner-up.
double top_margin(const std::vector<float>& v) {
  std::vector<float> s(v);
  std::partial_sort(s.begin(), s.begin() + 2, s.end(), std::greater<>());
  return s[0] - s[1];
}

std::vector<uint32_t> greedy(Model& m, const std::vector<uint32_t>& prompt, int n, double* min_margin = nullptr) {
  const auto seq = m.add_sequence();
  auto logits = m.prefill(seq, prompt).to_host();
  std::vector<uint32_t> out;
  for (int i = 0; i < n; ++i) {
    if (min_margin) *min_margin = std::min(*min_margin, top_margin(logits));
    out.push_back(argmax(logits));
    if (i + 1 < n) logits = m.decode_step(seq, out.back()).to_host();
  }
  m.remove_sequence(seq);
  return out;
}

}  // namespace

TEST_CASE("make-toy artifact layout and determinism") {
  TempDir dir("model_layout");
  const auto a = testing::make_toy(dir, 42, toy_config(), "a");
  const auto b = testing::make_toy(dir, 42, toy_config(), "b");
  const auto c = testing::make_toy(dir, 43, toy_config(), "c");
  for (const char* f : {"config.json", "tokenizer.json", "manifest.json", "shard_0.bin"}) {
    CAPTURE(f);
    CHECK(std::filesystem::exists(std::filesystem::path(a) / f));
  }
  const auto manifest = nlohmann::json::parse(slurp(std::filesystem::path(a) / "manifest.json"));
  CHECK(manifest["shards"].size() > 1);
  for (const auto& s : manifest["shards"]) {
    const std::string file = s["file"];
    CHECK(slurp(std::filesystem::path(a) / file) == slurp(std::filesystem::path(b) / file));
    CHECK(slurp(std::filesystem::path(a) / file) != slurp(std::filesystem::path(c) / file));
  }
  CHECK(slurp(std::filesystem::path(a) / "tokenizer.json") == "{\"type\":\"byte\",\"bos_id\":256,\"eos_id\":257}\n");
  const auto cfg = nlohmann::json::parse(slurp(std::filesystem::path(a) / "config.json"));
  CHECK(cfg["num_layers"] == 2);
  CHECK(cfg["hidden_size"] == 64);
  CHECK(cfg["quantization"] == "q4g32");
}

TEST_CASE("load_model reports monotone progress ending at the total") {
  TempDir dir("model_progress");
  const auto path = testing::make_toy(dir);
  std::vector<LoadProgress> events;
  LoadOptions opt;
  opt.on_progress = [&](const LoadProgress& p) { events.push_back(p); };
  auto m = load_model(path, testing::cpu_device(), opt);
  CHECK(m->config().num_layers == 2);
  CHECK(m->config().vocab_size == 512);
  REQUIRE(events.size() >= 2);
  for (size_t i = 1; i < events.size(); ++i) CHECK(events[i].loaded_bytes >= events[i - 1].loaded_bytes);
  CHECK(events.back().loaded_bytes == events.back().total_bytes);
  CHECK(events.front().loaded_bytes == 0);
  CHECK(m->weight_bytes() > 0);
}

TEST_CASE("load_model error contracts") {
  TempDir dir("model_errors");
  const auto path = testing::make_toy(dir);
  const auto manifest_path = std::filesystem::path(path) / "manifest.json";
  const auto original = slurp(manifest_path);

  SUBCASE("missing lm_head.weight") {
    auto j = nlohmann::ordered_json::parse(original);
    auto& recs = j["records"];
    for (auto it = recs.begin(); it != recs.end(); ++it) {
      if ((*it)["name"] == "lm_head.weight") {
        recs.erase(it);
        break;
      }
    }
    spit(manifest_path, j.dump());
    try {
      load_model(path, testing::cpu_device());
      FAIL("expected MissingRecord");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::missing_record);
      CHECK(std::string(e.what()).find("lm_head.weight") != std::string::npos);
    }
  }
  SUBCASE("corrupted shard") {
    const auto shard = std::filesystem::path(path) / "shard_1.bin";
    auto bytes = slurp(shard);
    bytes[bytes.size() / 2] ^= 0x40;
    spit(shard, bytes);
    CHECK_ERRC(load_model(path, testing::cpu_device()), Errc::checksum_mismatch);
  }
  SUBCASE("overlapping records") {
    auto j = nlohmann::ordered_json::parse(original);
    j["records"][1]["shard_file"] = j["records"][0]["shard_file"];
    j["records"][1]["byte_offset"] = 0;
    spit(manifest_path, j.dump());
    CHECK_ERRC(load_model(path, testing::cpu_device()), Errc::invalid_artifact);
  }
  SUBCASE("device too small") {
    gpu::DeviceOptions o;
    o.preference = gpu::DevicePreference::cpu_reference;
    o.limits.max_total_bytes = 64 * 1024;
    CHECK_ERRC(load_model(path, gpu::init_device(o)), Errc::out_of_memory);
  }
  SUBCASE("missing directory") {
    CHECK_ERRC(load_model((dir / "nope").string(), testing::cpu_device()), Errc::io_error);
  }
}

TEST_CASE("load_model over http") {
  TempDir dir("model_http");
  const auto path = testing::make_toy(dir);
  httplib::Server server;
  server.set_mount_point("/models", dir.str());
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  auto dev = testing::cpu_device();
  auto remote = load_model("http://127.0.0.1:" + std::to_string(port) + "/models/toy", dev);
  auto local = load_model(path, dev);
  const std::vector<uint32_t> prompt = {256, 72, 105};
  const auto s1 = remote->add_sequence(), s2 = local->add_sequence();
  CHECK(remote->prefill(s1, prompt).to_host() == local->prefill(s2, prompt).to_host());
  CHECK_ERRC(load_model("http://127.0.0.1:" + std::to_string(port) + "/models/absent", dev), Errc::io_error);
  server.stop();
  t.join();
}

TEST_CASE("forward pass matches an independent host implementation") {
  TempDir dir("model_host");
  for (auto quant : {Quantization::q4g32, Quantization::f32}) {
    auto cfg = toy_config();
    cfg.quantization = quant;
    const auto path = testing::make_toy(dir, 7, cfg, std::string(quantization_name(quant)));
    for (auto dev : {testing::cpu_device(), testing::gpu_device()}) {
      CAPTURE(quantization_name(quant));
      CAPTURE(gpu::backend_name(dev->backend()));
      auto m = load_model(path, dev);
      oracle::HostLlama host(path);
      const std::vector<uint32_t> prompt = {256, 10, 200, 33, 95, 17, 300, 2, 45, 77, 91, 128, 64, 5, 6, 7, 8, 9};
      const auto seq = m->add_sequence();
      const auto got = m->prefill(seq, prompt).to_host();
      const auto want = host.feed(prompt);
      CHECK(oracle::max_abs_diff(got, want) <= 1e-3);
      const auto step = m->decode_step(seq, 99).to_host();
      CHECK(oracle::max_abs_diff(step, host.feed({99})) <= 1e-3);
    }
  }
}

TEST_CASE("prefill then decode equals one longer prefill") {
  TempDir dir("model_consistency");
  const auto path = testing::make_toy(dir);
  std::mt19937 rng(5);
  for (auto dev : {testing::cpu_device(), testing::gpu_device()}) {
    auto m = load_model(path, dev);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<uint32_t> ids(testing::uniform_int(rng, 2, 60));
      for (auto& id : ids) id = testing::uniform_int(rng, 0, 511);
      const auto whole = m->add_sequence();
      const auto full = m->prefill(whole, ids).to_host();
      const auto split = m->add_sequence();
      m->prefill(split, std::span(ids).first(ids.size() - 1));
      const auto stepped = m->decode_step(split, ids.back()).to_host();
      REQUIRE(oracle::max_abs_diff(full, stepped) <= 1e-4);
      CHECK(m->length(whole) == ids.size());
      CHECK(m->length(split) == ids.size());
      m->remove_sequence(whole);
      m->remove_sequence(split);
    }
  }
}

TEST_CASE("context window and determinism") {
  TempDir dir("model_context");
  auto cfg = toy_config();
  cfg.context_window = 40;
  const auto path = testing::make_toy(dir, 42, cfg);
  auto m = load_model(path, testing::cpu_device());
  const auto seq = m->add_sequence();
  CHECK_ERRC(m->prefill(seq, std::vector<uint32_t>(41, 65)), Errc::context_overflow);
  CHECK(m->length(seq) == 0);
  const auto a = m->prefill(seq, std::vector<uint32_t>(39, 65)).to_host();
  m->decode_step(seq, 66);
  CHECK(m->length(seq) == 40);
  CHECK_ERRC(m->decode_step(seq, 66), Errc::context_overflow);
  CHECK(m->length(seq) == 40);

  const auto other = m->add_sequence();
  const auto b = m->prefill(other, std::vector<uint32_t>(39, 65)).to_host();
  CHECK(a == b);  // bitwise on cpu_reference
  CHECK_ERRC(m->prefill(other, std::vector<uint32_t>{600}), Errc::id_out_of_range);
  CHECK(m->length(other) == 39);
}

TEST_CASE("cache exhaustion is reported and recoverable") {
  TempDir dir("model_full");
  const auto path = testing::make_toy(dir);
  LoadOptions opt;
  opt.max_pages = 3;
  auto m = load_model(path, testing::cpu_device(), opt);
  const auto a = m->add_sequence();
  m->prefill(a, std::vector<uint32_t>(40, 70));
  const auto b = m->add_sequence();
  CHECK_ERRC(m->prefill(b, std::vector<uint32_t>(20, 70)), Errc::cache_full);
  CHECK(m->length(b) == 0);
  m->remove_sequence(a);
  CHECK_NOTHROW(m->prefill(b, std::vector<uint32_t>(20, 70)));
}

TEST_CASE("gpu and cpu_reference logits agree over 20 decode steps") {
  TempDir dir("model_parity");
  const auto path = testing::make_toy(dir);
  auto cpu = load_model(path, testing::cpu_device());
  auto gpu = load_model(path, testing::gpu_device());
  const std::vector<uint32_t> prompt = {256, 99, 111, 117, 110, 116};
  const auto sc = cpu->add_sequence(), sg = gpu->add_sequence();
  auto lc = cpu->prefill(sc, prompt).to_host();
  auto lg = gpu->prefill(sg, prompt).to_host();
  double worst = oracle::max_abs_diff(lc, lg);
  for (int i = 0; i < 20; ++i) {
    const uint32_t next = argmax(lc);
    lc = cpu->decode_step(sc, next).to_host();
    lg = gpu->decode_step(sg, next).to_host();
    worst = std::max(worst, oracle::max_abs_diff(lc, lg));
  }
  MESSAGE("worst logit difference " << worst);
  CHECK(worst <= 1e-3);
}

TEST_CASE("forked sequences decode identically") {
  TempDir dir("model_fork");
  const auto path = testing::make_toy(dir);
  for (auto dev : {testing::cpu_device(), testing::gpu_device()}) {
    auto m = load_model(path, dev);
    const auto a = m->add_sequence();
    m->prefill(a, std::vector<uint32_t>{256, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19});
    const auto b = m->fork(a);
    const auto la = m->decode_step(a, 42).to_host();
    const auto lb = m->decode_step(b, 42).to_host();
    CHECK(oracle::max_abs_diff(la, lb) <= 1e-4);
    const auto da = m->decode_step(a, 1).to_host();
    const auto db = m->decode_step(b, 2).to_host();
    CHECK(oracle::max_abs_diff(da, db) > 1e-4);
    CHECK(m->cache().conserved());
  }
}

TEST_CASE("greedy decoding is identical across backends") {
  TempDir dir("model_greedy");
  const auto path = testing::make_toy(dir);
  auto cpu = load_model(path, testing::cpu_device());
  auto gpu = load_model(path, testing::gpu_device());
  const std::vector<uint32_t> prompt = {256, 99, 111, 117, 110, 116};
  double margin = 1e9;
  const auto a = greedy(*cpu, prompt, 32, &margin);
  const auto b = greedy(*gpu, prompt, 32);
  MESSAGE("smallest top-2 logit margin " << margin);
  CHECK(margin > 1e-3);
  CHECK(a == b);
  CHECK(greedy(*cpu, prompt, 32) == a);
}

TEST_CASE("requantizing the stored weights reproduces their codes") {
  TempDir dir("model_requant");
  const auto path = std::filesystem::path(testing::make_toy(dir));
  const auto manifest = nlohmann::json::parse(slurp(path / "manifest.json"));
  std::map<std::string, std::string> shards;
  for (const auto& s : manifest["shards"]) shards[s["file"]] = slurp(path / s["file"].get<std::string>());
  int checked = 0;
  for (const auto& r : manifest["records"]) {
    const std::string name = r["name"];
    if (r["dtype"] != "q4g32_codes") continue;
    const std::string base = name.substr(0, name.size() - 6);
    const auto* sr = [&]() -> const nlohmann::json* {
      for (const auto& x : manifest["records"]) if (x["name"] == base + ".scales") return &x;
      return nullptr;
    }();
    REQUIRE(sr != nullptr);
    const uint32_t rows = r["shape"][0], cols = r["shape"][1];
    const auto& cb = shards[r["shard_file"]];
    const auto& sb = shards[(*sr)["shard_file"]];
    std::vector<uint32_t> packed(size_t{rows} * cols / 8), scale_words((size_t{rows} * cols / 32 + 1) / 2, 0);
    std::memcpy(packed.data(), cb.data() + r["byte_offset"].get<size_t>(), packed.size() * 4);
    std::memcpy(scale_words.data(), sb.data() + (*sr)["byte_offset"].get<size_t>(), (*sr)["nbytes"].get<size_t>());
    const auto w = oracle::dequant(packed, scale_words, int(rows), int(cols));
    const auto q = kernels::quantize_q4g32(w, rows, cols);
    REQUIRE(q.packed == packed);
    REQUIRE(kernels::pack_scales(q.scales) == scale_words);
    ++checked;
  }
  CHECK(checked == 14);
}

TEST_CASE("logits stay finite for random weights across 100 seeds") {
  TempDir dir("model_finite");
  auto dev = testing::cpu_device();
  for (uint64_t seed = 0; seed < 100; ++seed) {
    const auto path = testing::make_toy(dir, seed, toy_config(), "s" + std::to_string(seed));
    auto m = load_model(path, dev);
    const auto seq = m->add_sequence();
    auto logits = m->prefill(seq, std::vector<uint32_t>{256, uint32_t(seed % 256), 10, 20}).to_host();
    logits = m->decode_step(seq, argmax(logits)).to_host();
    REQUIRE(std::all_of(logits.begin(), logits.end(), [](float x) { return std::isfinite(x); }));
    std::filesystem::remove_all(path);
  }
}

TEST_CASE("config validation") {
  auto cfg = toy_config();
  CHECK_NOTHROW(cfg.validate());
  CHECK(ModelConfig::from_json(cfg.to_json()) == cfg);
  cfg.num_kv_heads = 3;
  CHECK_ERRC(cfg.validate(), Errc::invalid_artifact);
  cfg = toy_config();
  cfg.hidden_size = 60;
  CHECK_ERRC(cfg.validate(), Errc::invalid_artifact);
  CHECK_ERRC(ModelConfig::from_json("{}"), Errc::invalid_artifact);
}
