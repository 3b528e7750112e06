// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <map>
#include <regex>

#include "httplib.h"
#include "json.hpp"
#include "support/json_reference.h"
#include "support/process.h"

using testing::run_cli;
using Json = nlohmann::ordered_json;

namespace {

// Relative path -> bytes for every regular file under `dir`.
std::map<std::string, std::string> tree(const std::filesystem::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[std::filesystem::relative(e.path(), dir).string()] = testing::slurp(e.path());
  return files;
}

size_t tree_hash(const std::filesystem::path& dir) {
  size_t h = 0;
  for (const auto& [name, bytes] : tree(dir))
    h = h * 1000003 ^ std::hash<std::string>{}(name) ^ (std::hash<std::string>{}(bytes) << 1);
  return h;
}

// Lines of stdout parsed as JSON; fails the test on a non-JSON line.
std::vector<Json> json_lines(const std::string& out) {
  std::vector<Json> v;
  std::istringstream in(out);
  for (std::string line; std::getline(in, line);) {
    INFO(line);
    REQUIRE(Json::accept(line));
    v.push_back(Json::parse(line));
  }
  return v;
}

}  // namespace

TEST_CASE("make-toy is deterministic per seed") {
  testing::TempDir dir("make_toy");
  const auto a = dir / "a", b = dir / "b", c = dir / "c";
  REQUIRE(run_cli({"make-toy", "--seed", "42", "--out", a.string()}).code == 0);
  REQUIRE(run_cli({"make-toy", "--seed", "42", "--out", b.string()}).code == 0);
  REQUIRE(run_cli({"make-toy", "--seed", "43", "--out", c.string()}).code == 0);
  CHECK(tree(a) == tree(b));
  CHECK(tree_hash(a) == tree_hash(b));
  CHECK(tree_hash(a) != tree_hash(c));
  CHECK(tree(a).count("manifest.json") == 1);

  const auto r = run_cli({"make-toy", "--out", (dir / "d").string(), "--quant", "q8", "--json"});
  CHECK(r.code != 0);
  const auto lines = json_lines(r.out);
  REQUIRE(lines.size() == 1);
  CHECK(lines[0]["error"]["code"] == "invalid_request");
}

TEST_CASE("bench reports a table and a JSON report") {
  testing::TempDir dir("bench");
  const auto m = testing::make_toy(dir, 42, ember::model::toy_config(), "m");

  auto r = run_cli({"bench", m + "/", "--gen-len", "16", "--prompt-len", "32"});
  REQUIRE(r.code == 0);
  INFO(r.out);
  CHECK(r.out.rfind("model  gpu (tok/s)  cpu_reference (tok/s)  retained\n", 0) == 0);
  CHECK(std::regex_search(r.out, std::regex("\nm  [0-9]+\\.[0-9]  [0-9]+\\.[0-9]  [0-9]+\\.[0-9]%\n")));

  r = run_cli({"bench", m, "--gen-len", "16", "--prompt-len", "32", "--json"});
  REQUIRE(r.code == 0);
  const auto lines = json_lines(r.out);
  REQUIRE(lines.size() == 1);
  const Json& j = lines[0];
  CHECK(j["model_id"] == "m");
  CHECK(j["backend"] == "gpu");
  CHECK(j["baseline_backend"] == "cpu_reference");
  CHECK(j["prompt_tokens"] == 32);
  CHECK(j["gen_tokens"] == 16);
  CHECK(j["decode_runs"].size() == 3);
  CHECK(j["decode_tok_per_s"].get<double>() > 0);
  CHECK(j["prefill_tok_per_s"].get<double>() > 0);
  CHECK(j["retained_pct"].get<double>() ==
        doctest::Approx(100.0 * j["decode_tok_per_s"].get<double>() / j["baseline_decode_tok_per_s"].get<double>()));

  SUBCASE("baseline from a saved report") {
    const auto saved = dir / "cpu.json";
    REQUIRE(run_cli({"bench", m, "--backend", "cpu", "--gen-len", "16", "--out", saved.string(), "--json"}).code ==
            0);
    const Json cpu = Json::parse(testing::slurp(saved));
    CHECK(cpu["backend"] == "cpu_reference");
    CHECK_FALSE(cpu.contains("retained_pct"));
    r = run_cli({"bench", m, "--gen-len", "16", "--baseline", saved.string(), "--json"});
    REQUIRE(r.code == 0);
    const Json g = json_lines(r.out).at(0);
    CHECK(g["baseline_decode_tok_per_s"] == cpu["decode_tok_per_s"]);
  }
  SUBCASE("ENGINE_BACKEND picks the backend; an explicit flag wins") {
    r = run_cli({"bench", m, "--gen-len", "8", "--json"}, "", {"ENGINE_BACKEND=cpu"});
    REQUIRE(r.code == 0);
    CHECK(json_lines(r.out).at(0)["backend"] == "cpu_reference");
    r = run_cli({"bench", m, "--gen-len", "8", "--backend", "gpu", "--baseline", "none", "--json"}, "",
                {"ENGINE_BACKEND=cpu"});
    REQUIRE(r.code == 0);
    CHECK(json_lines(r.out).at(0)["backend"] == "gpu");
  }
}

TEST_CASE("load errors exit nonzero with one parsable line") {
  testing::TempDir dir("cli_err");
  auto r = run_cli({"bench", (dir / "missing").string()});
  CHECK(r.code == 1);
  CHECK(r.out.empty());
  CHECK(std::regex_match(r.err, std::regex("error: load_failed: [^\n]+\n")));

  r = run_cli({"bench", (dir / "missing").string(), "--json"});
  CHECK(r.code == 1);
  const auto lines = json_lines(r.out);
  REQUIRE(lines.size() == 1);
  CHECK(lines[0]["error"]["code"] == "load_failed");

  r = run_cli({"frobnicate"});
  CHECK(r.code == 1);
  CHECK(std::regex_match(r.err, std::regex("error: invalid_request: [^\n]+\n")));

  r = run_cli({"bench", (dir / "missing").string(), "--backend", "tpu"});
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error: invalid_request: unknown backend", 0) == 0);
}

TEST_CASE("chat at temperature 0 repeats itself") {
  testing::TempDir dir("chat");
  const auto m = testing::make_toy(dir, 42, ember::model::toy_config(), "m");
  const std::string script = "hello there\nand again\n";
  const auto a = run_cli({"chat", m, "--temperature", "0", "--max-tokens", "24", "--json"}, script);
  const auto b = run_cli({"chat", m, "--temperature", "0", "--max-tokens", "24", "--json"}, script);
  const auto c = run_cli({"chat", m, "--temperature", "0", "--max-tokens", "24", "--json", "--backend", "cpu"}, script);
  REQUIRE(a.code == 0);
  const auto la = json_lines(a.out);
  REQUIRE(la.size() == 2);
  CHECK(la[0]["usage"]["completion_tokens"].get<int>() > 0);
  CHECK(a.out == b.out);
  CHECK(a.out == c.out);
  // The second turn carries the first reply, so its prompt is longer.
  CHECK(la[1]["usage"]["prompt_tokens"].get<int>() > la[0]["usage"]["prompt_tokens"].get<int>() + 20);

  SUBCASE("/reset drops the history") {
    const auto r = run_cli({"chat", m, "--temperature", "0", "--max-tokens", "24", "--json"},
                           "hello there\n/reset\nhello there\n/quit\nignored\n");
    REQUIRE(r.code == 0);
    const auto l = json_lines(r.out);
    REQUIRE(l.size() == 3);
    CHECK(l[1]["reset"] == true);
    CHECK(l[0] == l[2]);
    CHECK(l[0] == la[0]);
  }
  SUBCASE("errors are printed and the REPL continues") {
    const auto r = run_cli({"chat", m, "--max-tokens", "4", "--top-p", "0", "--json"}, "one\ntwo\n");
    CHECK(r.code == 0);
    const auto l = json_lines(r.out);
    REQUIRE(l.size() == 2);
    CHECK(l[0]["error"]["code"] == "invalid_request");
    CHECK(l[1]["error"]["code"] == "invalid_request");
  }
  SUBCASE("plain output streams the reply text") {
    const auto r = run_cli({"chat", m, "--temperature", "0", "--max-tokens", "24"}, "hello there\n");
    REQUIRE(r.code == 0);
    CHECK(r.out == la[0]["content"].get<std::string>() + "\n");
  }
}

TEST_CASE("chat with --schema replies with schema-valid JSON") {
  testing::TempDir dir("chat_schema");
  const auto m = testing::make_toy(dir, 42, ember::model::toy_config(), "m");
  const Json schema = Json::parse(R"({"type":"object","properties":{"name":{"type":"string"},"kind":{"enum":["cat","dog"]},
      "n":{"type":"integer"},"ok":{"type":"boolean"}},"required":["name","kind","n","ok"]})");
  std::ofstream(dir / "schema.json") << schema.dump();
  for (int seed = 1; seed <= 5; ++seed) {
    const auto r = run_cli({"chat", m, "--schema", (dir / "schema.json").string(), "--seed", std::to_string(seed),
                            "--max-tokens", "256", "--json"},
                           "describe yourself\n");
    REQUIRE(r.code == 0);
    const auto l = json_lines(r.out);
    REQUIRE(l.size() == 1);
    INFO(l[0].dump());
    REQUIRE(l[0].contains("content"));
    const std::string reply = l[0]["content"];
    CHECK(l[0]["finish_reason"] == "stop");
    CHECK(reference::valid(schema, reply));
  }
  const auto bad = run_cli({"chat", m, "--schema", (dir / "nope.json").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.rfind("error: invalid_request: ", 0) == 0);
}

TEST_CASE("serve answers /v1/models and stops on SIGINT") {
  testing::TempDir dir("serve");
  const auto m = testing::make_toy(dir, 42, ember::model::toy_config(), "m");
  testing::Child server({"serve", "--model", m, "--port", "0", "--json"});
  const std::string line = server.first_line(30);
  REQUIRE(Json::accept(line));
  const Json ready = Json::parse(line);
  CHECK(ready["model"] == "m");
  const int port = ready["listening"]["port"];
  REQUIRE(port > 0);

  httplib::Client client("127.0.0.1", port);
  auto res = client.Get("/v1/models");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(Json::parse(res->body) == Json::parse(R"({"data":[{"id":"m"}]})"));

  res = client.Post("/v1/chat/completions",
                    R"({"model":"m","messages":[{"role":"user","content":"hi"}],"max_tokens":4,"temperature":0})",
                    "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(Json::parse(res->body)["choices"][0]["message"]["role"] == "assistant");

  server.signal(SIGINT);
  CHECK(server.wait() == 0);
}
