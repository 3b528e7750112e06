// SPDX-License-Identifier: Apache-2.0
#include "ember/model/artifact.h"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ember/error.h"
#include "ember/kernels/params.h"
#include "httplib.h"
#include "json.hpp"

namespace ember::model {

namespace {

const std::map<std::string, RecordDtype, std::less<>>& dtype_table() {
  static const std::map<std::string, RecordDtype, std::less<>> t = {
      {"f32", RecordDtype::f32},
      {"f16", RecordDtype::f16},
      {"q4g32_codes", RecordDtype::q4g32_codes},
      {"f16_scales", RecordDtype::f16_scales},
  };
  return t;
}

[[noreturn]] void bad_manifest(const std::string& what) {
  throw Error(Errc::invalid_artifact, "manifest: " + what);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::filesystem::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io_error, "cannot write " + p.string());
}

class DirectorySource : public ArtifactSource {
 public:
  explicit DirectorySource(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::string fetch(const std::string& file) const override { return read_file(dir_ / file); }
  std::string describe() const override { return dir_.string(); }

 private:
  std::filesystem::path dir_;
};

// Plain GETs against static hosting; no range requests.
class HttpSource : public ArtifactSource {
 public:
  explicit HttpSource(const std::string& url) : url_(url) {
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end + 3);
    origin_ = url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  std::string fetch(const std::string& file) const override {
    httplib::Client client(origin_);
    client.set_connection_timeout(10);
    client.set_read_timeout(60);
    const auto res = client.Get(prefix_ + "/" + file);
    if (!res) {
      throw Error(Errc::io_error, "GET " + url_ + "/" + file + ": " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw Error(Errc::io_error, "GET " + url_ + "/" + file + ": HTTP " + std::to_string(res->status));
    }
    return res->body;
  }
  std::string describe() const override { return url_; }

 private:
  std::string url_;
  std::string origin_;
  std::string prefix_;
};

}  // namespace

std::string_view dtype_name(RecordDtype d) {
  for (const auto& [name, v] : dtype_table()) {
    if (v == d) return name;
  }
  return "?";
}

uint64_t record_nbytes(RecordDtype d, const std::vector<uint32_t>& shape) {
  uint64_t n = 1;
  for (uint32_t s : shape) n *= s;
  switch (d) {
    case RecordDtype::f32: return n * 4;
    case RecordDtype::f16:
    case RecordDtype::f16_scales: return n * 2;
    case RecordDtype::q4g32_codes: return (n + 1) / 2;
  }
  return 0;
}

const WeightRecord* WeightManifest::find(std::string_view name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

uint64_t WeightManifest::total_bytes() const {
  uint64_t n = 0;
  for (const auto& s : shards) n += s.nbytes;
  return n;
}

std::string WeightManifest::to_json() const {
  nlohmann::ordered_json j;
  j["shards"] = nlohmann::ordered_json::array();
  for (const auto& s : shards) {
    j["shards"].push_back({{"file", s.file}, {"nbytes", s.nbytes}, {"crc32", s.crc32}});
  }
  j["records"] = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    j["records"].push_back({{"name", r.name},
                            {"shape", r.shape},
                            {"dtype", dtype_name(r.dtype)},
                            {"shard_file", r.shard_file},
                            {"byte_offset", r.byte_offset},
                            {"nbytes", r.nbytes}});
  }
  return j.dump(1) + "\n";
}

WeightManifest WeightManifest::from_json(std::string_view text) {
  WeightManifest m;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& s : j.at("shards")) {
      m.shards.push_back({s.at("file").get<std::string>(), s.at("nbytes").get<uint64_t>(),
                          s.at("crc32").get<uint32_t>()});
    }
    for (const auto& r : j.at("records")) {
      WeightRecord rec;
      rec.name = r.at("name").get<std::string>();
      rec.shape = r.at("shape").get<std::vector<uint32_t>>();
      const auto dtype = r.at("dtype").get<std::string>();
      auto it = dtype_table().find(dtype);
      if (it == dtype_table().end()) bad_manifest("unknown dtype '" + dtype + "' for " + rec.name);
      rec.dtype = it->second;
      rec.shard_file = r.at("shard_file").get<std::string>();
      rec.byte_offset = r.at("byte_offset").get<uint64_t>();
      rec.nbytes = r.at("nbytes").get<uint64_t>();
      m.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    bad_manifest(e.what());
  }
  return m;
}

void WeightManifest::validate(const ModelConfig& cfg) const {
  std::map<std::string, const ShardInfo*> shard_by_file;
  for (const auto& s : shards) {
    if (s.file.find('/') != std::string::npos || s.file.find("..") != std::string::npos) {
      bad_manifest("shard file '" + s.file + "' must be a plain file name");
    }
    if (!shard_by_file.emplace(s.file, &s).second) bad_manifest("duplicate shard " + s.file);
  }
  std::set<std::string> names;
  std::map<std::string, std::vector<std::pair<uint64_t, uint64_t>>> extents;
  for (const auto& r : records) {
    if (!names.insert(r.name).second) bad_manifest("record '" + r.name + "' appears twice");
    auto shard = shard_by_file.find(r.shard_file);
    if (shard == shard_by_file.end()) bad_manifest(r.name + " refers to unknown shard " + r.shard_file);
    if (r.nbytes != record_nbytes(r.dtype, r.shape)) {
      bad_manifest(r.name + ": nbytes does not match shape and dtype");
    }
    if (r.byte_offset + r.nbytes > shard->second->nbytes || r.byte_offset + r.nbytes < r.byte_offset) {
      bad_manifest(r.name + " extends past the end of " + r.shard_file);
    }
    extents[r.shard_file].emplace_back(r.byte_offset, r.byte_offset + r.nbytes);
  }
  for (auto& [file, ext] : extents) {
    std::sort(ext.begin(), ext.end());
    for (size_t i = 1; i < ext.size(); ++i) {
      if (ext[i].first < ext[i - 1].second) bad_manifest("overlapping records in " + file);
    }
  }

  for (const auto& p : required_params(cfg)) {
    for (const auto& [name, dtype] : record_names(p, cfg.quantization)) {
      const WeightRecord* r = find(name);
      if (r == nullptr) throw Error(Errc::missing_record, "manifest has no record '" + name + "'");
      if (r->dtype != dtype) {
        bad_manifest(name + " should be " + std::string(dtype_name(dtype)));
      }
      std::vector<uint32_t> want = p.shape;
      if (p.linear && cfg.quantization == Quantization::f32) {
        want = {p.shape[1], p.shape[0]};  // stored input-major for gemm
      } else if (dtype == RecordDtype::f16_scales) {
        want = {p.shape[0], p.shape[1] / kernels::kQuantGroup};
      }
      if (r->shape != want) bad_manifest(name + " has the wrong shape");
    }
  }
}

std::vector<ParamSpec> required_params(const ModelConfig& cfg) {
  const uint32_t h = cfg.hidden_size, q = cfg.num_heads * cfg.head_dim,
                 kv = cfg.num_kv_heads * cfg.head_dim, f = cfg.ffn_hidden;
  std::vector<ParamSpec> out;
  out.push_back({"model.embed_tokens.weight", {cfg.vocab_size, h}, false});
  for (uint32_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "model.layers." + std::to_string(l) + ".";
    out.push_back({p + "input_layernorm.weight", {h}, false});
    out.push_back({p + "self_attn.q_proj.weight", {q, h}, true});
    out.push_back({p + "self_attn.k_proj.weight", {kv, h}, true});
    out.push_back({p + "self_attn.v_proj.weight", {kv, h}, true});
    out.push_back({p + "self_attn.o_proj.weight", {h, q}, true});
    out.push_back({p + "post_attention_layernorm.weight", {h}, false});
    out.push_back({p + "mlp.gate_proj.weight", {f, h}, true});
    out.push_back({p + "mlp.up_proj.weight", {f, h}, true});
    out.push_back({p + "mlp.down_proj.weight", {h, f}, true});
  }
  out.push_back({"model.norm.weight", {h}, false});
  // Kept f32 and stored [hidden, vocab] so the final projection is one gemm.
  out.push_back({"lm_head.weight", {h, cfg.vocab_size}, false});
  return out;
}

std::vector<std::pair<std::string, RecordDtype>> record_names(const ParamSpec& p, Quantization q) {
  if (p.linear && q == Quantization::q4g32) {
    return {{p.name + ".codes", RecordDtype::q4g32_codes}, {p.name + ".scales", RecordDtype::f16_scales}};
  }
  return {{p.name, RecordDtype::f32}};
}

uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  size_t done = 0;
  while (done < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + done), n);
    done += n;
  }
  return static_cast<uint32_t>(crc);
}

std::unique_ptr<ArtifactSource> open_source(const std::string& location) {
  if (location.rfind("http://", 0) == 0) return std::make_unique<HttpSource>(location);
  if (location.find("://") != std::string::npos) {
    throw Error(Errc::io_error, "unsupported artifact URL scheme in '" + location + "' (use http://)");
  }
  if (!std::filesystem::is_directory(location)) {
    throw Error(Errc::io_error, "artifact directory '" + location + "' does not exist");
  }
  return std::make_unique<DirectorySource>(location);
}

ArtifactWriter::ArtifactWriter(std::filesystem::path dir, uint64_t shard_limit)
    : dir_(std::move(dir)), shard_limit_(shard_limit) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error(Errc::io_error, "cannot create " + dir_.string() + ": " + ec.message());
}

void ArtifactWriter::add(const std::string& name, RecordDtype dtype, std::vector<uint32_t> shape,
                         std::string bytes) {
  if (bytes.size() != record_nbytes(dtype, shape)) {
    throw Error(Errc::internal, name + ": payload size does not match shape");
  }
  const uint64_t aligned = (current_.size() + 3) / 4 * 4;
  if (!current_.empty() && aligned + bytes.size() > shard_limit_) close_shard();
  current_.resize((current_.size() + 3) / 4 * 4, '\0');
  WeightRecord r;
  r.name = name;
  r.shape = std::move(shape);
  r.dtype = dtype;
  r.shard_file = "shard_" + std::to_string(manifest_.shards.size()) + ".bin";
  r.byte_offset = current_.size();
  r.nbytes = bytes.size();
  current_ += bytes;
  manifest_.records.push_back(std::move(r));
}

void ArtifactWriter::close_shard() {
  ShardInfo s;
  s.file = "shard_" + std::to_string(manifest_.shards.size()) + ".bin";
  s.nbytes = current_.size();
  s.crc32 = crc32_of(current_);
  write_file(dir_ / s.file, current_);
  manifest_.shards.push_back(std::move(s));
  current_.clear();
}

void ArtifactWriter::finish(const ModelConfig& cfg, const std::string& tokenizer_json) {
  if (!current_.empty()) close_shard();
  write_file(dir_ / "config.json", cfg.to_json());
  write_file(dir_ / "tokenizer.json", tokenizer_json + "\n");
  write_file(dir_ / "manifest.json", manifest_.to_json());
}

}  // namespace ember::model
