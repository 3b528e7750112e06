// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ember/model/config.h"

namespace ember::model {

enum class RecordDtype { f32, f16, q4g32_codes, f16_scales };

std::string_view dtype_name(RecordDtype d);
// Bytes a record of this dtype and shape must occupy.
uint64_t record_nbytes(RecordDtype d, const std::vector<uint32_t>& shape);

struct WeightRecord {
  std::string name;
  std::vector<uint32_t> shape;
  RecordDtype dtype = RecordDtype::f32;
  std::string shard_file;
  uint64_t byte_offset = 0;
  uint64_t nbytes = 0;
};

struct ShardInfo {
  std::string file;
  uint64_t nbytes = 0;
  uint32_t crc32 = 0;
};

struct WeightManifest {
  std::vector<ShardInfo> shards;
  std::vector<WeightRecord> records;

  const WeightRecord* find(std::string_view name) const;
  uint64_t total_bytes() const;

  std::string to_json() const;
  static WeightManifest from_json(std::string_view text);

  // Shapes, sizes, shard bounds and overlaps; then every parameter `cfg`
  // requires (MissingRecord names the first one absent).
  void validate(const ModelConfig& cfg) const;
};

// A parameter the model needs and how it is stored.
struct ParamSpec {
  std::string name;
  std::vector<uint32_t> shape;  // logical [out, in] for linears, else as stored
  bool linear = false;
};

// Every parameter of a Llama-style model in load order.
std::vector<ParamSpec> required_params(const ModelConfig& cfg);

// Records a parameter expands to: name.codes + name.scales for quantized
// linears, a single f32 record otherwise.
std::vector<std::pair<std::string, RecordDtype>> record_names(const ParamSpec& p, Quantization q);

uint32_t crc32_of(std::string_view bytes);

// Where artifact files come from: a directory or an http:// base URL.
class ArtifactSource {
 public:
  virtual ~ArtifactSource() = default;
  virtual std::string fetch(const std::string& file) const = 0;
  virtual std::string describe() const = 0;
};

std::unique_ptr<ArtifactSource> open_source(const std::string& location);

// Writes config.json, tokenizer.json, manifest.json and shard_<i>.bin. Records
// are packed in order into shards of at most `shard_limit` bytes (a record
// larger than the limit gets a shard to itself).
struct ArtifactWriter {
  explicit ArtifactWriter(std::filesystem::path dir, uint64_t shard_limit = 128 * 1024);

  void add(const std::string& name, RecordDtype dtype, std::vector<uint32_t> shape, std::string bytes);
  void finish(const ModelConfig& cfg, const std::string& tokenizer_json);

  const WeightManifest& manifest() const { return manifest_; }

 private:
  void close_shard();

  std::filesystem::path dir_;
  uint64_t shard_limit_;
  WeightManifest manifest_;
  std::string current_;
};

}  // namespace ember::model
