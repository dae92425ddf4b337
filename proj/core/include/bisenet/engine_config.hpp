#pragma once

// Engine configuration: model, training, augmentation and benchmark
// settings. Text form is line-oriented "key = value" with dotted keys and
// optional "[section]" headers that prefix the keys below them; a JSON
// object with the same nesting is accepted as well.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bisenet/bisenet.hpp"
#include "bisenet/data.hpp"
#include "bisenet/optim.hpp"

namespace bisenet {

struct Resolution {
  std::int64_t width = 0;
  std::int64_t height = 0;
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

// Next multiple of `m` at or above v.
std::int64_t round_up(std::int64_t v, std::int64_t m);
Resolution padded(const Resolution& r, std::int64_t multiple = 32);

enum class DataSource { kManifest, kSynthetic };
std::string_view to_string(DataSource s);

struct TrainConfig {
  DataSource source = DataSource::kSynthetic;
  std::string manifest;            // source = manifest
  std::int64_t synth_count = 8;    // source = synthetic
  std::int64_t synth_height = 64;
  std::int64_t synth_width = 64;
  std::int64_t batch_size = 4;
  bool augment = true;
  std::string log_path = "loss.csv";
  std::string checkpoint_path = "model.bsnt";
  std::int64_t checkpoint_every = 0;  // 0: only at the end
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct BenchConfig {
  std::vector<Resolution> resolutions{{640, 360}, {1280, 720}, {1920, 1080}};  // nominal; padded to 32
  std::int64_t warmup_iters = 3;
  std::int64_t timed_iters = 10;
  std::int64_t batch = 1;
  bool end_to_end = false;  // include x8 upsample + argmax in the timed region
  friend bool operator==(const BenchConfig&, const BenchConfig&) = default;
};

struct EngineConfig {
  BiSeNetConfig model;
  SgdConfig sgd;
  AugmentConfig augment;
  TrainConfig train;
  BenchConfig bench;
  std::uint64_t seed = 0;
  bool strict_determinism = true;

  // Throws kConfig naming the offending key.
  void validate() const;
  friend bool operator==(const EngineConfig&, const EngineConfig&) = default;
};

// Parses text or JSON (detected by a leading '{'). Unknown keys, bad values
// and duplicate keys throw kConfig with the line number. Missing keys keep
// their defaults. The result is validated.
EngineConfig parse_config(const std::string& text);
EngineConfig load_config(const std::string& path);

// Canonical text: every key, fixed order, round-trippable numbers.
std::string serialize_config(const EngineConfig& cfg);

// FNV-1a 64 over the canonical model section plus the seed; identifies the
// weights a checkpoint belongs to.
std::uint64_t config_hash(const EngineConfig& cfg);
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace bisenet
