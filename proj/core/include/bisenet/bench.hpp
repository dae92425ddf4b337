#pragma once

// Forward-latency harness: fixed random input per resolution, untimed
// warmup, then monotonic-clock timing of the forward pass only.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bisenet/engine_config.hpp"
#include "bisenet/param_store.hpp"

namespace bisenet {

struct ResolutionTiming {
  Resolution nominal;
  Resolution padded;
  std::vector<double> samples_ms;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;  // nearest rank
  double fps = 0.0;     // 1000 / mean_ms
  std::int64_t timed_allocations = -1;  // -1 without an allocation hook
};

struct BenchReport {
  std::string config_hash;
  std::string environment;
  std::vector<ResolutionTiming> resolutions;

  std::string to_json() const;
};

// Summary statistics of one timing series.
ResolutionTiming summarize(const std::vector<double>& samples_ms);

// Process-wide allocation counter when the executable links the hook.
std::optional<std::uint64_t> allocation_count();

std::string environment_descriptor();

// Uses `weights` when given, otherwise parameters initialised from cfg.seed.
// With cfg.strict_determinism and an allocation hook present, any
// allocation inside the timed region throws kConsistency.
BenchReport run_bench(const EngineConfig& cfg, const ParamStore* weights = nullptr);

}  // namespace bisenet
