#include "bisenet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "bisenet/bisenet.hpp"

extern "C" std::uint64_t bisenet_alloc_count() __attribute__((weak));

namespace bisenet {

std::optional<std::uint64_t> allocation_count() {
  if (bisenet_alloc_count == nullptr) return std::nullopt;
  return bisenet_alloc_count();
}

ResolutionTiming summarize(const std::vector<double>& samples_ms) {
  if (samples_ms.empty()) fail(ErrorKind::kArgument, "no timing samples");
  ResolutionTiming t;
  t.samples_ms = samples_ms;
  std::vector<double> s = samples_ms;
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  t.mean_ms = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(n);
  t.median_ms = n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  t.p95_ms = s[std::max<std::size_t>(rank, 1) - 1];
  t.fps = 1000.0 / t.mean_ms;
  return t;
}

std::string environment_descriptor() {
  std::string env;
#if defined(__clang__)
  env += "clang " + std::to_string(__clang_major__) + "." + std::to_string(__clang_minor__);
#elif defined(__GNUC__)
  env += "gcc " + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__);
#endif
#if defined(__x86_64__)
  env += "; x86_64";
#elif defined(__aarch64__)
  env += "; aarch64";
#endif
#if defined(__AVX512F__)
  env += "; avx512";
#elif defined(__AVX2__)
  env += "; avx2";
#endif
  env += "; 1 thread; fp32";
  env += allocation_count() ? "; alloc hook" : "; no alloc hook";
  return env;
}

BenchReport run_bench(const EngineConfig& cfg, const ParamStore* weights) {
  cfg.validate();
  Model model(cfg.model);
  ParamStore store = weights ? weights->cast<float>() : init_params<float>(model.graph(), cfg.seed);

  BenchReport report;
  report.config_hash = hex64(config_hash(cfg));
  report.environment = environment_descriptor();

  for (const auto& nominal : cfg.bench.resolutions) {
    const Resolution pad = padded(nominal, 32);
    Tensor x(Shape{cfg.bench.batch, cfg.model.backbone.input_channels, pad.height, pad.width});
    Rng rng = Rng::derive(cfg.seed, static_cast<std::uint64_t>(pad.width * 100003 + pad.height));
    for (auto& v : x.data()) v = static_cast<float>(rng.uniform() * 255.0 - 127.5);

    Tensor upsampled;
    LabelMap pred;
    const auto once = [&] {
      const Tensor& logits = model.infer(store, x);
      if (cfg.bench.end_to_end) predict_full_res_into(logits, upsampled, pred);
    };
    for (std::int64_t i = 0; i < cfg.bench.warmup_iters; ++i) once();

    std::vector<double> samples(static_cast<std::size_t>(cfg.bench.timed_iters));
    const auto before = allocation_count();
    for (auto& ms : samples) {
      const auto t0 = std::chrono::steady_clock::now();
      once();
      const auto t1 = std::chrono::steady_clock::now();
      ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    const auto after = allocation_count();

    ResolutionTiming t = summarize(samples);
    t.nominal = nominal;
    t.padded = pad;
    if (before && after) {
      // the samples vector is preallocated; steady_clock does not allocate
      t.timed_allocations = static_cast<std::int64_t>(*after - *before);
      if (cfg.strict_determinism && t.timed_allocations != 0)
        fail(ErrorKind::kConsistency, std::to_string(t.timed_allocations) + " allocations in the timed region at " +
                                          std::to_string(pad.width) + "x" + std::to_string(pad.height));
    }
    report.resolutions.push_back(std::move(t));
  }
  return report;
}

std::string BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["config_hash"] = config_hash;
  j["environment"] = environment;
  j["resolutions"] = nlohmann::ordered_json::array();
  for (const auto& r : resolutions) {
    nlohmann::ordered_json e;
    e["width"] = r.nominal.width;
    e["height"] = r.nominal.height;
    e["padded_width"] = r.padded.width;
    e["padded_height"] = r.padded.height;
    e["mean_ms"] = r.mean_ms;
    e["median_ms"] = r.median_ms;
    e["p95_ms"] = r.p95_ms;
    e["fps"] = r.fps;
    j["resolutions"].push_back(std::move(e));
  }
  return j.dump(2);
}

}  // namespace bisenet
