#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "bisenet/bench.hpp"
#include "fixtures.hpp"

using namespace bisenet;

TEST_SUITE("bench") {
  TEST_CASE("summary statistics") {
    const auto t = summarize({5.0, 1.0, 3.0, 2.0, 4.0});
    CHECK(t.mean_ms == 3.0);
    CHECK(t.median_ms == 3.0);
    CHECK(t.p95_ms == 5.0);
    CHECK(t.fps == doctest::Approx(1000.0 / 3.0));
    std::vector<double> s;
    for (int i = 1; i <= 20; ++i) s.push_back(i);
    const auto u = summarize(s);
    CHECK(u.p95_ms == 19.0);
    CHECK(u.median_ms == 10.5);
    CHECK(std::abs(u.fps * u.mean_ms - 1000.0) <= 1e-9 * 1000.0);
  }

  TEST_CASE("report for padded resolutions") {
    EngineConfig cfg;
    cfg.model = fixture::tiny_config(4);
    cfg.bench.resolutions = {{64, 40}, {128, 96}};
    cfg.bench.warmup_iters = 1;
    cfg.bench.timed_iters = 10;
    const auto report = run_bench(cfg);
    REQUIRE(report.resolutions.size() == 2);
    const auto& r0 = report.resolutions[0];
    CHECK(r0.nominal == Resolution{64, 40});
    CHECK(r0.padded == Resolution{64, 64});
    CHECK(r0.samples_ms.size() == 10);
    CHECK(r0.timed_allocations == 0);
    CHECK(report.config_hash == hex64(config_hash(cfg)));
    CHECK(report.environment.find("fp32") != std::string::npos);
    const auto j = nlohmann::json::parse(report.to_json());
    CHECK(j.at("config_hash") == report.config_hash);
    const auto& e = j.at("resolutions").at(1);
    for (const char* k : {"width", "height", "padded_width", "padded_height", "mean_ms", "median_ms", "p95_ms", "fps"})
      CHECK(e.contains(k));
    CHECK(e.at("padded_height").get<int>() == 96);
    for (const auto& r : report.resolutions) CHECK(std::abs(r.fps * r.mean_ms - 1000.0) <= 1e-9 * 1000.0);
  }

  TEST_CASE("end-to-end timing stays allocation free") {
    EngineConfig cfg;
    cfg.model = fixture::tiny_config(4);
    cfg.bench.resolutions = {{64, 64}};
    cfg.bench.warmup_iters = 1;
    cfg.bench.end_to_end = true;
    const auto report = run_bench(cfg);
    CHECK(report.resolutions[0].timed_allocations == 0);
  }

  TEST_CASE("allocation counter is live in test binaries") {
    const auto a = allocation_count();
    REQUIRE(a.has_value());
    static int* volatile sink = nullptr;
    sink = new int(3);
    const auto b = allocation_count();
    delete sink;
    CHECK(*b > *a);
  }
}
