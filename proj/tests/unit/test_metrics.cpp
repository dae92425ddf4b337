#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bisenet/metrics.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace bisenet;

namespace {

LabelMap row(std::vector<std::int32_t> v) {
  LabelMap m(1, 1, static_cast<std::int64_t>(v.size()));
  m.data = std::move(v);
  return m;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("worked example") {
    ConfusionMatrix cm(2);
    cm.add(row({0, 0, 1, 1}), row({0, 1, 1, 1}));
    const auto r = miou(cm);
    CHECK(*r.iou[0] == 0.5);
    CHECK(*r.iou[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(*r.mean_iou == doctest::Approx(7.0 / 12.0).epsilon(1e-15));
    CHECK(*r.pixel_accuracy == 0.75);
  }

  TEST_CASE("complement prediction scores zero") {
    ConfusionMatrix cm(2);
    cm.add(row({0, 1, 0, 1}), row({1, 0, 1, 0}));
    CHECK(*miou(cm).mean_iou == 0.0);
  }

  TEST_CASE("absent classes are excluded rather than zero") {
    ConfusionMatrix cm(4);
    cm.add(row({0, 0, 1}), row({0, 0, 1}));
    const auto r = miou(cm);
    CHECK_FALSE(r.iou[2].has_value());
    CHECK_FALSE(r.iou[3].has_value());
    CHECK(*r.mean_iou == 1.0);
    CHECK_FALSE(miou(ConfusionMatrix(3)).mean_iou.has_value());
    CHECK_FALSE(miou(ConfusionMatrix(3)).pixel_accuracy.has_value());
  }

  TEST_CASE("matches the set oracle exactly on random maps") {
    Rng rng(17);
    for (int t = 0; t < 20; ++t) {
      const std::int64_t c = 2 + static_cast<std::int64_t>(rng.below(5));
      auto truth = fixture::random_labels(1, 16, 16, c, rng);
      auto pred = fixture::random_labels(1, 16, 16, c, rng);
      for (int k = 0; k < 10; ++k) truth.data[rng.below(256)] = kIgnoreLabel;
      ConfusionMatrix cm(c);
      cm.add(truth, pred);
      const auto r = miou(cm);
      const auto o = oracle::set_miou(truth, pred, c);
      for (std::int64_t k = 0; k < c; ++k) {
        CHECK(r.iou[static_cast<std::size_t>(k)].has_value() == !std::isnan(o.iou[static_cast<std::size_t>(k)]));
        if (r.iou[static_cast<std::size_t>(k)]) CHECK(*r.iou[static_cast<std::size_t>(k)] == o.iou[static_cast<std::size_t>(k)]);
      }
      CHECK(*r.mean_iou == o.mean);
    }
  }

  TEST_CASE("accumulation is order independent and skips ignored pixels") {
    Rng rng(5);
    std::vector<std::pair<LabelMap, LabelMap>> parts;
    for (int i = 0; i < 6; ++i)
      parts.emplace_back(fixture::random_labels(1, 4, 4, 3, rng), fixture::random_labels(1, 4, 4, 3, rng));
    ConfusionMatrix a(3), b(3);
    for (const auto& [t, p] : parts) a.add(t, p);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) b.add(it->first, it->second);
    CHECK(a == b);
    auto t = parts[0].first, p = parts[0].second;
    ConfusionMatrix c(3);
    c.add(t, p);
    t.data.push_back(kIgnoreLabel);
    p.data.push_back(2);
    t.w += 1;
    p.w += 1;
    ConfusionMatrix d(3);
    d.add(t, p);
    CHECK(c == d);
    CHECK(c.total() == 16);
  }

  TEST_CASE("out-of-range labels are data errors") {
    ConfusionMatrix cm(3);
    try {
      cm.add(row({0, 3}), row({0, 1}));
      FAIL("expected a data error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kData);
    }
    CHECK_THROWS_AS(cm.add(row({0, 1}), row({0, -1})), Error);
    CHECK_THROWS_AS(cm.add(row({0, 1}), row({0})), Error);
  }
}
