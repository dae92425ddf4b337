#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bisenet/ops.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace bisenet;
using oracle::T64;

TEST_SUITE("loss") {
  TEST_CASE("uniform logits cost ln C per pixel") {
    for (std::int64_t c : {2, 11, 19, 91}) {
      Tensor logits(Shape{2, c, 3, 3}, 0.25f);
      Rng rng(static_cast<std::uint64_t>(c));
      const auto labels = fixture::random_labels(2, 3, 3, c, rng);
      const auto r = softmax_ce_loss(logits, labels);
      CHECK(std::abs(r.loss - std::log(static_cast<double>(c))) < 1e-6);
      CHECK(r.counted == 18);
    }
  }

  TEST_CASE("cross-entropy matches the direct formula") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      T64 logits = oracle::random_tensor(Shape{2, 4, 3, 5}, rng, 5.0);
      auto labels = fixture::random_labels(2, 3, 5, 4, rng);
      labels.data[0] = kIgnoreLabel;
      CHECK(softmax_ce_loss(logits, labels).loss == doctest::Approx(oracle::cross_entropy(logits, labels)).epsilon(1e-12));
      const auto f = softmax_ce_loss(logits.cast<float>(), labels).loss;
      CHECK(std::abs(f - oracle::cross_entropy(logits, labels)) < 1e-5);
    }
  }

  TEST_CASE("permuting classes and labels together leaves the loss unchanged") {
    Rng rng(8);
    T64 logits = oracle::random_tensor(Shape{1, 5, 4, 4}, rng, 2.0);
    const auto labels = fixture::random_labels(1, 4, 4, 5, rng);
    const int perm[5] = {3, 0, 4, 1, 2};
    T64 pl(logits.shape());
    LabelMap plab = labels;
    for (std::int64_t c = 0; c < 5; ++c)
      for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x = 0; x < 4; ++x) pl.at(0, perm[c], y, x) = logits.at(0, c, y, x);
    for (auto& v : plab.data) v = perm[v];
    CHECK(softmax_ce_loss(pl, plab).loss == doctest::Approx(softmax_ce_loss(logits, labels).loss).epsilon(1e-14));
  }

  TEST_CASE("a large margin drives the loss to zero") {
    Tensor logits(Shape{1, 3, 2, 2}, 0.0f);
    LabelMap labels(1, 2, 2, 1);
    for (std::int64_t i = 0; i < 4; ++i) logits[4 + i] = 100.0f;
    CHECK(softmax_ce_loss(logits, labels).loss < 1e-6);
  }

  TEST_CASE("ignored pixels contribute neither loss nor gradient") {
    Rng rng(2);
    T64 logits = oracle::random_tensor(Shape{1, 3, 2, 2}, rng);
    LabelMap labels(1, 2, 2, kIgnoreLabel);
    auto r = softmax_ce_loss(logits, labels);
    CHECK(r.all_ignored);
    CHECK(r.loss == 0.0);
    for (double g : r.grad.data()) CHECK(g == 0.0);
    labels.data[1] = 2;
    r = softmax_ce_loss(logits, labels);
    CHECK(r.counted == 1);
    for (std::int64_t c = 0; c < 3; ++c) CHECK(r.grad.at(0, c, 0, 0) == 0.0);
    const auto px = pixel_cross_entropy(logits, labels);
    CHECK(std::isnan(px[0]));
    CHECK(px[1] == doctest::Approx(r.loss));
  }

  TEST_CASE("labels outside the class range are data errors") {
    Tensor logits(Shape{1, 3, 1, 2});
    LabelMap labels(1, 1, 2, 0);
    labels.data[1] = 3;
    try {
      (void)softmax_ce_loss(logits, labels);
      FAIL("expected a data error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kData);
    }
  }

  TEST_CASE("bootstrap keeps the hardest pixels") {
    // Two-class pixels whose losses are exactly 0.1 and 2.0: margin d gives log(1 + e^-d).
    auto margin = [](double l) { return -std::log(std::exp(l) - 1.0); };
    T64 logits(Shape{1, 2, 1, 2});
    logits.at(0, 1, 0, 0) = margin(0.1);
    logits.at(0, 1, 0, 1) = margin(2.0);
    LabelMap labels(1, 1, 2, 1);
    const auto px = pixel_cross_entropy(logits, labels);
    CHECK(px[0] == doctest::Approx(0.1));
    CHECK(px[1] == doctest::Approx(2.0));
    const auto r = bootstrap_ce_loss(logits, labels, 0.5, 1);
    CHECK(r.loss == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.counted == 1);
    CHECK(r.grad.at(0, 0, 0, 0) == 0.0);
    CHECK(r.grad.at(0, 0, 0, 1) != 0.0);
  }

  TEST_CASE("bootstrap with keep fraction 1 is plain cross-entropy bitwise") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed + 40);
      Tensor logits = oracle::random_tensor(Shape{2, 4, 6, 6}, rng, 3.0).cast<float>();
      auto labels = fixture::random_labels(2, 6, 6, 4, rng);
      labels.data[5] = kIgnoreLabel;
      const auto a = bootstrap_ce_loss(logits, labels, 1.0, 0);
      const auto b = softmax_ce_loss(logits, labels);
      CHECK(a.loss == b.loss);
      CHECK(a.grad == b.grad);
      CHECK(a.counted == b.counted);
    }
  }

  TEST_CASE("bootstrap keep count") {
    CHECK(bootstrap_keep_count(1600, 1.0 / 16, 0) == 100);
    CHECK(bootstrap_keep_count(1601, 1.0 / 16, 0) == 101);
    CHECK(bootstrap_keep_count(1600, 1.0 / 16, 256) == 256);
    CHECK(bootstrap_keep_count(100, 1.0 / 16, 256) == 100);
    CHECK_THROWS_AS(bootstrap_keep_count(10, 0.0, 1), Error);
  }

  TEST_CASE("label downsampling picks centre samples") {
    LabelMap l(1, 4, 4);
    for (std::int64_t y = 0; y < 4; ++y)
      for (std::int64_t x = 0; x < 4; ++x) l.at(0, y, x) = static_cast<std::int32_t>(y * 4 + x);
    const auto d = downsample_labels(l, 2);
    CHECK(d.h == 2);
    CHECK(d.at(0, 0, 0) == 5);
    CHECK(d.at(0, 1, 1) == 15);
    CHECK_THROWS_AS(downsample_labels(LabelMap(1, 5, 4), 2), Error);
  }
}
