#include <doctest.h>

#include <cmath>

#include "bisenet/ops.hpp"
#include "oracles.hpp"

using namespace bisenet;
using oracle::T64;

namespace {

T64 rnd(const Shape& s, Rng& rng) { return oracle::random_tensor(s, rng); }

}  // namespace

TEST_SUITE("ops") {
  TEST_CASE("conv on ones counts covered taps") {
    Tensor x(Shape{1, 1, 4, 4}, 1.0f), w(Shape{1, 1, 3, 3}, 1.0f);
    Conv2dParams<float> p{&w, nullptr, 1, 1, 1};
    const auto y = conv2d_forward(x, p);
    CHECK(y.shape() == Shape{1, 1, 4, 4});
    CHECK(y.at(0, 0, 1, 1) == 9.0f);
    CHECK(y.at(0, 0, 2, 2) == 9.0f);
    CHECK(y.at(0, 0, 0, 0) == 4.0f);
    CHECK(y.at(0, 0, 0, 1) == 6.0f);
  }

  TEST_CASE("conv output extent over a parameter grid") {
    for (std::int64_t h = 1; h <= 16; ++h)
      for (int k : {1, 3, 7})
        for (int s : {1, 2})
          for (int p : {0, 1, 3}) {
            const std::int64_t expect = (h + 2 * p - k) / s + 1;
            if (h + 2 * p < k) {
              CHECK_THROWS_AS(conv_output_extent(h, k, s, p), Error);
              continue;
            }
            CHECK(conv_output_extent(h, k, s, p) == expect);
            Tensor x(Shape{1, 1, h, h}, 1.0f), w(Shape{1, 1, k, k}, 1.0f);
            Conv2dParams<float> cp{&w, nullptr, s, p, 1};
            CHECK(conv2d_forward(x, cp).shape() == Shape{1, 1, expect, expect});
          }
  }

  TEST_CASE("conv matches the six-loop oracle") {
    struct Case { std::int64_t ci, co, h, w; int k, s, p, g; bool bias; };
    const Case cases[] = {{3, 5, 7, 6, 3, 1, 1, 1, true}, {4, 6, 9, 9, 3, 2, 1, 2, false},
                          {6, 6, 8, 5, 3, 1, 1, 6, false}, {2, 3, 5, 5, 1, 1, 0, 1, true},
                          {3, 4, 11, 10, 7, 2, 3, 1, false}, {8, 8, 6, 6, 3, 2, 1, 8, true}};
    for (std::uint64_t seed = 0; seed < 5; ++seed)
      for (const auto& c : cases) {
        Rng rng(seed * 31 + 1);
        T64 x = rnd(Shape{2, c.ci, c.h, c.w}, rng);
        T64 w = rnd(Shape{c.co, c.ci / c.g, c.k, c.k}, rng);
        T64 b = rnd(Shape{c.co, 1, 1, 1}, rng);
        const auto ref = oracle::conv(x, w, c.bias ? &b : nullptr, c.s, c.p, c.g);
        Tensor xf = x.cast<float>(), wf = w.cast<float>(), bf = b.cast<float>();
        Conv2dParams<float> pf{&wf, c.bias ? &bf : nullptr, c.s, c.p, c.g};
        CHECK(oracle::max_abs_diff(conv2d_forward(xf, pf), ref) < 1e-5);
        Conv2dParams<double> pd{&w, c.bias ? &b : nullptr, c.s, c.p, c.g};
        CHECK(oracle::max_abs_diff(conv2d_forward(x, pd), ref) < 1e-12);
      }
  }

  TEST_CASE("separable conv is depthwise then pointwise") {
    Rng rng(2);
    T64 x = rnd(Shape{1, 4, 6, 6}, rng), dw = rnd(Shape{4, 1, 3, 3}, rng), pw = rnd(Shape{7, 4, 1, 1}, rng);
    Conv2dParams<double> d{&dw, nullptr, 1, 1, 4}, p{&pw, nullptr, 1, 0, 1};
    const auto ref = oracle::conv(oracle::conv(x, dw, nullptr, 1, 1, 4), pw, nullptr, 1, 0, 1);
    CHECK(oracle::max_abs_diff(separable_conv_forward(x, d, p), ref) < 1e-12);
    CHECK(separable_param_count(4, 7, 3) == 4 * 9 + 4 * 7);
  }

  TEST_CASE("batchnorm matches its definition in both modes") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed + 100);
      T64 x = rnd(Shape{3, 4, 5, 6}, rng);
      T64 g = rnd(Shape{4, 1, 1, 1}, rng), b = rnd(Shape{4, 1, 1, 1}, rng);
      T64 m = rnd(Shape{4, 1, 1, 1}, rng), v(Shape{4, 1, 1, 1});
      for (auto& e : v.data()) e = 0.5 + rng.uniform();
      T64 rm = m, rv = v;
      BatchNormParams<double> pi{&g, &b, &rm, &rv, 1e-5, 0.9, Mode::kInfer};
      CHECK(oracle::max_abs_diff(batchnorm_forward(x, pi), oracle::batchnorm(x, g, b, m, v, false, 1e-5)) < 1e-12);
      BatchNormParams<double> pt{&g, &b, &rm, &rv, 1e-5, 0.9, Mode::kTrain};
      CHECK(oracle::max_abs_diff(batchnorm_forward(x, pt), oracle::batchnorm(x, g, b, m, v, true, 1e-5)) < 1e-12);
      Tensor xf = x.cast<float>(), gf = g.cast<float>(), bf = b.cast<float>();
      Tensor rmf = m.cast<float>(), rvf = v.cast<float>();
      BatchNormParams<float> pf{&gf, &bf, &rmf, &rvf, 1e-5, 0.9, Mode::kTrain};
      CHECK(oracle::max_abs_diff(batchnorm_forward(xf, pf), oracle::batchnorm(x, g, b, m, v, true, 1e-5)) < 1e-5);
    }
  }

  TEST_CASE("train-mode batchnorm standardises and updates running statistics") {
    Tensor x(Shape{1, 1, 1, 2}, std::vector<float>{3.0f, 7.0f});  // mean 5, var 4
    Tensor g(Shape{1, 1, 1, 1}, 1.0f), b(Shape{1, 1, 1, 1}, 0.0f);
    Tensor rm(Shape{1, 1, 1, 1}, 0.0f), rv(Shape{1, 1, 1, 1}, 1.0f);
    BatchNormParams<float> p{&g, &b, &rm, &rv, 0.0, 0.9, Mode::kTrain};
    const auto y = batchnorm_forward(x, p);
    CHECK(y[0] == doctest::Approx(-1.0));
    CHECK(y[1] == doctest::Approx(1.0));
    CHECK(y[0] + y[1] == doctest::Approx(0.0));
    CHECK(rm[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 5.0));
    Tensor none_m, none_v;
    BatchNormParams<float> bad{&g, &b, nullptr, nullptr, 1e-5, 0.9, Mode::kInfer};
    CHECK_THROWS_AS(batchnorm_forward(x, bad), Error);
  }

  TEST_CASE("global pooling and upsampling match their oracles") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed + 7);
      T64 x = rnd(Shape{2, 3, 5, 4}, rng);
      CHECK(oracle::max_abs_diff(global_avg_pool(x), oracle::gap(x)) < 1e-12);
      CHECK(oracle::max_abs_diff(global_avg_pool(x.cast<float>()), oracle::gap(x)) < 1e-5);
      for (int f : {1, 2, 4, 8}) {
        CHECK(oracle::max_abs_diff(bilinear_upsample(x, f), oracle::upsample(x, f)) < 1e-12);
        CHECK(oracle::max_abs_diff(bilinear_upsample(x.cast<float>(), f), oracle::upsample(x, f)) < 1e-5);
      }
    }
  }

  TEST_CASE("upsampling taps follow half-pixel centres") {
    const auto t0 = bilinear_tap(0, 4, 2);  // src -0.25 clamps to 0
    CHECK(t0.i0 == 0);
    CHECK(t0.frac == 0.0);
    const auto t1 = bilinear_tap(1, 4, 2);  // src 0.25
    CHECK(t1.i0 == 0);
    CHECK(t1.i1 == 1);
    CHECK(t1.frac == doctest::Approx(0.25));
    const auto t7 = bilinear_tap(7, 4, 2);  // src 3.25 clamps to 3
    CHECK(t7.i0 == 3);
    CHECK(t7.frac == 0.0);
    Tensor c(Shape{1, 1, 2, 2}, 2.5f);
    const Tensor up = bilinear_upsample(c, 8);
    for (float v : up.data()) CHECK(v == 2.5f);
  }

  TEST_CASE("sigmoid stays strictly inside the unit interval") {
    Tensor x(Shape{1, 1, 1, 5}, std::vector<float>{-100.0f, -50.0f, 0.0f, 50.0f, 100.0f});
    const auto y = sigmoid(x);
    for (float v : y.data()) CHECK((v > 0.0f && v < 1.0f));
    CHECK(y[2] == 0.5f);
    T64 xd = x.cast<double>();
    const T64 yd = sigmoid(xd);
    for (double v : yd.data()) CHECK((v > 0.0 && v < 1.0));
  }

  TEST_CASE("relu clips negatives and passes gradient where positive") {
    Tensor x(Shape{1, 1, 1, 4}, std::vector<float>{-1.0f, 0.0f, 2.0f, -3.0f});
    const auto y = relu(x);
    CHECK(y == Tensor(Shape{1, 1, 1, 4}, std::vector<float>{0.0f, 0.0f, 2.0f, 0.0f}));
    const auto g = relu_backward(x, Tensor(x.shape(), 1.0f));
    CHECK(g == Tensor(Shape{1, 1, 1, 4}, std::vector<float>{0.0f, 0.0f, 1.0f, 0.0f}));
  }

  TEST_CASE("invalid conv arguments are rejected") {
    Tensor x(Shape{1, 3, 4, 4}), w(Shape{4, 2, 3, 3});
    Conv2dParams<float> p{&w, nullptr, 1, 1, 1};
    CHECK_THROWS_AS(conv2d_forward(x, p), Error);
    Tensor w2(Shape{4, 3, 5, 5});
    Conv2dParams<float> q{&w2, nullptr, 1, 0, 1};
    CHECK_THROWS_AS(conv2d_forward(x, q), Error);
  }
}
