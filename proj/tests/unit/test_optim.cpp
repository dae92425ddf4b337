#include <doctest.h>

#include <cmath>

#include "bisenet/optim.hpp"

using namespace bisenet;

namespace {

ParamStore single(bool decay) {
  ParamStore s;
  s.add("w", Tensor(Shape{1, 1, 1, 1}, 1.0f), true, decay, 4);
  return s;
}

std::map<std::string, Tensor> grad(float g) { return {{"w", Tensor(Shape{1, 1, 1, 1}, g)}}; }

}  // namespace

TEST_SUITE("optim") {
  TEST_CASE("plain step") {
    SgdConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.0;
    auto s = single(true);
    sgd_step(s, grad(0.5f), 0.1, cfg);
    CHECK(s.at("w").value[0] == doctest::Approx(0.95).epsilon(1e-7));
  }

  TEST_CASE("weight decay applies only to decay entries") {
    SgdConfig cfg;
    cfg.momentum = 0.0;
    cfg.weight_decay = 1e-4;
    auto s = single(true);
    sgd_step(s, grad(0.5f), 0.1, cfg);
    CHECK(s.at("w").value[0] == doctest::Approx(0.94999).epsilon(1e-7));
    auto t = single(false);
    sgd_step(t, grad(0.5f), 0.1, cfg);
    CHECK(t.at("w").value[0] == doctest::Approx(0.95).epsilon(1e-7));
  }

  TEST_CASE("momentum accumulates velocity") {
    SgdConfig cfg;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.0;
    auto s = single(true);
    sgd_step(s, grad(0.5f), 0.1, cfg);
    sgd_step(s, grad(0.5f), 0.1, cfg);
    // v1 = 0.5, v2 = 0.95; w = 1 - 0.05 - 0.095
    CHECK(s.at("w").value[0] == doctest::Approx(0.855).epsilon(1e-6));
    CHECK(s.at("w").momentum[0] == doctest::Approx(0.95).epsilon(1e-6));
  }

  TEST_CASE("frozen buffers are untouched and missing gradients are errors") {
    SgdConfig cfg;
    ParamStore s;
    s.add("w", Tensor(Shape{2, 1, 1, 1}, 1.0f), true, true, 1);
    s.add("running_mean", Tensor(Shape{2, 1, 1, 1}, 3.0f), false, false, 1);
    sgd_step(s, {{"w", Tensor(Shape{2, 1, 1, 1}, 1.0f)}}, 0.1, cfg);
    CHECK(s.at("running_mean").value[0] == 3.0f);
    CHECK_THROWS_AS(sgd_step(s, {}, 0.1, cfg), Error);
    CHECK_THROWS_AS(sgd_step(s, {{"w", Tensor(Shape{3, 1, 1, 1})}}, 0.1, cfg), Error);
  }

  TEST_CASE("poly schedule") {
    SgdConfig cfg;
    cfg.max_iter = 1000;
    CHECK(poly_lr(cfg, 0) == 2.5e-2);
    CHECK(poly_lr(cfg, 1000) == 0.0);
    CHECK(poly_lr(cfg, 500) == doctest::Approx(1.33972e-2).epsilon(1e-5));
    for (std::int64_t i = 0; i <= 1000; i += 37)
      CHECK(std::abs(poly_lr(cfg, i) - 2.5e-2 * std::pow(1.0 - i / 1000.0, 0.9)) < 1e-15);
    CHECK_THROWS_AS(poly_lr(cfg, 1001), Error);
    CHECK_THROWS_AS(poly_lr(cfg, -1), Error);
  }

  TEST_CASE("invalid hyperparameters are config errors") {
    auto bad = [](auto mutate) {
      SgdConfig c;
      mutate(c);
      try {
        c.validate();
      } catch (const Error& e) {
        return e.kind() == ErrorKind::kConfig;
      }
      return false;
    };
    CHECK(bad([](SgdConfig& c) { c.base_lr = 0.0; }));
    CHECK(bad([](SgdConfig& c) { c.momentum = 1.0; }));
    CHECK(bad([](SgdConfig& c) { c.weight_decay = -1.0; }));
    CHECK(bad([](SgdConfig& c) { c.max_iter = 0; }));
    CHECK_NOTHROW(SgdConfig{}.validate());
  }
}
