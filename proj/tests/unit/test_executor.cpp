#include <doctest.h>

#include "bench_alloc.hpp"
#include "bisenet/bisenet.hpp"
#include "bisenet/executor.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace bisenet;
using oracle::T64;

TEST_SUITE("executor") {
  TEST_CASE("an empty graph cannot be executed") {
    CHECK_THROWS_AS(Executor<float>(Graph{}), Error);
  }

  TEST_CASE("a three-layer chain equals the kernels composed by hand") {
    GraphBuilder b;
    b.input("x", 2);
    auto v = b.conv("c", "x", 3, 3, 1, 1, true);
    v = b.bn("n", v);
    b.relu("r", v);
    auto graph = b.release();
    auto store = init_params<double>(graph, 4);
    Rng rng(1);
    T64 x = oracle::random_tensor(Shape{2, 2, 5, 5}, rng);
    store.at("c.bias").value = oracle::random_tensor(Shape{3, 1, 1, 1}, rng);
    Executor<double> ex(graph);
    ex.forward(store, {{"x", &x}}, Mode::kInfer, {"r"});
    auto& s = store;
    const auto y = oracle::conv(x, s.at("c.weight").value, &s.at("c.bias").value, 1, 1, 1);
    const auto z = oracle::batchnorm(y, s.at("n.gamma").value, s.at("n.beta").value, s.at("n.running_mean").value,
                                     s.at("n.running_var").value, false, 1e-5);
    CHECK(oracle::max_abs_diff(ex.value("r"), relu(z)) < 1e-12);
  }

  TEST_CASE("gradients of a value used twice are summed") {
    GraphBuilder b;
    b.input("x", 2);
    b.mul("sq", "x", "x");
    auto graph = b.release();
    ParamStore64 store;
    Rng rng(3);
    T64 x = oracle::random_tensor(Shape{1, 2, 3, 3}, rng);
    const T64 r = oracle::random_tensor(x.shape(), rng);
    LossFn<double> loss = [&](const std::map<std::string, const T64*>& o) {
      LossSeeds<double> ls;
      ls.loss = oracle::project(*o.at("sq"), r);
      ls.seeds.emplace("sq", r);
      return ls;
    };
    const auto res = forward_backward(graph, store, {{"x", &x}}, {"sq"}, loss, true);
    const auto& g = res.grads.inputs.at("x");
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(g[i] == doctest::Approx(2.0 * x[i] * r[i]));
  }

  TEST_CASE("missing parameters and unbound inputs are reported") {
    GraphBuilder b;
    b.input("x", 1);
    b.conv("c", "x", 1, 1);
    auto graph = b.release();
    ParamStore store;
    Tensor x(Shape{1, 1, 2, 2});
    Executor<float> ex(graph);
    CHECK_THROWS_AS(ex.forward(store, {{"x", &x}}, Mode::kInfer, {"c"}), Error);
    auto good = init_params<float>(graph, 0);
    CHECK_THROWS_AS(ex.forward(good, {}, Mode::kInfer, {"c"}), Error);
    ex.forward(good, {{"x", &x}}, Mode::kInfer, {"c"});
    CHECK_THROWS_AS(ex.backward(good, {{"c", Tensor(Shape{1, 1, 2, 2})}}), Error);
  }

  TEST_CASE("the spatial path keeps the input gradient alive when context features are detached") {
    const auto cfg = fixture::tiny_config();
    BasicModel<double> model(cfg);
    auto store = init_params<double>(model.graph(), 2);
    Rng rng(6);
    T64 x = oracle::random_tensor(Shape{2, 3, 32, 32}, rng);
    const auto labels = fixture::random_labels(2, 32, 32, cfg.num_classes, rng);
    model.executor().set_stop_gradient({"cp.up16"});
    auto art = model.forward(store, x, Mode::kTrain);
    auto cfg0 = cfg;
    cfg0.aux_loss_weight = 1.0;
    const auto jl = joint_loss<double>(art.main_logits, nullptr, nullptr, labels, cfg0);
    const auto grads = model.executor().backward(store, {{val::kLogits, jl.grad_main}}, true);
    double in_norm = 0.0;
    for (double v : grads.inputs.at(val::kImage).data()) in_norm += v * v;
    CHECK(in_norm > 0.0);
    for (const auto& [name, g] : grads.params) {
      if (name.rfind("cp.", 0) != 0) continue;
      for (double v : g.data()) REQUIRE(v == 0.0);
    }
    double sp_norm = 0.0;
    for (double v : grads.params.at("sp.conv1.conv.weight").data()) sp_norm += v * v;
    CHECK(sp_norm > 0.0);
  }

  TEST_CASE("repeated inference is bitwise stable and allocation free") {
    auto cfg = fixture::tiny_config();
    Model model(cfg);
    auto store = init_params<float>(model.graph(), 5);
    Rng rng(8);
    Tensor x = oracle::random_tensor(Shape{1, 3, 64, 96}, rng).cast<float>();
    const Tensor first = model.infer(store, x);
    const Tensor second = model.infer(store, x);
    CHECK(first == second);
    const auto before = testalloc::count();
    const Tensor& third = model.infer(store, x);
    const auto after = testalloc::count();
    CHECK(after == before);
    CHECK(third == first);
  }
}
