#pragma once

// Finite-difference gradient checks for every differentiable primitive and
// for a whole small network. Shared by the unit tests and the acceptance
// runner.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bisenet/bisenet.hpp"
#include "bisenet/executor.hpp"
#include "bisenet/ops.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace gradsuite {

using bisenet::Mode;
using bisenet::Rng;
using bisenet::Shape;
using oracle::T64;

struct Result {
  std::string check;  // "<op>/<tensor>"
  std::uint64_t seed = 0;
  double rel = 0.0;
};

using Sink = std::vector<Result>;

inline void record(Sink& out, const std::string& name, std::uint64_t seed, double rel) {
  out.push_back({name, seed, rel});
}

// Values bounded away from zero so kinks are never straddled by +-h.
inline T64 away_from_zero(const Shape& s, Rng& rng) {
  T64 t(s);
  for (auto& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.05 + rng.uniform());
  return t;
}

inline void conv_checks(Sink& out, std::uint64_t seed) {
  struct Case { const char* name; std::int64_t ci, co, h; int k, s, p, g; bool bias; };
  const Case cases[] = {{"conv3x3", 3, 4, 6, 3, 1, 1, 1, true},
                        {"conv_s2_grouped", 4, 6, 7, 3, 2, 1, 2, false},
                        {"conv_depthwise", 5, 5, 6, 3, 1, 1, 5, false},
                        {"conv1x1", 4, 3, 5, 1, 1, 0, 1, true}};
  for (const auto& c : cases) {
    Rng rng(seed * 977 + 13);
    T64 x = oracle::random_tensor(Shape{2, c.ci, c.h, c.h}, rng);
    T64 w = oracle::random_tensor(Shape{c.co, c.ci / c.g, c.k, c.k}, rng);
    T64 b = oracle::random_tensor(Shape{c.co, 1, 1, 1}, rng);
    bisenet::Conv2dParams<double> p{&w, c.bias ? &b : nullptr, c.s, c.p, c.g};
    const auto y = bisenet::conv2d_forward(x, p);
    const T64 r = oracle::random_tensor(y.shape(), rng);
    const auto g = bisenet::conv2d_backward(x, p, r);
    auto f = [&] { return oracle::project(bisenet::conv2d_forward(x, p), r); };
    const std::string n = c.name;
    record(out, n + "/x", seed, oracle::check_tensor(x, g.grad_x, f, rng));
    record(out, n + "/weight", seed, oracle::check_tensor(w, g.grad_weight, f, rng));
    if (c.bias) record(out, n + "/bias", seed, oracle::check_tensor(b, g.grad_bias, f, rng));
  }
}

inline void batchnorm_checks(Sink& out, std::uint64_t seed) {
  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    Rng rng(seed * 31 + 5);
    T64 x = oracle::random_tensor(Shape{2, 3, 4, 4}, rng);
    T64 g = oracle::random_tensor(Shape{3, 1, 1, 1}, rng), b = oracle::random_tensor(Shape{3, 1, 1, 1}, rng);
    T64 rm = oracle::random_tensor(Shape{3, 1, 1, 1}, rng), rv(Shape{3, 1, 1, 1});
    for (auto& v : rv.data()) v = 0.5 + rng.uniform();
    bisenet::BatchNormParams<double> p{&g, &b, nullptr, nullptr, 1e-5, 0.9, mode};
    if (mode == Mode::kInfer) {
      p.running_mean = &rm;
      p.running_var = &rv;
    }
    bisenet::BatchNormCache cache;
    const auto y = bisenet::batchnorm_forward(x, p, &cache);
    const T64 r = oracle::random_tensor(y.shape(), rng);
    const auto grads = bisenet::batchnorm_backward(x, p, cache, r);
    auto f = [&] { return oracle::project(bisenet::batchnorm_forward(x, p), r); };
    const std::string n = mode == Mode::kTrain ? "batchnorm_train" : "batchnorm_infer";
    record(out, n + "/x", seed, oracle::check_tensor(x, grads.grad_x, f, rng));
    record(out, n + "/gamma", seed, oracle::check_tensor(g, grads.grad_gamma, f, rng));
    record(out, n + "/beta", seed, oracle::check_tensor(b, grads.grad_beta, f, rng));
  }
}

inline void pointwise_checks(Sink& out, std::uint64_t seed) {
  Rng rng(seed * 7 + 3);
  {
    T64 x = away_from_zero(Shape{2, 3, 4, 5}, rng);
    const T64 r = oracle::random_tensor(x.shape(), rng);
    const auto g = bisenet::relu_backward(x, r);
    auto f = [&] { return oracle::project(bisenet::relu(x), r); };
    record(out, "relu/x", seed, oracle::check_tensor(x, g, f, rng));
  }
  {
    T64 x = oracle::random_tensor(Shape{2, 3, 4, 5}, rng, 4.0);
    const T64 r = oracle::random_tensor(x.shape(), rng);
    const auto g = bisenet::sigmoid_backward(bisenet::sigmoid(x), r);
    auto f = [&] { return oracle::project(bisenet::sigmoid(x), r); };
    record(out, "sigmoid/x", seed, oracle::check_tensor(x, g, f, rng));
  }
  {
    T64 x = oracle::random_tensor(Shape{2, 3, 5, 4}, rng);
    const T64 r = oracle::random_tensor(Shape{2, 3, 1, 1}, rng);
    const auto g = bisenet::global_avg_pool_backward(x.shape(), r);
    auto f = [&] { return oracle::project(bisenet::global_avg_pool(x), r); };
    record(out, "global_avg_pool/x", seed, oracle::check_tensor(x, g, f, rng));
  }
  for (int factor : {2, 8}) {
    T64 x = oracle::random_tensor(Shape{1, 2, 3, 4}, rng);
    const T64 r = oracle::random_tensor(Shape{1, 2, 3 * factor, 4 * factor}, rng);
    const auto g = bisenet::bilinear_upsample_backward(r, factor, x.shape());
    auto f = [&] { return oracle::project(bisenet::bilinear_upsample(x, factor), r); };
    record(out, "upsample_x" + std::to_string(factor) + "/x", seed, oracle::check_tensor(x, g, f, rng));
  }
}

inline void loss_checks(Sink& out, std::uint64_t seed) {
  Rng rng(seed * 13 + 1);
  T64 logits = oracle::random_tensor(Shape{2, 5, 4, 4}, rng, 3.0);
  auto labels = fixture::random_labels(2, 4, 4, 5, rng);
  labels.data[3] = bisenet::kIgnoreLabel;
  {
    const auto r = bisenet::softmax_ce_loss(logits, labels);
    auto f = [&] { return bisenet::softmax_ce_loss(logits, labels).loss; };
    record(out, "softmax_ce/logits", seed, oracle::check_tensor(logits, r.grad, f, rng));
  }
  {
    const auto r = bisenet::bootstrap_ce_loss(logits, labels, 0.25, 3);
    auto f = [&] { return bisenet::bootstrap_ce_loss(logits, labels, 0.25, 3).loss; };
    record(out, "bootstrap_ce/logits", seed, oracle::check_tensor(logits, r.grad, f, rng));
  }
}

// add (broadcast), mul (broadcast), concat and a biased conv wired through
// the executor, which owns the backward of the structural ops.
inline void executor_checks(Sink& out, std::uint64_t seed) {
  bisenet::GraphBuilder b;
  b.input("a", 3);
  b.input("g", 3);
  b.input("z", 2);
  auto m = b.mul("mul", "a", "g");
  auto s = b.add("add", m, "g");
  auto c = b.concat("cat", {s, "z"});
  b.conv("mix", c, 4, 3, 1, 1, true);
  auto graph = b.release();
  auto store = bisenet::init_params<double>(graph, seed);
  Rng rng(seed + 99);
  T64 a = oracle::random_tensor(Shape{2, 3, 5, 5}, rng);
  T64 g = oracle::random_tensor(Shape{2, 3, 1, 1}, rng);
  T64 z = oracle::random_tensor(Shape{2, 2, 5, 5}, rng);
  const T64 r = oracle::random_tensor(Shape{2, 4, 5, 5}, rng);
  const std::map<std::string, const T64*> ins{{"a", &a}, {"g", &g}, {"z", &z}};
  bisenet::LossFn<double> loss = [&](const std::map<std::string, const T64*>& o) {
    bisenet::LossSeeds<double> ls;
    ls.loss = oracle::project(*o.at("mix"), r);
    ls.seeds.emplace("mix", r);
    return ls;
  };
  const auto res = bisenet::forward_backward(graph, store, ins, {"mix"}, loss, true);
  auto f = [&] { return bisenet::forward_backward(graph, store, ins, {"mix"}, loss).loss; };
  record(out, "graph_mul_add_concat/a", seed, oracle::check_tensor(a, res.grads.inputs.at("a"), f, rng));
  record(out, "graph_mul_add_concat/g", seed, oracle::check_tensor(g, res.grads.inputs.at("g"), f, rng));
  record(out, "graph_mul_add_concat/z", seed, oracle::check_tensor(z, res.grads.inputs.at("z"), f, rng));
  auto& w = store.at("mix.weight").value;
  record(out, "graph_mul_add_concat/mix.weight", seed,
         oracle::check_tensor(w, res.grads.params.at("mix.weight"), f, rng));
}

// Whole network in train mode under the joint loss: input gradient plus
// every trainable tensor, a few sampled elements each.
inline void network_checks(Sink& out, std::uint64_t seed, bisenet::BiSeNetConfig cfg = fixture::tiny_config(),
                           const std::string& tag = "bisenet") {
  bisenet::BasicModel<double> model(cfg);
  auto store = bisenet::init_params<double>(model.graph(), seed);
  Rng rng(seed * 5 + 2);
  T64 x = oracle::random_tensor(Shape{4, 3, 32, 32}, rng);
  const auto labels = fixture::random_labels(4, 32, 32, cfg.num_classes, rng);
  auto loss_at = [&]() -> bisenet::JointLoss<double> {
    auto art = model.forward(store, x, Mode::kTrain);
    const T64* a16 = art.aux_logits.size() > 0 ? &art.aux_logits[0] : nullptr;
    const T64* a32 = art.aux_logits.size() > 1 ? &art.aux_logits[1] : nullptr;
    return bisenet::joint_loss(art.main_logits, a16, a32, labels, cfg);
  };
  auto jl = loss_at();
  std::map<std::string, T64> seeds{{bisenet::val::kLogits, jl.grad_main}};
  if (!jl.grad_aux16.empty()) seeds.emplace(bisenet::val::kAux16, jl.grad_aux16);
  if (!jl.grad_aux32.empty()) seeds.emplace(bisenet::val::kAux32, jl.grad_aux32);
  const auto grads = model.executor().backward(store, seeds, true);
  auto f = [&] { return loss_at().total; };
  // A fixed step on an early weight moves thousands of ReLU inputs at once
  // and often straddles a kink, so the whole network uses adaptive steps.
  constexpr double h = 0.0;
  record(out, tag + "/image", seed, oracle::check_tensor(x, grads.inputs.at(bisenet::val::kImage), f, rng, 8, h));
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    auto it = grads.params.find(e.name);
    if (it == grads.params.end()) {
      record(out, tag + "/" + e.name + " (missing)", seed, 1.0);
      continue;
    }
    record(out, tag + "/" + e.name, seed, oracle::check_tensor(e.value, it->second, f, rng, 3, h));
  }
}

inline Sink run(int seeds = 5) {
  Sink out;
  for (std::uint64_t s = 0; s < static_cast<std::uint64_t>(seeds); ++s) {
    conv_checks(out, s);
    batchnorm_checks(out, s);
    pointwise_checks(out, s);
    loss_checks(out, s);
    executor_checks(out, s);
    network_checks(out, s);
  }
  return out;
}

}  // namespace gradsuite
