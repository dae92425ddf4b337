#include <benchmark/benchmark.h>

#include "bisenet/backbone.hpp"
#include "bisenet/bisenet.hpp"
#include "bisenet/ops.hpp"

using namespace bisenet;

namespace {

Tensor filled(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(s);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform() - 0.5);
  return t;
}

void BM_Conv3x3(benchmark::State& st) {
  const std::int64_t c = st.range(0), hw = st.range(1);
  const Tensor x = filled(Shape{1, c, hw, hw}, 1);
  const Tensor w = filled(Shape{c, c, 3, 3}, 2);
  Conv2dParams<float> p{&w, nullptr, 1, 1, 1};
  Tensor out(conv2d_output_shape(x.shape(), p));
  ConvWorkspace<float> ws;
  for (auto _ : st) {
    conv2d_forward_into(x, p, out, ws);
    benchmark::DoNotOptimize(out.ptr());
  }
  st.counters["GMAC/s"] = benchmark::Counter(static_cast<double>(c * c * 9 * hw * hw) * 1e-9,
                                              benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv3x3)->Args({32, 96})->Args({64, 48})->Args({128, 24})->Unit(benchmark::kMicrosecond);

void BM_Depthwise(benchmark::State& st) {
  const std::int64_t c = st.range(0), hw = st.range(1);
  const Tensor x = filled(Shape{1, c, hw, hw}, 3);
  const Tensor w = filled(Shape{c, 1, 3, 3}, 4);
  Conv2dParams<float> p{&w, nullptr, 1, 1, static_cast<int>(c)};
  Tensor out(conv2d_output_shape(x.shape(), p));
  ConvWorkspace<float> ws;
  for (auto _ : st) {
    conv2d_forward_into(x, p, out, ws);
    benchmark::DoNotOptimize(out.ptr());
  }
}
BENCHMARK(BM_Depthwise)->Args({64, 96})->Args({512, 12})->Unit(benchmark::kMicrosecond);

void BM_Upsample8(benchmark::State& st) {
  const Tensor x = filled(Shape{1, 19, 48, 80}, 5);
  Tensor out(Shape{1, 19, 384, 640});
  for (auto _ : st) {
    bilinear_upsample_into(x, 8, out);
    benchmark::DoNotOptimize(out.ptr());
  }
}
BENCHMARK(BM_Upsample8)->Unit(benchmark::kMicrosecond);

void BM_ModelInfer(benchmark::State& st) {
  const BiSeNetConfig cfg;
  Model model(cfg);
  ParamStore store = init_params<float>(model.graph(), 0);
  const Tensor x = filled(Shape{1, 3, st.range(1), st.range(0)}, 6);
  model.infer(store, x);
  for (auto _ : st) benchmark::DoNotOptimize(model.infer(store, x).ptr());
}
BENCHMARK(BM_ModelInfer)->Args({320, 192})->Args({640, 384})->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
