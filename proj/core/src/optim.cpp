#include "bisenet/optim.hpp"

#include <cmath>

namespace bisenet {

void SgdConfig::validate() const {
  if (!(base_lr > 0.0)) fail(ErrorKind::kConfig, "sgd.base_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorKind::kConfig, "sgd.momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) fail(ErrorKind::kConfig, "sgd.weight_decay must be >= 0");
  if (!(power > 0.0)) fail(ErrorKind::kConfig, "sgd.power must be > 0");
  if (max_iter < 1) fail(ErrorKind::kConfig, "sgd.max_iter must be >= 1");
}

double poly_lr(const SgdConfig& cfg, std::int64_t iter) {
  if (iter < 0 || iter > cfg.max_iter)
    fail(ErrorKind::kArgument, "iteration " + std::to_string(iter) + " outside [0, " +
                                   std::to_string(cfg.max_iter) + "]");
  const double progress = static_cast<double>(iter) / static_cast<double>(cfg.max_iter);
  return cfg.base_lr * std::pow(1.0 - progress, cfg.power);
}

template <typename T>
void sgd_step(BasicParamStore<T>& store, const std::map<std::string, BasicTensor<T>>& grads, double lr,
              const SgdConfig& cfg) {
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    auto it = grads.find(e.name);
    if (it == grads.end()) fail(ErrorKind::kConsistency, "no gradient for parameter '" + e.name + "'");
    if (!(it->second.shape() == e.value.shape()))
      fail(ErrorKind::kConsistency, "gradient for '" + e.name + "' has shape " + it->second.shape().str());
  }
  const T mom = static_cast<T>(cfg.momentum);
  const T rate = static_cast<T>(lr);
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    const T wd = e.decay ? static_cast<T>(cfg.weight_decay) : T(0);
    const T* g = grads.find(e.name)->second.ptr();
    T* w = e.value.ptr();
    T* v = e.momentum.ptr();
    const std::int64_t count = e.value.numel();
    for (std::int64_t i = 0; i < count; ++i) {
      v[i] = mom * v[i] + (g[i] + wd * w[i]);
    }
    if (rate == T(0)) continue;
    for (std::int64_t i = 0; i < count; ++i) w[i] -= rate * v[i];
  }
}

template void sgd_step<float>(BasicParamStore<float>&, const std::map<std::string, BasicTensor<float>>&,
                              double, const SgdConfig&);
template void sgd_step<double>(BasicParamStore<double>&, const std::map<std::string, BasicTensor<double>>&,
                               double, const SgdConfig&);

}  // namespace bisenet
