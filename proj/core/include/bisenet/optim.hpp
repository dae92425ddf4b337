#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "bisenet/param_store.hpp"

namespace bisenet {

struct SgdConfig {
  double base_lr = 2.5e-2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double power = 0.9;
  std::int64_t max_iter = 1000;

  // Throws kConfig naming the offending field.
  void validate() const;
  friend bool operator==(const SgdConfig&, const SgdConfig&) = default;
};

// base_lr * (1 - iter / max_iter)^power. Throws kArgument outside [0, max_iter].
double poly_lr(const SgdConfig& cfg, std::int64_t iter);

// Momentum SGD over the trainable entries in store order:
//   g' = grad + wd * value (decay entries only); v = momentum * v + g'; value -= lr * v.
// Throws kConsistency when a trainable entry has no gradient or a mismatched one.
template <typename T>
void sgd_step(BasicParamStore<T>& store, const std::map<std::string, BasicTensor<T>>& grads, double lr,
              const SgdConfig& cfg);

}  // namespace bisenet
