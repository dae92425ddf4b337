#include "bisenet/param_store.hpp"

namespace bisenet {

template <typename T>
ParamEntry<T>& BasicParamStore<T>::add(std::string name, BasicTensor<T> value, bool trainable, bool decay,
                                       int rank) {
  if (index_.count(name)) fail(ErrorKind::kConsistency, "duplicate parameter name '" + name + "'");
  ParamEntry<T> e;
  e.name = std::move(name);
  e.momentum = BasicTensor<T>(value.shape());
  e.value = std::move(value);
  e.trainable = trainable;
  e.decay = decay;
  e.rank = rank;
  index_.emplace(e.name, entries_.size());
  entries_.push_back(std::move(e));
  return entries_.back();
}

template <typename T>
ParamEntry<T>* BasicParamStore<T>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

template <typename T>
const ParamEntry<T>* BasicParamStore<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

template <typename T>
ParamEntry<T>& BasicParamStore<T>::at(const std::string& name) {
  if (auto* e = find(name)) return *e;
  fail(ErrorKind::kConsistency, "unknown parameter '" + name + "'");
}

template <typename T>
const ParamEntry<T>& BasicParamStore<T>::at(const std::string& name) const {
  if (const auto* e = find(name)) return *e;
  fail(ErrorKind::kConsistency, "unknown parameter '" + name + "'");
}

template <typename T>
std::int64_t BasicParamStore<T>::trainable_count() const {
  std::int64_t total = 0;
  for (const auto& e : entries_)
    if (e.trainable) total += e.value.numel();
  return total;
}

template <typename T>
BasicParamStore<T> init_params(const Graph& graph, std::uint64_t seed) {
  BasicParamStore<T> store;
  std::uint64_t index = 0;
  for (const auto& layer : graph.layers) {
    if (layer.kind == LayerKind::kConv) {
      const auto& a = layer.conv;
      const Shape wshape{a.out_channels, a.in_channels / a.groups, a.kernel, a.kernel};
      Rng rng = Rng::derive(seed, index++);
      store.add(layer.name + ".weight",
                init_kaiming<T>(wshape, wshape.c * wshape.h * wshape.w, rng), true, true, 4);
      if (a.bias) {
        ++index;
        store.add(layer.name + ".bias", zeros<T>(Shape{a.out_channels, 1, 1, 1}), true, false, 1);
      }
    } else if (layer.kind == LayerKind::kBatchNorm) {
      const Shape vshape{layer.bn.channels, 1, 1, 1};
      index += 4;
      store.add(layer.name + ".gamma", BasicTensor<T>(vshape, T(1)), true, false, 1);
      store.add(layer.name + ".beta", zeros<T>(vshape), true, false, 1);
      store.add(layer.name + ".running_mean", zeros<T>(vshape), false, false, 1);
      store.add(layer.name + ".running_var", BasicTensor<T>(vshape, T(1)), false, false, 1);
    }
  }
  return store;
}

template class BasicParamStore<float>;
template class BasicParamStore<double>;
template BasicParamStore<float> init_params<float>(const Graph&, std::uint64_t);
template BasicParamStore<double> init_params<double>(const Graph&, std::uint64_t);

}  // namespace bisenet
