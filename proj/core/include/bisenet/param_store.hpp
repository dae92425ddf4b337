#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "bisenet/graph.hpp"
#include "bisenet/tensor.hpp"

namespace bisenet {

template <typename T>
struct ParamEntry {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> momentum;  // same shape as value
  bool trainable = true;
  bool decay = false;       // receives weight decay (conv weights)
  int rank = 4;             // logical rank used by the checkpoint format
};

// Named parameters and buffers in insertion order. Names are unique.
template <typename T>
class BasicParamStore {
 public:
  ParamEntry<T>& add(std::string name, BasicTensor<T> value, bool trainable, bool decay, int rank);

  ParamEntry<T>* find(const std::string& name);
  const ParamEntry<T>* find(const std::string& name) const;
  // Throws kConsistency for unknown names.
  ParamEntry<T>& at(const std::string& name);
  const ParamEntry<T>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<ParamEntry<T>>& entries() { return entries_; }
  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Total element count of trainable entries.
  std::int64_t trainable_count() const;

  std::uint64_t iteration = 0;
  std::uint64_t config_hash = 0;

  template <typename U>
  BasicParamStore<U> cast() const {
    BasicParamStore<U> out;
    for (const auto& e : entries_) {
      auto& added = out.add(e.name, e.value.template cast<U>(), e.trainable, e.decay, e.rank);
      added.momentum = e.momentum.template cast<U>();
    }
    out.iteration = iteration;
    out.config_hash = config_hash;
    return out;
  }

 private:
  std::vector<ParamEntry<T>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = BasicParamStore<float>;
using ParamStore64 = BasicParamStore<double>;

// Registers and initialises every parameter the graph's layers own:
// conv weights He-normal (fan_in = c_in/groups * k * k), conv biases 0,
// BN gamma 1 / beta 0, running mean 0 / var 1. Each tensor draws from its
// own stream derived from (seed, registration index).
template <typename T>
BasicParamStore<T> init_params(const Graph& graph, std::uint64_t seed);

}  // namespace bisenet
