#pragma once

// Xception39-style context backbone: a stride-4 stem of two 3x3 stride-2
// conv-BN-ReLU layers followed by three stages of separable residual
// blocks, giving features at strides 8, 16 and 32.

#include <array>
#include <cstdint>
#include <string>

#include "bisenet/executor.hpp"
#include "bisenet/graph.hpp"
#include "bisenet/param_store.hpp"

namespace bisenet {

struct BackboneConfig {
  std::int64_t input_channels = 3;
  std::int64_t stem_channels = 8;  // first stem conv; the second doubles it
  std::array<std::int64_t, 3> stage_channels{32, 64, 128};
  std::array<std::int64_t, 3> blocks_per_stage{4, 8, 4};

  // Throws kConfig.
  void validate() const;
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

// Backbone used by the default segmentation model.
inline BackboneConfig default_model_backbone() {
  BackboneConfig b;
  b.stage_channels = {32, 64, 512};
  return b;
}

// Value names of the backbone taps inside a built graph.
struct BackboneTaps {
  std::string feat4;
  std::string feat8;
  std::string feat16;
  std::string feat32;
};

// Appends the backbone under the "cp." prefix, reading from `input`.
BackboneTaps build_backbone(GraphBuilder& b, const std::string& input, const BackboneConfig& cfg);

// Standalone graph with input "image" and outputs "feat8", "feat16", "feat32".
Graph backbone_graph(const BackboneConfig& cfg);

template <typename T>
struct StageOutputs {
  BasicTensor<T> feat8;
  BasicTensor<T> feat16;
  BasicTensor<T> feat32;
};

// Throws kShape naming the axis when h or w is not a multiple of 32.
template <typename T>
StageOutputs<T> backbone_forward(const BasicTensor<T>& x, const BackboneConfig& cfg,
                                 BasicParamStore<T>& store, Mode mode);

// Theoretical receptive field (pixels) of feat8, feat16 and feat32.
std::array<std::int64_t, 3> receptive_field(const BackboneConfig& cfg);

// Shape precondition shared by the networks: h and w multiples of `m`.
void require_multiple(const Shape& s, std::int64_t m, const char* what);

}  // namespace bisenet
