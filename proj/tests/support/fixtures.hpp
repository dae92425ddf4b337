#pragma once

#include "bisenet/bisenet.hpp"

namespace fixture {

// Small network with every component enabled, cheap enough for
// finite-difference checks on 32x32 inputs.
inline bisenet::BiSeNetConfig tiny_config(std::int64_t classes = 3) {
  bisenet::BiSeNetConfig c;
  c.num_classes = classes;
  c.sp_channels = {4, 4, 6};
  c.cp_channels = 6;
  c.ffm_channels = 8;
  c.ffm_reduction = 2;
  c.head_channels = 4;
  c.backbone.stem_channels = 2;
  c.backbone.stage_channels = {4, 6, 8};
  c.backbone.blocks_per_stage = {1, 2, 1};
  c.bootstrap_min_kept = 4;
  return c;
}

inline bisenet::LabelMap random_labels(std::int64_t n, std::int64_t h, std::int64_t w, std::int64_t classes,
                                       bisenet::Rng& rng) {
  bisenet::LabelMap m(n, h, w);
  for (auto& v : m.data) v = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(classes)));
  return m;
}

inline bisenet::LayerSpec layer(std::string name, bisenet::LayerKind kind, std::vector<std::string> inputs,
                                std::string output) {
  bisenet::LayerSpec l;
  l.name = std::move(name);
  l.kind = kind;
  l.inputs = std::move(inputs);
  l.output = std::move(output);
  return l;
}

}  // namespace fixture
