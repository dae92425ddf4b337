#include "bisenet/backbone.hpp"

#include <cmath>

namespace bisenet {

void BackboneConfig::validate() const {
  if (input_channels < 1) fail(ErrorKind::kConfig, "backbone.input_channels must be >= 1");
  if (stem_channels < 1) fail(ErrorKind::kConfig, "backbone.stem_channels must be >= 1");
  for (int s = 0; s < 3; ++s) {
    if (stage_channels[s] < 1) fail(ErrorKind::kConfig, "backbone.stage_channels must be >= 1");
    if (blocks_per_stage[s] < 1) fail(ErrorKind::kConfig, "backbone.blocks_per_stage must be >= 1");
  }
}

void require_multiple(const Shape& s, std::int64_t m, const char* what) {
  if (s.h % m != 0)
    fail(ErrorKind::kShape, std::string(what) + ": height " + std::to_string(s.h) + " is not a multiple of " +
                                std::to_string(m));
  if (s.w % m != 0)
    fail(ErrorKind::kShape, std::string(what) + ": width " + std::to_string(s.w) + " is not a multiple of " +
                                std::to_string(m));
}

namespace {

// depthwise 3x3 -> BN -> ReLU -> pointwise 1x1 -> BN
std::string separable(GraphBuilder& b, const std::string& pre, const std::string& in, std::int64_t cout,
                      int stride) {
  const std::int64_t cin = b.channels(in);
  auto v = b.conv(pre + ".dw", in, cin, 3, stride, static_cast<int>(cin));
  v = b.bn(pre + ".dw_bn", v);
  v = b.relu(pre + ".dw_relu", v);
  v = b.conv(pre + ".pw", v, cout, 1);
  return b.bn(pre + ".bn", v);
}

std::string block(GraphBuilder& b, const std::string& pre, const std::string& in, std::int64_t cout,
                  int stride) {
  auto v = separable(b, pre + ".sep1", in, cout, stride);
  v = b.relu(pre + ".relu1", v);
  v = separable(b, pre + ".sep2", v, cout, 1);
  std::string shortcut = in;
  if (stride != 1 || b.channels(in) != cout) {
    shortcut = b.conv(pre + ".proj", in, cout, 1, stride);
    shortcut = b.bn(pre + ".proj_bn", shortcut);
  }
  v = b.add(pre + ".add", v, shortcut);
  return b.relu(pre + ".relu", v);
}

}  // namespace

BackboneTaps build_backbone(GraphBuilder& b, const std::string& input, const BackboneConfig& cfg) {
  cfg.validate();
  BackboneTaps taps;
  auto v = b.conv_bn_relu("cp.stem1", input, cfg.stem_channels, 3, 2);
  v = b.conv_bn_relu("cp.stem2", v, 2 * cfg.stem_channels, 3, 2);
  taps.feat4 = v;
  std::string* outs[3] = {&taps.feat8, &taps.feat16, &taps.feat32};
  for (int s = 0; s < 3; ++s) {
    for (std::int64_t k = 0; k < cfg.blocks_per_stage[s]; ++k) {
      const std::string pre = "cp.stage" + std::to_string(s + 1) + ".block" + std::to_string(k + 1);
      v = block(b, pre, v, cfg.stage_channels[s], k == 0 ? 2 : 1);
    }
    *outs[s] = v;
  }
  return taps;
}

Graph backbone_graph(const BackboneConfig& cfg) {
  GraphBuilder b;
  b.input("image", cfg.input_channels);
  const auto taps = build_backbone(b, "image", cfg);
  // Rename the taps so callers can address them uniformly.
  Graph g = b.release();
  const std::pair<std::string, std::string> renames[] = {
      {taps.feat8, "feat8"}, {taps.feat16, "feat16"}, {taps.feat32, "feat32"}};
  for (const auto& [from, to] : renames)
    for (auto& layer : g.layers) {
      if (layer.output == from) layer.output = to;
      for (auto& in : layer.inputs)
        if (in == from) in = to;
    }
  return g;
}

template <typename T>
StageOutputs<T> backbone_forward(const BasicTensor<T>& x, const BackboneConfig& cfg, BasicParamStore<T>& store,
                                 Mode mode) {
  require_multiple(x.shape(), 32, "backbone input");
  if (x.shape().c != cfg.input_channels)
    fail(ErrorKind::kShape, "backbone input has " + std::to_string(x.shape().c) + " channels, expected " +
                                std::to_string(cfg.input_channels));
  Executor<T> ex(backbone_graph(cfg));
  ex.forward(store, {{"image", &x}}, mode, {"feat8", "feat16", "feat32"});
  return StageOutputs<T>{ex.value("feat8"), ex.value("feat16"), ex.value("feat32")};
}

std::array<std::int64_t, 3> receptive_field(const BackboneConfig& cfg) {
  const auto rf = receptive_fields(backbone_graph(cfg));
  const auto size = [&](const char* v) { return static_cast<std::int64_t>(std::llround(rf.at(v).size())); };
  return {size("feat8"), size("feat16"), size("feat32")};
}

template StageOutputs<float> backbone_forward<float>(const Tensor&, const BackboneConfig&, ParamStore&, Mode);
template StageOutputs<double> backbone_forward<double>(const Tensor64&, const BackboneConfig&, ParamStore64&,
                                                       Mode);

}  // namespace bisenet
