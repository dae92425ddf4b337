#pragma once

// Declarative layer graphs. A network is a list of LayerSpec records wired
// by value name; the executor, the cost analyser and the receptive-field
// calculator all consume the same description.

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "bisenet/tensor.hpp"

namespace bisenet {

enum class LayerKind { kConv, kBatchNorm, kRelu, kSigmoid, kGlobalAvgPool, kUpsample, kConcat, kAdd, kMul };

std::string_view to_string(LayerKind kind);

struct ConvAttrs {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  bool bias = false;
};

struct BatchNormAttrs {
  std::int64_t channels = 0;
  double eps = 1e-5;
  double momentum = 0.9;
};

struct LayerSpec {
  std::string name;  // also the parameter prefix: "<name>.weight", "<name>.gamma", ...
  LayerKind kind = LayerKind::kRelu;
  std::vector<std::string> inputs;
  std::string output;
  ConvAttrs conv;       // kConv
  BatchNormAttrs bn;    // kBatchNorm
  int factor = 1;       // kUpsample
};

struct Graph {
  std::vector<std::string> inputs;
  std::vector<LayerSpec> layers;

  // Layer indices in execution order: a stable topological sort that keeps
  // the declaration order wherever dependencies allow. Throws kGraph on an
  // empty graph, a cycle, duplicate producers or an unbound input.
  std::vector<std::size_t> topological_order() const;

  // Index of the layer producing `value`, or npos for graph inputs.
  std::size_t producer(std::string_view value) const;
  bool has_value(std::string_view value) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

// Output shape of one layer given its input shapes. Throws kShape.
Shape infer_layer_shape(const LayerSpec& layer, const std::vector<Shape>& inputs);

// Shapes of every value reachable from the bound inputs.
std::map<std::string, Shape> infer_shapes(const Graph& graph,
                                          const std::map<std::string, Shape>& inputs);

// Parameter names a layer owns, in registration order.
std::vector<std::string> layer_param_names(const LayerSpec& layer);

// Theoretical receptive field along one spatial axis: output index i of
// `value` depends on input positions [lo + i*jump, hi + i*jump].
// Bilinear upsampling makes the mapping fractional, hence doubles.
struct ReceptiveField {
  double lo = 0.0;
  double hi = 0.0;
  double jump = 1.0;
  bool global = false;  // depends on the whole input (global pooling upstream)

  double size() const { return hi - lo + 1.0; }
};

std::map<std::string, ReceptiveField> receptive_fields(const Graph& graph);

// Incremental construction helper that tracks channel counts per value.
class GraphBuilder {
 public:
  GraphBuilder() = default;

  std::string input(const std::string& name, std::int64_t channels);

  std::string conv(const std::string& name, const std::string& in, std::int64_t out_channels,
                   int kernel, int stride = 1, int groups = 1, bool bias = false);
  std::string bn(const std::string& name, const std::string& in);
  std::string relu(const std::string& name, const std::string& in);
  std::string sigmoid(const std::string& name, const std::string& in);
  std::string gap(const std::string& name, const std::string& in);
  std::string upsample(const std::string& name, const std::string& in, int factor);
  std::string concat(const std::string& name, const std::vector<std::string>& ins);
  std::string add(const std::string& name, const std::string& a, const std::string& b);
  std::string mul(const std::string& name, const std::string& a, const std::string& b);

  // conv -> bn -> relu under a common prefix; returns the relu output.
  std::string conv_bn_relu(const std::string& prefix, const std::string& in,
                           std::int64_t out_channels, int kernel, int stride = 1, int groups = 1);

  std::int64_t channels(const std::string& value) const;
  const Graph& graph() const { return graph_; }
  Graph release() { return std::move(graph_); }

 private:
  std::string push(LayerSpec spec, std::int64_t out_channels);

  Graph graph_;
  std::map<std::string, std::int64_t> channels_;
};

}  // namespace bisenet
