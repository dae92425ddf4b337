#include "bisenet/graph.hpp"

#include <algorithm>
#include <queue>
#include <set>
#include <unordered_map>

#include "bisenet/ops.hpp"

namespace bisenet {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv: return "conv";
    case LayerKind::kBatchNorm: return "bn";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kSigmoid: return "sigmoid";
    case LayerKind::kGlobalAvgPool: return "gap";
    case LayerKind::kUpsample: return "upsample";
    case LayerKind::kConcat: return "concat";
    case LayerKind::kAdd: return "add";
    case LayerKind::kMul: return "mul";
  }
  return "unknown";
}

std::vector<std::size_t> Graph::topological_order() const {
  if (layers.empty()) fail(ErrorKind::kGraph, "graph has no layers");
  std::unordered_map<std::string, std::size_t> producer_of;
  std::set<std::string> input_set(inputs.begin(), inputs.end());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& out = layers[i].output;
    if (out.empty()) fail(ErrorKind::kGraph, "layer '" + layers[i].name + "' has no output name");
    if (input_set.count(out) || !producer_of.emplace(out, i).second)
      fail(ErrorKind::kGraph, "value '" + out + "' is produced more than once");
  }
  std::vector<std::size_t> pending(layers.size(), 0);
  std::vector<std::vector<std::size_t>> consumers(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (const auto& in : layers[i].inputs) {
      if (input_set.count(in)) continue;
      auto it = producer_of.find(in);
      if (it == producer_of.end())
        fail(ErrorKind::kGraph, "layer '" + layers[i].name + "' reads unbound value '" + in + "'");
      ++pending[i];
      consumers[it->second].push_back(i);
    }
  }
  // Min-heap on declaration index keeps the order stable.
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (pending[i] == 0) ready.push(i);
  std::vector<std::size_t> order;
  order.reserve(layers.size());
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    order.push_back(i);
    for (std::size_t c : consumers[i])
      if (--pending[c] == 0) ready.push(c);
  }
  if (order.size() != layers.size()) fail(ErrorKind::kGraph, "graph contains a cycle");
  return order;
}

std::size_t Graph::producer(std::string_view value) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].output == value) return i;
  return npos;
}

bool Graph::has_value(std::string_view value) const {
  return producer(value) != npos || std::find(inputs.begin(), inputs.end(), value) != inputs.end();
}

Shape infer_layer_shape(const LayerSpec& layer, const std::vector<Shape>& in) {
  const auto expect_inputs = [&](std::size_t count) {
    if (in.size() != count)
      fail(ErrorKind::kShape, "layer '" + layer.name + "' expects " + std::to_string(count) + " input(s)");
  };
  switch (layer.kind) {
    case LayerKind::kConv: {
      expect_inputs(1);
      const auto& a = layer.conv;
      if (in[0].c != a.in_channels)
        fail(ErrorKind::kShape, "layer '" + layer.name + "': input has " + std::to_string(in[0].c) +
                                    " channels, expected " + std::to_string(a.in_channels));
      return Shape{in[0].n, a.out_channels, conv_output_extent(in[0].h, a.kernel, a.stride, a.padding),
                   conv_output_extent(in[0].w, a.kernel, a.stride, a.padding)};
    }
    case LayerKind::kBatchNorm:
      expect_inputs(1);
      if (in[0].c != layer.bn.channels)
        fail(ErrorKind::kShape, "layer '" + layer.name + "': channel mismatch");
      return in[0];
    case LayerKind::kRelu:
    case LayerKind::kSigmoid:
      expect_inputs(1);
      return in[0];
    case LayerKind::kGlobalAvgPool:
      expect_inputs(1);
      return Shape{in[0].n, in[0].c, 1, 1};
    case LayerKind::kUpsample:
      expect_inputs(1);
      if (layer.factor < 1) fail(ErrorKind::kShape, "layer '" + layer.name + "': factor must be >= 1");
      return Shape{in[0].n, in[0].c, in[0].h * layer.factor, in[0].w * layer.factor};
    case LayerKind::kConcat: {
      if (in.empty()) fail(ErrorKind::kShape, "layer '" + layer.name + "' has no inputs");
      Shape out = in[0];
      out.c = 0;
      for (const auto& s : in) {
        if (s.n != in[0].n || s.h != in[0].h || s.w != in[0].w)
          fail(ErrorKind::kShape, "layer '" + layer.name + "': concat of " + in[0].str() + " and " + s.str());
        out.c += s.c;
      }
      return out;
    }
    case LayerKind::kAdd:
    case LayerKind::kMul:
      expect_inputs(2);
      if (!broadcastable(in[0], in[1]))
        fail(ErrorKind::kShape, "layer '" + layer.name + "': incompatible " + in[0].str() + " and " + in[1].str());
      return in[0];
  }
  fail(ErrorKind::kShape, "unknown layer kind");
}

std::map<std::string, Shape> infer_shapes(const Graph& graph, const std::map<std::string, Shape>& inputs) {
  std::map<std::string, Shape> shapes;
  for (const auto& name : graph.inputs) {
    auto it = inputs.find(name);
    if (it == inputs.end()) fail(ErrorKind::kGraph, "graph input '" + name + "' is not bound");
    it->second.numel();
    shapes[name] = it->second;
  }
  for (std::size_t i : graph.topological_order()) {
    const auto& layer = graph.layers[i];
    std::vector<Shape> in;
    in.reserve(layer.inputs.size());
    for (const auto& v : layer.inputs) in.push_back(shapes.at(v));
    shapes[layer.output] = infer_layer_shape(layer, in);
  }
  return shapes;
}

std::vector<std::string> layer_param_names(const LayerSpec& layer) {
  switch (layer.kind) {
    case LayerKind::kConv:
      if (layer.conv.bias) return {layer.name + ".weight", layer.name + ".bias"};
      return {layer.name + ".weight"};
    case LayerKind::kBatchNorm:
      return {layer.name + ".gamma", layer.name + ".beta", layer.name + ".running_mean",
              layer.name + ".running_var"};
    default:
      return {};
  }
}

std::map<std::string, ReceptiveField> receptive_fields(const Graph& graph) {
  std::map<std::string, ReceptiveField> rf;
  for (const auto& in : graph.inputs) rf[in] = ReceptiveField{};
  for (std::size_t i : graph.topological_order()) {
    const auto& layer = graph.layers[i];
    const ReceptiveField& first = rf.at(layer.inputs.front());
    ReceptiveField out = first;
    switch (layer.kind) {
      case LayerKind::kConv: {
        const double j = first.jump;
        out.lo = first.lo - layer.conv.padding * j;
        out.hi = first.hi + (layer.conv.kernel - 1 - layer.conv.padding) * j;
        out.jump = j * layer.conv.stride;
        break;
      }
      case LayerKind::kGlobalAvgPool:
        out.global = true;
        break;
      case LayerKind::kUpsample: {
        // Output d reads input taps floor(src) and floor(src) + 1 with
        // src = (d + 0.5) / f - 0.5.
        const double f = layer.factor;
        const double j = first.jump;
        out.lo = first.lo + (0.5 / f - 0.5 - 1.0) * j;
        out.hi = first.hi + (0.5 / f - 0.5 + 1.0) * j;
        out.jump = j / f;
        break;
      }
      case LayerKind::kConcat:
      case LayerKind::kAdd:
      case LayerKind::kMul:
        for (const auto& v : layer.inputs) {
          const ReceptiveField& r = rf.at(v);
          out.global = out.global || r.global;
          out.lo = std::min(out.lo, r.lo);
          out.hi = std::max(out.hi, r.hi);
        }
        break;
      default:
        break;
    }
    rf[layer.output] = out;
  }
  return rf;
}

// ---------------------------------------------------------------------------

std::string GraphBuilder::input(const std::string& name, std::int64_t channels) {
  graph_.inputs.push_back(name);
  channels_[name] = channels;
  return name;
}

std::int64_t GraphBuilder::channels(const std::string& value) const {
  auto it = channels_.find(value);
  if (it == channels_.end()) fail(ErrorKind::kGraph, "unknown value '" + value + "'");
  return it->second;
}

std::string GraphBuilder::push(LayerSpec spec, std::int64_t out_channels) {
  for (const auto& in : spec.inputs) channels(in);
  if (spec.output.empty()) spec.output = spec.name;
  if (channels_.count(spec.output)) fail(ErrorKind::kGraph, "value '" + spec.output + "' already defined");
  channels_[spec.output] = out_channels;
  std::string out = spec.output;
  graph_.layers.push_back(std::move(spec));
  return out;
}

std::string GraphBuilder::conv(const std::string& name, const std::string& in, std::int64_t out_channels,
                               int kernel, int stride, int groups, bool bias) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::kConv;
  s.inputs = {in};
  s.conv.in_channels = channels(in);
  s.conv.out_channels = out_channels;
  s.conv.kernel = kernel;
  s.conv.stride = stride;
  s.conv.padding = kernel / 2;
  s.conv.groups = groups;
  s.conv.bias = bias;
  if (s.conv.in_channels % groups != 0 || out_channels % groups != 0)
    fail(ErrorKind::kGraph, "layer '" + name + "': channels not divisible by groups");
  return push(std::move(s), out_channels);
}

std::string GraphBuilder::bn(const std::string& name, const std::string& in) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::kBatchNorm;
  s.inputs = {in};
  const std::int64_t c = channels(in);
  s.bn.channels = c;
  return push(std::move(s), c);
}

namespace {
LayerSpec unary(const std::string& name, LayerKind kind, const std::string& in) {
  LayerSpec s;
  s.name = name;
  s.kind = kind;
  s.inputs = {in};
  return s;
}
}  // namespace

std::string GraphBuilder::relu(const std::string& name, const std::string& in) {
  return push(unary(name, LayerKind::kRelu, in), channels(in));
}

std::string GraphBuilder::sigmoid(const std::string& name, const std::string& in) {
  return push(unary(name, LayerKind::kSigmoid, in), channels(in));
}

std::string GraphBuilder::gap(const std::string& name, const std::string& in) {
  return push(unary(name, LayerKind::kGlobalAvgPool, in), channels(in));
}

std::string GraphBuilder::upsample(const std::string& name, const std::string& in, int factor) {
  LayerSpec s = unary(name, LayerKind::kUpsample, in);
  s.factor = factor;
  return push(std::move(s), channels(in));
}

std::string GraphBuilder::concat(const std::string& name, const std::vector<std::string>& ins) {
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::kConcat;
  s.inputs = ins;
  std::int64_t total = 0;
  for (const auto& in : ins) total += channels(in);
  return push(std::move(s), total);
}

std::string GraphBuilder::add(const std::string& name, const std::string& a, const std::string& b) {
  if (channels(a) != channels(b)) fail(ErrorKind::kGraph, "add '" + name + "': channel mismatch");
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::kAdd;
  s.inputs = {a, b};
  return push(std::move(s), channels(a));
}

std::string GraphBuilder::mul(const std::string& name, const std::string& a, const std::string& b) {
  if (channels(a) != channels(b)) fail(ErrorKind::kGraph, "mul '" + name + "': channel mismatch");
  LayerSpec s;
  s.name = name;
  s.kind = LayerKind::kMul;
  s.inputs = {a, b};
  return push(std::move(s), channels(a));
}

std::string GraphBuilder::conv_bn_relu(const std::string& prefix, const std::string& in,
                                       std::int64_t out_channels, int kernel, int stride, int groups) {
  const auto c = conv(prefix + ".conv", in, out_channels, kernel, stride, groups, false);
  const auto b = bn(prefix + ".bn", c);
  return relu(prefix + ".relu", b);
}

}  // namespace bisenet
