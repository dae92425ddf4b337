#include "bisenet/executor.hpp"

#include <algorithm>
#include <unordered_map>

namespace bisenet {

namespace {

template <typename T>
void accumulate(BasicTensor<T>& slot, BasicTensor<T>&& g) {
  if (slot.empty()) {
    slot = std::move(g);
    return;
  }
  if (!(slot.shape() == g.shape()))
    fail(ErrorKind::kShape, "gradient shape " + g.shape().str() + " does not match " + slot.shape().str());
  T* dst = slot.ptr();
  const T* src = g.ptr();
  const std::int64_t count = slot.numel();
  for (std::int64_t i = 0; i < count; ++i) dst[i] += src[i];
}

// Sums a full (n, c, h, w) gradient down to the broadcast operand's (n, c, 1, 1).
template <typename T>
BasicTensor<T> reduce_to(const BasicTensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  BasicTensor<T> out(target);
  const Shape& s = g.shape();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      double acc = 0.0;
      for (T v : g.plane(n, c)) acc += v;
      out.at(n, c, 0, 0) = static_cast<T>(acc);
    }
  return out;
}

// a * b with b possibly broadcast per channel.
template <typename T>
BasicTensor<T> product(const BasicTensor<T>& g, const BasicTensor<T>& b) {
  return elementwise(g, b, Elementwise::kMul);
}

}  // namespace

template <typename T>
struct Executor<T>::Impl {
  struct Plan {
    std::vector<std::string> outputs;
    std::vector<Shape> input_shapes;
    Mode mode = Mode::kInfer;
    std::vector<std::size_t> steps;
    std::vector<int> slot;  // per value id; -1 for graph inputs and train mode
    std::size_t slot_count = 0;
  };

  std::vector<std::size_t> order;
  std::unordered_map<std::string, int> ids;
  std::vector<int> layer_out;                   // value id per layer
  std::vector<std::vector<int>> layer_in;       // value ids per layer
  std::vector<std::size_t> producer;            // layer per value id; npos for inputs
  std::vector<std::vector<std::string>> param_names;
  std::vector<int> input_ids;

  std::vector<BasicTensor<T>> owned;  // train mode storage, per value id
  std::vector<BasicTensor<T>> slots;  // infer mode storage
  std::vector<const BasicTensor<T>*> ptr;
  std::vector<ConvWorkspace<T>> conv_ws;  // per layer (only conv layers use theirs)
  std::vector<BatchNormCache> bn_cache;
  std::vector<const BasicTensor<T>*> parts;

  Plan plan;
  bool have_plan = false;
  bool trained_forward = false;
  std::vector<char> stop;  // per value id

  int id_of(const std::string& name) const {
    auto it = ids.find(name);
    if (it == ids.end()) fail(ErrorKind::kGraph, "unknown value '" + name + "'");
    return it->second;
  }

  bool plan_matches(const std::map<std::string, const BasicTensor<T>*>& inputs, Mode mode,
                    const std::vector<std::string>& outputs, const Graph& g) const {
    if (!have_plan || plan.mode != mode || plan.outputs != outputs) return false;
    for (std::size_t i = 0; i < g.inputs.size(); ++i) {
      auto it = inputs.find(g.inputs[i]);
      if (it == inputs.end() || it->second == nullptr) return false;
      if (!(it->second->shape() == plan.input_shapes[i])) return false;
    }
    return true;
  }

  void build_plan(const std::map<std::string, const BasicTensor<T>*>& inputs, Mode mode,
                  const std::vector<std::string>& outputs, const Graph& g) {
    Plan p;
    p.outputs = outputs;
    p.mode = mode;
    for (const auto& name : g.inputs) {
      auto it = inputs.find(name);
      if (it == inputs.end() || it->second == nullptr)
        fail(ErrorKind::kGraph, "graph input '" + name + "' is not bound");
      p.input_shapes.push_back(it->second->shape());
    }
    if (outputs.empty()) fail(ErrorKind::kGraph, "no outputs requested");

    // Backward reachability from the requested outputs.
    std::vector<char> needed(ids.size(), 0);
    std::vector<int> stack;
    for (const auto& o : outputs) stack.push_back(id_of(o));
    while (!stack.empty()) {
      const int v = stack.back();
      stack.pop_back();
      if (needed[v]) continue;
      needed[v] = 1;
      if (producer[v] != Graph::npos)
        for (int in : layer_in[producer[v]]) stack.push_back(in);
    }
    for (std::size_t l : order)
      if (needed[layer_out[l]]) p.steps.push_back(l);

    p.slot.assign(ids.size(), -1);
    if (mode == Mode::kInfer) {
      std::vector<std::size_t> last_use(ids.size(), 0);
      std::vector<char> pinned(ids.size(), 0);
      for (const auto& o : outputs) pinned[id_of(o)] = 1;
      for (std::size_t s = 0; s < p.steps.size(); ++s)
        for (int in : layer_in[p.steps[s]]) last_use[in] = s;
      std::vector<std::int64_t> cap;   // planned element count per slot
      std::vector<char> busy;
      for (std::size_t s = 0; s < p.steps.size(); ++s) {
        const int out = layer_out[p.steps[s]];
        // Best fit: the smallest free slot that is large enough, else the
        // largest free slot (which then grows), else a new one.
        const std::int64_t need = shape_of(out, p, g).numel();
        int pick = -1;
        for (std::size_t k = 0; k < cap.size(); ++k) {
          if (busy[k]) continue;
          if (pick < 0) {
            pick = static_cast<int>(k);
            continue;
          }
          const bool fits_k = cap[k] >= need;
          const bool fits_p = cap[pick] >= need;
          if (fits_k && (!fits_p || cap[k] < cap[pick])) pick = static_cast<int>(k);
          else if (!fits_k && !fits_p && cap[k] > cap[pick]) pick = static_cast<int>(k);
        }
        if (pick < 0) {
          pick = static_cast<int>(cap.size());
          cap.push_back(0);
          busy.push_back(0);
        }
        cap[pick] = std::max(cap[pick], need);
        busy[pick] = 1;
        p.slot[out] = pick;
        for (int in : layer_in[p.steps[s]])
          if (p.slot[in] >= 0 && last_use[in] == s && !pinned[in]) busy[p.slot[in]] = 0;
      }
      p.slot_count = cap.size();
    }
    plan = std::move(p);
    have_plan = true;
    if (slots.size() < plan.slot_count) slots.resize(plan.slot_count);
  }

  // Shapes are needed while planning; computed once per plan.
  std::map<std::string, Shape> planned_shapes;
  Shape shape_of(int v, const Plan& p, const Graph& g) {
    if (planned_shapes.empty()) {
      std::map<std::string, Shape> in;
      for (std::size_t i = 0; i < g.inputs.size(); ++i) in[g.inputs[i]] = p.input_shapes[i];
      planned_shapes = infer_shapes(g, in);
    }
    return planned_shapes.at(g.layers[producer[v]].output);
  }
};

template <typename T>
Executor<T>::Executor(Graph graph) : graph_(std::move(graph)), impl_(std::make_unique<Impl>()) {
  auto& im = *impl_;
  im.order = graph_.topological_order();
  for (const auto& in : graph_.inputs) {
    const int id = static_cast<int>(im.ids.size());
    if (!im.ids.emplace(in, id).second) fail(ErrorKind::kGraph, "duplicate graph input '" + in + "'");
    im.producer.push_back(Graph::npos);
    im.input_ids.push_back(id);
  }
  const std::size_t nl = graph_.layers.size();
  im.layer_out.resize(nl);
  im.layer_in.resize(nl);
  im.param_names.resize(nl);
  for (std::size_t l = 0; l < nl; ++l) {
    const int id = static_cast<int>(im.ids.size());
    im.ids.emplace(graph_.layers[l].output, id);
    im.producer.push_back(l);
    im.layer_out[l] = id;
    im.param_names[l] = layer_param_names(graph_.layers[l]);
  }
  std::size_t max_parts = 0;
  for (std::size_t l = 0; l < nl; ++l) {
    for (const auto& in : graph_.layers[l].inputs) im.layer_in[l].push_back(im.id_of(in));
    max_parts = std::max(max_parts, graph_.layers[l].inputs.size());
  }
  im.owned.resize(im.ids.size());
  im.ptr.assign(im.ids.size(), nullptr);
  im.conv_ws.resize(nl);
  im.bn_cache.resize(nl);
  im.parts.reserve(max_parts);
  im.stop.assign(im.ids.size(), 0);
}

template <typename T>
Executor<T>::~Executor() = default;
template <typename T>
Executor<T>::Executor(Executor&&) noexcept = default;
template <typename T>
Executor<T>& Executor<T>::operator=(Executor&&) noexcept = default;

template <typename T>
void Executor<T>::forward(BasicParamStore<T>& store,
                          const std::map<std::string, const BasicTensor<T>*>& inputs, Mode mode,
                          const std::vector<std::string>& outputs, bool keep) {
  auto& im = *impl_;
  const bool kept = keep || mode == Mode::kTrain;
  // Kept activations live in per-value storage; the slot plan is only for
  // the streaming case.
  const Mode plan_mode = kept ? Mode::kTrain : Mode::kInfer;
  if (!im.plan_matches(inputs, plan_mode, outputs, graph_)) {
    im.planned_shapes.clear();
    im.build_plan(inputs, plan_mode, outputs, graph_);
  }
  std::fill(im.ptr.begin(), im.ptr.end(), nullptr);
  for (std::size_t i = 0; i < graph_.inputs.size(); ++i)
    im.ptr[im.input_ids[i]] = inputs.find(graph_.inputs[i])->second;

  for (std::size_t l : im.plan.steps) {
    const LayerSpec& layer = graph_.layers[l];
    const int out_id = im.layer_out[l];
    BasicTensor<T>& out = kept ? im.owned[out_id] : im.slots[im.plan.slot[out_id]];
    const auto& in_ids = im.layer_in[l];
    const BasicTensor<T>& x = *im.ptr[in_ids[0]];
    const auto& names = im.param_names[l];
    switch (layer.kind) {
      case LayerKind::kConv: {
        Conv2dParams<T> p;
        p.weight = &store.at(names[0]).value;
        p.bias = layer.conv.bias ? &store.at(names[1]).value : nullptr;
        p.stride = layer.conv.stride;
        p.padding = layer.conv.padding;
        p.groups = layer.conv.groups;
        conv2d_forward_into(x, p, out, im.conv_ws[l]);
        break;
      }
      case LayerKind::kBatchNorm: {
        BatchNormParams<T> p;
        p.gamma = &store.at(names[0]).value;
        p.beta = &store.at(names[1]).value;
        p.running_mean = &store.at(names[2]).value;
        p.running_var = &store.at(names[3]).value;
        p.eps = layer.bn.eps;
        p.momentum = layer.bn.momentum;
        p.mode = mode;
        batchnorm_forward_into(x, p, out, &im.bn_cache[l]);
        break;
      }
      case LayerKind::kRelu: relu_into(x, out); break;
      case LayerKind::kSigmoid: sigmoid_into(x, out); break;
      case LayerKind::kGlobalAvgPool: global_avg_pool_into(x, out); break;
      case LayerKind::kUpsample: bilinear_upsample_into(x, layer.factor, out); break;
      case LayerKind::kConcat: {
        im.parts.clear();
        for (int id : in_ids) im.parts.push_back(im.ptr[id]);
        concat_channels_into<T>(im.parts, out);
        break;
      }
      case LayerKind::kAdd:
        elementwise_into(x, *im.ptr[in_ids[1]], Elementwise::kAdd, out);
        break;
      case LayerKind::kMul:
        elementwise_into(x, *im.ptr[in_ids[1]], Elementwise::kMul, out);
        break;
    }
    im.ptr[out_id] = &out;
  }
  im.trained_forward = kept;
}

template <typename T>
bool Executor<T>::has_value(const std::string& name) const {
  auto it = impl_->ids.find(name);
  if (it == impl_->ids.end() || impl_->ptr[it->second] == nullptr) return false;
  if (impl_->trained_forward) return true;
  const auto& outs = impl_->plan.outputs;
  return impl_->producer[it->second] == Graph::npos ||
         std::find(outs.begin(), outs.end(), name) != outs.end();
}

template <typename T>
const BasicTensor<T>& Executor<T>::value(const std::string& name) const {
  if (!has_value(name)) fail(ErrorKind::kGraph, "value '" + name + "' was not kept by the last forward");
  return *impl_->ptr[impl_->ids.at(name)];
}

template <typename T>
void Executor<T>::set_stop_gradient(std::set<std::string> values) {
  auto& im = *impl_;
  std::fill(im.stop.begin(), im.stop.end(), 0);
  for (const auto& v : values) im.stop[im.id_of(v)] = 1;
}

template <typename T>
Gradients<T> Executor<T>::backward(const BasicParamStore<T>& store,
                                   const std::map<std::string, BasicTensor<T>>& seeds,
                                   bool want_input_grads) {
  auto& im = *impl_;
  if (!im.trained_forward) fail(ErrorKind::kGraph, "backward requires a forward that kept its activations");
  std::vector<BasicTensor<T>> grad(im.ids.size());
  for (const auto& [name, g] : seeds) {
    const int id = im.id_of(name);
    if (im.ptr[id] == nullptr) fail(ErrorKind::kGraph, "seed for value '" + name + "' which was not computed");
    if (!(g.shape() == im.ptr[id]->shape()))
      fail(ErrorKind::kShape, "seed for '" + name + "' has shape " + g.shape().str() + ", expected " +
                                  im.ptr[id]->shape().str());
    accumulate(grad[id], BasicTensor<T>(g));
  }
  const auto wants = [&](int id) {
    if (im.stop[id]) return false;
    return im.producer[id] != Graph::npos || want_input_grads;
  };

  Gradients<T> out;
  const auto& steps = im.plan.steps;
  for (auto it = steps.rbegin(); it != steps.rend(); ++it) {
    const std::size_t l = *it;
    const LayerSpec& layer = graph_.layers[l];
    const int out_id = im.layer_out[l];
    if (grad[out_id].empty() || im.stop[out_id]) continue;
    const BasicTensor<T>& g = grad[out_id];
    const auto& in_ids = im.layer_in[l];
    const BasicTensor<T>& x = *im.ptr[in_ids[0]];
    const auto& names = im.param_names[l];
    switch (layer.kind) {
      case LayerKind::kConv: {
        Conv2dParams<T> p;
        p.weight = &store.at(names[0]).value;
        p.bias = layer.conv.bias ? &store.at(names[1]).value : nullptr;
        p.stride = layer.conv.stride;
        p.padding = layer.conv.padding;
        p.groups = layer.conv.groups;
        const bool need_x = wants(in_ids[0]);
        auto r = conv2d_backward(x, p, g, need_x, im.conv_ws[l]);
        accumulate(out.params[names[0]], std::move(r.grad_weight));
        if (layer.conv.bias) accumulate(out.params[names[1]], std::move(r.grad_bias));
        if (need_x) accumulate(grad[in_ids[0]], std::move(r.grad_x));
        break;
      }
      case LayerKind::kBatchNorm: {
        BatchNormParams<T> p;
        p.gamma = &store.at(names[0]).value;
        p.beta = &store.at(names[1]).value;
        p.eps = layer.bn.eps;
        p.momentum = layer.bn.momentum;
        p.mode = im.bn_cache[l].mode;
        auto r = batchnorm_backward(x, p, im.bn_cache[l], g);
        accumulate(out.params[names[0]], std::move(r.grad_gamma));
        accumulate(out.params[names[1]], std::move(r.grad_beta));
        if (wants(in_ids[0])) accumulate(grad[in_ids[0]], std::move(r.grad_x));
        break;
      }
      case LayerKind::kRelu:
        if (wants(in_ids[0])) accumulate(grad[in_ids[0]], relu_backward(x, g));
        break;
      case LayerKind::kSigmoid:
        if (wants(in_ids[0])) accumulate(grad[in_ids[0]], sigmoid_backward(*im.ptr[out_id], g));
        break;
      case LayerKind::kGlobalAvgPool:
        if (wants(in_ids[0])) accumulate(grad[in_ids[0]], global_avg_pool_backward(x.shape(), g));
        break;
      case LayerKind::kUpsample:
        if (wants(in_ids[0]))
          accumulate(grad[in_ids[0]], bilinear_upsample_backward(g, layer.factor, x.shape()));
        break;
      case LayerKind::kConcat: {
        const Shape& s = g.shape();
        const std::int64_t hw = s.spatial();
        std::int64_t c0 = 0;
        for (int id : in_ids) {
          const Shape ps = im.ptr[id]->shape();
          if (wants(id)) {
            BasicTensor<T> part(ps);
            for (std::int64_t n = 0; n < s.n; ++n) {
              const T* src = g.ptr() + (n * s.c + c0) * hw;
              std::copy(src, src + ps.c * hw, part.ptr() + n * ps.c * hw);
            }
            accumulate(grad[id], std::move(part));
          }
          c0 += ps.c;
        }
        break;
      }
      case LayerKind::kAdd: {
        const BasicTensor<T>& b = *im.ptr[in_ids[1]];
        if (wants(in_ids[0])) accumulate(grad[in_ids[0]], BasicTensor<T>(g));
        if (wants(in_ids[1])) accumulate(grad[in_ids[1]], reduce_to(g, b.shape()));
        break;
      }
      case LayerKind::kMul: {
        const BasicTensor<T>& b = *im.ptr[in_ids[1]];
        if (wants(in_ids[0])) accumulate(grad[in_ids[0]], product(g, b));
        if (wants(in_ids[1])) accumulate(grad[in_ids[1]], reduce_to(product(g, x), b.shape()));
        break;
      }
    }
    grad[out_id] = BasicTensor<T>();
  }

  // Parameters the seeds never reached get explicit zeros.
  for (const auto& names : im.param_names) {
    for (const auto& name : names) {
      const auto& e = store.at(name);
      if (e.trainable && !out.params.count(name)) out.params.emplace(name, zeros<T>(e.value.shape()));
    }
  }
  if (want_input_grads)
    for (std::size_t i = 0; i < graph_.inputs.size(); ++i) {
      const int id = im.input_ids[i];
      if (!grad[id].empty()) out.inputs.emplace(graph_.inputs[i], std::move(grad[id]));
      else out.inputs.emplace(graph_.inputs[i], zeros<T>(im.ptr[id]->shape()));
    }
  return out;
}

template <typename T>
ForwardBackwardResult<T> forward_backward(const Graph& graph, BasicParamStore<T>& store,
                                          const std::map<std::string, const BasicTensor<T>*>& inputs,
                                          const std::vector<std::string>& outputs,
                                          const LossFn<T>& loss_fn, bool want_input_grads) {
  Executor<T> ex(graph);
  ex.forward(store, inputs, Mode::kTrain, outputs);
  std::map<std::string, const BasicTensor<T>*> produced;
  for (const auto& o : outputs) produced[o] = &ex.value(o);
  LossSeeds<T> seeds = loss_fn(produced);
  ForwardBackwardResult<T> r;
  r.loss = seeds.loss;
  r.grads = ex.backward(store, seeds.seeds, want_input_grads);
  return r;
}

#define BISENET_INSTANTIATE(T)                                                                        \
  template class Executor<T>;                                                                        \
  template ForwardBackwardResult<T> forward_backward<T>(                                             \
      const Graph&, BasicParamStore<T>&, const std::map<std::string, const BasicTensor<T>*>&,         \
      const std::vector<std::string>&, const LossFn<T>&, bool);

BISENET_INSTANTIATE(float)
BISENET_INSTANTIATE(double)

}  // namespace bisenet
