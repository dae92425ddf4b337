#pragma once

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "bisenet/graph.hpp"
#include "bisenet/ops.hpp"
#include "bisenet/param_store.hpp"

namespace bisenet {

template <typename T>
struct Gradients {
  std::map<std::string, BasicTensor<T>> params;  // by parameter name
  std::map<std::string, BasicTensor<T>> inputs;  // by graph input name
};

// Runs a Graph forward in topological order and backward in exact reverse
// order. Gradients of a value consumed several times are summed in the
// order its consumers are visited, which is fixed by the graph.
//
// In inference mode intermediate buffers come from a static memory plan
// built per input shape, so repeated calls with unchanged shapes do not
// allocate.
template <typename T>
class Executor {
 public:
  explicit Executor(Graph graph);
  ~Executor();
  Executor(Executor&&) noexcept;
  Executor& operator=(Executor&&) noexcept;

  const Graph& graph() const { return graph_; }

  // Computes only what the requested outputs need. Train mode keeps every
  // activation for backward and updates BN running statistics in `store`;
  // `keep` does the same for inference mode (frozen statistics).
  void forward(BasicParamStore<T>& store, const std::map<std::string, const BasicTensor<T>*>& inputs,
               Mode mode, const std::vector<std::string>& outputs, bool keep = false);

  // Value computed by the last forward (outputs always; intermediates only
  // when activations were kept).
  const BasicTensor<T>& value(const std::string& name) const;
  bool has_value(const std::string& name) const;

  // Values whose gradient is not propagated further upstream.
  void set_stop_gradient(std::set<std::string> values);

  // Seeds are d loss / d value for some computed values. Requires the last
  // forward to have kept its activations.
  Gradients<T> backward(const BasicParamStore<T>& store,
                        const std::map<std::string, BasicTensor<T>>& seeds,
                        bool want_input_grads = false);

 private:
  struct Impl;
  Graph graph_;
  std::unique_ptr<Impl> impl_;
};

// Outcome of a loss callback: scalar loss plus d loss / d output.
template <typename T>
struct LossSeeds {
  double loss = 0.0;
  std::map<std::string, BasicTensor<T>> seeds;
};

template <typename T>
using LossFn = std::function<LossSeeds<T>(const std::map<std::string, const BasicTensor<T>*>&)>;

template <typename T>
struct ForwardBackwardResult {
  double loss = 0.0;
  Gradients<T> grads;
};

// One train-mode forward/backward over `outputs` with a caller-defined loss.
template <typename T>
ForwardBackwardResult<T> forward_backward(const Graph& graph, BasicParamStore<T>& store,
                                          const std::map<std::string, const BasicTensor<T>*>& inputs,
                                          const std::vector<std::string>& outputs,
                                          const LossFn<T>& loss_fn, bool want_input_grads = false);

}  // namespace bisenet
