#pragma once

// Static cost accounting (parameters, multiply-accumulates, FLOPs) over a
// layer graph, plus an instrumented interpreter that counts the same
// quantities while actually executing the graph.
//
// Per-layer convention (N = output elements unless noted):
//   conv      params c_out*(c_in/g)*k*k (+c_out bias); MACs c_out*(c_in/g)*k*k*h_out*w_out*n,
//             padded taps included; FLOPs 2*MACs (bias adds not counted)
//   bn        params 2c (running statistics are buffers); MACs N; FLOPs 2N
//   relu      FLOPs N            sigmoid  FLOPs 4N (negate, exp, add, divide)
//   gap       FLOPs input elements + n*c (sums, then one divide per channel)
//   upsample  MACs 4N; FLOPs 8N  add, mul  FLOPs N      concat  0

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bisenet/graph.hpp"

namespace bisenet {

enum class CountConvention {
  kAll,       // every layer kind
  kConvOnly,  // convolutions only
};

struct CostRow {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  Shape output;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t flops = 0;

  friend bool operator==(const CostRow&, const CostRow&) = default;
};

struct CostTotals {
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t flops = 0;

  friend bool operator==(const CostTotals&, const CostTotals&) = default;
};

struct CostReport {
  std::vector<CostRow> rows;
  CostTotals totals;
  std::map<std::string, Shape> inputs;
  CountConvention convention = CountConvention::kAll;
  std::string note;  // free text, e.g. padding applied to the nominal size

  std::string to_json() const;
  // Per-layer table followed by a summary row in the Method / BaseModel /
  // FLOPS / Parameters layout.
  std::string to_text(const std::string& method = "BiSeNet", const std::string& base_model = "Xception39") const;
};

// Throws kAnalysis for malformed layers.
CostRow count_layer(const LayerSpec& layer, const std::vector<Shape>& inputs,
                    CountConvention convention = CountConvention::kAll);

// Graphs without layers report zero totals.
CostReport count_model(const Graph& graph, const std::map<std::string, Shape>& inputs,
                       CountConvention convention = CountConvention::kAll);
// Single-input convenience.
CostReport count_model(const Graph& graph, const Shape& input, CountConvention convention = CountConvention::kAll);

struct VerifyReport {
  bool ok = true;
  std::vector<std::string> discrepancies;  // one line per mismatching row
  std::vector<CostRow> counted;            // rows observed by the interpreter
};

// Executes the graph `trials` times on random inputs and random parameters
// with naive loops that increment counters as they go, then compares every
// row against count_model. Intended for small shapes.
VerifyReport verify_counts(const Graph& graph, const std::map<std::string, Shape>& inputs, int trials,
                           std::uint64_t seed = 1);

// Random well-formed graph over every layer kind, for fuzzing the counters.
struct FuzzGraph {
  Graph graph;
  std::map<std::string, Shape> inputs;
};
FuzzGraph random_graph(Rng& rng, int max_layers = 12);

}  // namespace bisenet
