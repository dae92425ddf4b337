#include "bisenet/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace bisenet {

namespace {

std::int64_t numel(const Shape& s) { return s.n * s.c * s.h * s.w; }

}  // namespace

CostRow count_layer(const LayerSpec& layer, const std::vector<Shape>& inputs, CountConvention convention) {
  CostRow row;
  row.name = layer.name;
  row.kind = layer.kind;
  try {
    row.output = infer_layer_shape(layer, inputs);
  } catch (const Error& e) {
    fail(ErrorKind::kAnalysis, std::string("cannot count layer: ") + e.what());
  }
  const std::int64_t out = numel(row.output);
  if (convention == CountConvention::kConvOnly && layer.kind != LayerKind::kConv) return row;
  switch (layer.kind) {
    case LayerKind::kConv: {
      const auto& a = layer.conv;
      if (a.groups < 1 || a.in_channels % a.groups != 0)
        fail(ErrorKind::kAnalysis, "layer '" + layer.name + "': bad group count");
      const std::int64_t per_output = (a.in_channels / a.groups) * a.kernel * a.kernel;
      row.params = a.out_channels * per_output + (a.bias ? a.out_channels : 0);
      row.macs = per_output * out;
      row.flops = 2 * row.macs;
      break;
    }
    case LayerKind::kBatchNorm:
      row.params = 2 * layer.bn.channels;
      row.macs = out;
      row.flops = 2 * out;
      break;
    case LayerKind::kRelu: row.flops = out; break;
    case LayerKind::kSigmoid: row.flops = 4 * out; break;
    case LayerKind::kGlobalAvgPool: row.flops = numel(inputs[0]) + out; break;
    case LayerKind::kUpsample:
      row.macs = 4 * out;
      row.flops = 8 * out;
      break;
    case LayerKind::kAdd:
    case LayerKind::kMul: row.flops = out; break;
    case LayerKind::kConcat: break;
  }
  return row;
}

CostReport count_model(const Graph& graph, const std::map<std::string, Shape>& inputs,
                       CountConvention convention) {
  CostReport r;
  r.inputs = inputs;
  r.convention = convention;
  if (graph.layers.empty()) return r;
  std::map<std::string, Shape> shapes;
  for (const auto& name : graph.inputs) {
    auto it = inputs.find(name);
    if (it == inputs.end()) fail(ErrorKind::kAnalysis, "input '" + name + "' has no shape");
    shapes[name] = it->second;
  }
  for (std::size_t i : graph.topological_order()) {
    const auto& layer = graph.layers[i];
    std::vector<Shape> in;
    for (const auto& v : layer.inputs) in.push_back(shapes.at(v));
    CostRow row = count_layer(layer, in, convention);
    shapes[layer.output] = row.output;
    if (convention == CountConvention::kConvOnly && layer.kind != LayerKind::kConv) continue;
    r.totals.params += row.params;
    r.totals.macs += row.macs;
    r.totals.flops += row.flops;
    r.rows.push_back(std::move(row));
  }
  return r;
}

CostReport count_model(const Graph& graph, const Shape& input, CountConvention convention) {
  if (graph.layers.empty()) return count_model(graph, std::map<std::string, Shape>{}, convention);
  if (graph.inputs.size() != 1) fail(ErrorKind::kAnalysis, "graph does not have exactly one input");
  return count_model(graph, std::map<std::string, Shape>{{graph.inputs.front(), input}}, convention);
}

std::string CostReport::to_json() const {
  nlohmann::ordered_json j;
  j["convention"] = convention == CountConvention::kAll ? "all" : "conv_only";
  auto& ins = j["inputs"];
  ins = nlohmann::ordered_json::object();
  for (const auto& [name, s] : inputs) ins[name] = {s.n, s.c, s.h, s.w};
  if (!note.empty()) j["note"] = note;
  auto& rs = j["rows"];
  rs = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json o;
    o["name"] = row.name;
    o["kind"] = std::string(to_string(row.kind));
    o["output"] = {row.output.n, row.output.c, row.output.h, row.output.w};
    o["params"] = row.params;
    o["macs"] = row.macs;
    o["flops"] = row.flops;
    rs.push_back(std::move(o));
  }
  j["totals"] = {{"params", totals.params}, {"macs", totals.macs}, {"flops", totals.flops}};
  return j.dump(2) + "\n";
}

namespace {

std::string human(std::int64_t v, const char* unit_g, const char* unit_m) {
  char buf[64];
  if (v >= 1'000'000'000) std::snprintf(buf, sizeof buf, "%.3f%s", static_cast<double>(v) / 1e9, unit_g);
  else std::snprintf(buf, sizeof buf, "%.3f%s", static_cast<double>(v) / 1e6, unit_m);
  return buf;
}

}  // namespace

std::string CostReport::to_text(const std::string& method, const std::string& base_model) const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-40s %-9s %-20s %12s %15s %15s\n", "layer", "kind", "output", "params", "MACs",
                "FLOPs");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-40s %-9s %-20s %12lld %15lld %15lld\n", r.name.c_str(),
                  std::string(to_string(r.kind)).c_str(), r.output.str().c_str(), static_cast<long long>(r.params),
                  static_cast<long long>(r.macs), static_cast<long long>(r.flops));
    os << line;
  }
  std::snprintf(line, sizeof line, "%-40s %-9s %-20s %12lld %15lld %15lld\n", "total", "", "",
                static_cast<long long>(totals.params), static_cast<long long>(totals.macs),
                static_cast<long long>(totals.flops));
  os << line << '\n';
  if (!note.empty()) os << "note: " << note << "\n\n";
  std::snprintf(line, sizeof line, "%-12s %-12s %-12s %-12s %-12s\n", "Method", "BaseModel", "FLOPS", "MACs",
                "Parameters");
  os << line;
  std::snprintf(line, sizeof line, "%-12s %-12s %-12s %-12s %-12s\n", method.c_str(), base_model.c_str(),
                human(totals.flops, "G", "M").c_str(), human(totals.macs, "G", "M").c_str(),
                human(totals.params, "B", "M").c_str());
  os << line;
  return os.str();
}

// ---------------------------------------------------------------------------
// Instrumented interpreter

namespace {

struct Value {
  Shape shape;
  std::vector<double> data;
  double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data[static_cast<std::size_t>(((n * shape.c + c) * shape.h + h) * shape.w + w)];
  }
  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data[static_cast<std::size_t>(((n * shape.c + c) * shape.h + h) * shape.w + w)];
  }
};

Value make(const Shape& s) { return Value{s, std::vector<double>(static_cast<std::size_t>(numel(s)), 0.0)}; }

std::vector<double> random_values(Rng& rng, std::int64_t count) {
  std::vector<double> v(static_cast<std::size_t>(count));
  for (auto& x : v) x = rng.normal();
  return v;
}

CostRow interpret(const LayerSpec& layer, const std::vector<const Value*>& in, Value& out, Rng& rng) {
  CostRow row;
  row.name = layer.name;
  row.kind = layer.kind;
  const Value& x = *in[0];
  const Shape& s = x.shape;
  switch (layer.kind) {
    case LayerKind::kConv: {
      const auto& a = layer.conv;
      const std::int64_t cin_g = a.in_channels / a.groups;
      const std::int64_t cout_g = a.out_channels / a.groups;
      const auto weight = random_values(rng, a.out_channels * cin_g * a.kernel * a.kernel);
      const auto bias = a.bias ? random_values(rng, a.out_channels) : std::vector<double>{};
      row.params = static_cast<std::int64_t>(weight.size() + bias.size());
      const std::int64_t ho = (s.h + 2 * a.padding - a.kernel) / a.stride + 1;
      const std::int64_t wo = (s.w + 2 * a.padding - a.kernel) / a.stride + 1;
      out = make(Shape{s.n, a.out_channels, ho, wo});
      for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t co = 0; co < a.out_channels; ++co) {
          const std::int64_t g = co / cout_g;
          for (std::int64_t oy = 0; oy < ho; ++oy)
            for (std::int64_t ox = 0; ox < wo; ++ox) {
              double acc = a.bias ? bias[static_cast<std::size_t>(co)] : 0.0;
              for (std::int64_t ci = 0; ci < cin_g; ++ci)
                for (int ky = 0; ky < a.kernel; ++ky)
                  for (int kx = 0; kx < a.kernel; ++kx) {
                    const std::int64_t iy = oy * a.stride - a.padding + ky;
                    const std::int64_t ix = ox * a.stride - a.padding + kx;
                    const bool inside = iy >= 0 && iy < s.h && ix >= 0 && ix < s.w;
                    const double v = inside ? x.at(n, g * cin_g + ci, iy, ix) : 0.0;
                    acc += weight[static_cast<std::size_t>(((co * cin_g + ci) * a.kernel + ky) * a.kernel + kx)] * v;
                    ++row.macs;
                    row.flops += 2;
                  }
              out.at(n, co, oy, ox) = acc;
            }
        }
      break;
    }
    case LayerKind::kBatchNorm: {
      const auto gamma = random_values(rng, s.c);
      const auto beta = random_values(rng, s.c);
      row.params = 2 * s.c;
      out = make(s);
      for (std::int64_t c = 0; c < s.c; ++c) {
        // Folded affine form y = x * scale + shift with frozen statistics.
        const double scale = gamma[static_cast<std::size_t>(c)];
        const double shift = beta[static_cast<std::size_t>(c)];
        for (std::int64_t n = 0; n < s.n; ++n)
          for (std::int64_t i = 0; i < s.h * s.w; ++i) {
            out.at(n, c, 0, i) = x.at(n, c, 0, i) * scale + shift;
            ++row.macs;
            row.flops += 2;
          }
      }
      break;
    }
    case LayerKind::kRelu:
      out = make(s);
      for (std::size_t i = 0; i < x.data.size(); ++i) {
        out.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
        ++row.flops;
      }
      break;
    case LayerKind::kSigmoid:
      out = make(s);
      for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double neg = -x.data[i];
        const double e = std::exp(neg);
        const double d = 1.0 + e;
        out.data[i] = 1.0 / d;
        row.flops += 4;
      }
      break;
    case LayerKind::kGlobalAvgPool:
      out = make(Shape{s.n, s.c, 1, 1});
      for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c) {
          double sum = 0.0;
          for (std::int64_t i = 0; i < s.h * s.w; ++i) {
            sum += x.at(n, c, 0, i);
            ++row.flops;
          }
          out.at(n, c, 0, 0) = sum / static_cast<double>(s.h * s.w);
          ++row.flops;
        }
      break;
    case LayerKind::kUpsample: {
      const int f = layer.factor;
      out = make(Shape{s.n, s.c, s.h * f, s.w * f});
      const auto tap = [&](std::int64_t d, std::int64_t extent, std::int64_t& i0, std::int64_t& i1, double& fr) {
        const double src = std::clamp((static_cast<double>(d) + 0.5) / f - 0.5, 0.0, static_cast<double>(extent - 1));
        i0 = static_cast<std::int64_t>(std::floor(src));
        i1 = std::min(i0 + 1, extent - 1);
        fr = src - static_cast<double>(i0);
      };
      for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
          for (std::int64_t y = 0; y < s.h * f; ++y)
            for (std::int64_t xx = 0; xx < s.w * f; ++xx) {
              std::int64_t y0, y1, x0, x1;
              double fy, fx;
              tap(y, s.h, y0, y1, fy);
              tap(xx, s.w, x0, x1, fx);
              const double w[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
              const double v[4] = {x.at(n, c, y0, x0), x.at(n, c, y0, x1), x.at(n, c, y1, x0), x.at(n, c, y1, x1)};
              double acc = 0.0;
              for (int k = 0; k < 4; ++k) {
                acc += w[k] * v[k];
                ++row.macs;
                row.flops += 2;
              }
              out.at(n, c, y, xx) = acc;
            }
      break;
    }
    case LayerKind::kConcat: {
      Shape os = s;
      os.c = 0;
      for (const auto* v : in) os.c += v->shape.c;
      out = make(os);
      for (std::int64_t n = 0; n < s.n; ++n) {
        std::int64_t c0 = 0;
        for (const auto* v : in) {
          for (std::int64_t c = 0; c < v->shape.c; ++c)
            for (std::int64_t i = 0; i < s.h * s.w; ++i) out.at(n, c0 + c, 0, i) = v->at(n, c, 0, i);
          c0 += v->shape.c;
        }
      }
      break;
    }
    case LayerKind::kAdd:
    case LayerKind::kMul: {
      const Value& b = *in[1];
      const bool bcast = !(b.shape == s);
      out = make(s);
      for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
          for (std::int64_t i = 0; i < s.h * s.w; ++i) {
            const double bv = bcast ? b.at(n, c, 0, 0) : b.at(n, c, 0, i);
            out.at(n, c, 0, i) = layer.kind == LayerKind::kAdd ? x.at(n, c, 0, i) + bv : x.at(n, c, 0, i) * bv;
            ++row.flops;
          }
      break;
    }
  }
  row.output = out.shape;
  return row;
}

}  // namespace

VerifyReport verify_counts(const Graph& graph, const std::map<std::string, Shape>& inputs, int trials,
                           std::uint64_t seed) {
  const CostReport expected = count_model(graph, inputs);
  VerifyReport report;
  for (int t = 0; t < std::max(trials, 1); ++t) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(t));
    std::map<std::string, Value> values;
    for (const auto& name : graph.inputs) {
      const Shape& s = inputs.at(name);
      values[name] = Value{s, random_values(rng, numel(s))};
    }
    std::vector<CostRow> rows;
    if (!graph.layers.empty())
      for (std::size_t i : graph.topological_order()) {
        const auto& layer = graph.layers[i];
        std::vector<const Value*> in;
        for (const auto& v : layer.inputs) in.push_back(&values.at(v));
        Value out;
        rows.push_back(interpret(layer, in, out, rng));
        values[layer.output] = std::move(out);
      }
    if (rows.size() != expected.rows.size()) {
      report.ok = false;
      report.discrepancies.push_back("row count " + std::to_string(rows.size()) + " vs " +
                                     std::to_string(expected.rows.size()));
    } else {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& a = rows[i];
        const auto& e = expected.rows[i];
        if (a == e) continue;
        report.ok = false;
        report.discrepancies.push_back("trial " + std::to_string(t) + " row '" + e.name + "': counted params " +
                                       std::to_string(a.params) + " macs " + std::to_string(a.macs) + " flops " +
                                       std::to_string(a.flops) + ", static params " + std::to_string(e.params) +
                                       " macs " + std::to_string(e.macs) + " flops " + std::to_string(e.flops));
      }
    }
    if (t == 0) report.counted = std::move(rows);
  }
  return report;
}

// ---------------------------------------------------------------------------

FuzzGraph random_graph(Rng& rng, int max_layers) {
  FuzzGraph fg;
  struct Known {
    std::string name;
    Shape shape;
  };
  std::vector<Known> values;
  const Shape in{static_cast<std::int64_t>(1 + rng.below(2)), static_cast<std::int64_t>(1 + rng.below(4)),
                 static_cast<std::int64_t>(3 + rng.below(10)), static_cast<std::int64_t>(3 + rng.below(10))};
  fg.graph.inputs.push_back("x");
  fg.inputs["x"] = in;
  values.push_back({"x", in});

  const int layers = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(max_layers, 1))));
  for (int l = 0; l < layers; ++l) {
    LayerSpec s;
    s.name = "l" + std::to_string(l);
    s.output = s.name;
    const Known& src = values[rng.below(values.size())];
    const Shape& xs = src.shape;
    s.inputs = {src.name};
    const auto kind = rng.below(9);
    switch (kind) {
      case 0: {
        s.kind = LayerKind::kConv;
        auto& a = s.conv;
        a.in_channels = xs.c;
        const int kernels[] = {1, 3, 5};
        a.kernel = kernels[rng.below(3)];
        a.stride = 1 + static_cast<int>(rng.below(2));
        a.padding = static_cast<int>(rng.below(static_cast<std::uint64_t>(a.kernel / 2 + 1)));
        if (xs.h + 2 * a.padding < a.kernel || xs.w + 2 * a.padding < a.kernel) a.padding = a.kernel / 2;
        if (xs.c > 1 && rng.below(3) == 0) {
          a.groups = static_cast<int>(xs.c);
          a.out_channels = xs.c;
        } else {
          a.groups = 1;
          a.out_channels = 1 + static_cast<std::int64_t>(rng.below(6));
        }
        a.bias = rng.below(2) == 1;
        break;
      }
      case 1:
        s.kind = LayerKind::kBatchNorm;
        s.bn.channels = xs.c;
        break;
      case 2: s.kind = LayerKind::kRelu; break;
      case 3: s.kind = LayerKind::kSigmoid; break;
      case 4: s.kind = LayerKind::kGlobalAvgPool; break;
      case 5:
        s.kind = LayerKind::kUpsample;
        s.factor = xs.h * xs.w > 64 ? 1 : 1 + static_cast<int>(rng.below(3));
        break;
      default: {
        // Binary layers need a partner with compatible shape.
        std::vector<const Known*> partners;
        for (const auto& v : values) {
          const Shape& p = v.shape;
          if (kind == 6 && p.n == xs.n && p.h == xs.h && p.w == xs.w) partners.push_back(&v);
          if (kind >= 7 && broadcastable(xs, p)) partners.push_back(&v);
        }
        if (partners.empty()) {
          s.kind = LayerKind::kRelu;
          break;
        }
        const Known* other = partners[rng.below(partners.size())];
        s.kind = kind == 6 ? LayerKind::kConcat : (kind == 7 ? LayerKind::kAdd : LayerKind::kMul);
        s.inputs.push_back(other->name);
        break;
      }
    }
    std::vector<Shape> in_shapes;
    for (const auto& v : s.inputs)
      for (const auto& k : values)
        if (k.name == v) in_shapes.push_back(k.shape);
    const Shape out = infer_layer_shape(s, in_shapes);
    values.push_back({s.output, out});
    fg.graph.layers.push_back(std::move(s));
  }
  return fg;
}

}  // namespace bisenet
