#include <functional>
#include <doctest.h>

#include "fixtures.hpp"
#include "bisenet/graph.hpp"

using namespace bisenet;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::kArgument;
}

}  // namespace

TEST_SUITE("graph") {
  TEST_CASE("builder tracks channels and names parameters") {
    GraphBuilder b;
    b.input("x", 3);
    auto v = b.conv_bn_relu("a", "x", 8, 3, 2);
    CHECK(v == "a.relu");
    CHECK(b.channels(v) == 8);
    auto g = b.gap("p", v);
    auto s = b.sigmoid("s", b.conv("q", g, 8, 1, 1, 1, true));
    b.mul("m", v, s);
    const auto& graph = b.graph();
    CHECK(graph.layers.size() == 7);
    CHECK(layer_param_names(graph.layers[0]) == std::vector<std::string>{"a.conv.weight"});
    CHECK(layer_param_names(graph.layers[1]) ==
          std::vector<std::string>{"a.bn.gamma", "a.bn.beta", "a.bn.running_mean", "a.bn.running_var"});
    CHECK(layer_param_names(graph.layers[4]) == std::vector<std::string>{"q.weight", "q.bias"});
    const auto shapes = infer_shapes(graph, {{"x", Shape{2, 3, 16, 12}}});
    CHECK(shapes.at("a.relu") == Shape{2, 8, 8, 6});
    CHECK(shapes.at("p") == Shape{2, 8, 1, 1});
    CHECK(shapes.at("m") == Shape{2, 8, 8, 6});
  }

  TEST_CASE("topological order keeps declaration order where possible") {
    Graph g;
    g.inputs = {"x"};
    LayerSpec r1 = fixture::layer("r1", LayerKind::kRelu, {"y"}, "z");
    LayerSpec r0 = fixture::layer("r0", LayerKind::kRelu, {"x"}, "y");
    LayerSpec r2 = fixture::layer("r2", LayerKind::kRelu, {"x"}, "w");
    g.layers = {r1, r0, r2};
    CHECK(g.topological_order() == std::vector<std::size_t>{1, 0, 2});
    CHECK(g.producer("z") == 0);
    CHECK(g.producer("x") == Graph::npos);
  }

  TEST_CASE("malformed graphs are graph errors") {
    CHECK(kind_of([] { Graph{}.topological_order(); }) == ErrorKind::kGraph);
    Graph cyc;
    cyc.inputs = {"x"};
    cyc.layers = {fixture::layer("a", LayerKind::kAdd, {"x", "b"}, "a"), fixture::layer("b", LayerKind::kRelu, {"a"}, "b")};
    CHECK(kind_of([&] { cyc.topological_order(); }) == ErrorKind::kGraph);
    Graph dup;
    dup.inputs = {"x"};
    dup.layers = {fixture::layer("a", LayerKind::kRelu, {"x"}, "y"), fixture::layer("b", LayerKind::kRelu, {"x"}, "y")};
    CHECK(kind_of([&] { dup.topological_order(); }) == ErrorKind::kGraph);
    Graph unbound;
    unbound.inputs = {"x"};
    unbound.layers = {fixture::layer("a", LayerKind::kRelu, {"q"}, "y")};
    CHECK(kind_of([&] { unbound.topological_order(); }) == ErrorKind::kGraph);
  }

  TEST_CASE("shape inference rejects incompatible operands") {
    LayerSpec add = fixture::layer("a", LayerKind::kAdd, {"x", "y"}, "z");
    CHECK(kind_of([&] { infer_layer_shape(add, {Shape{1, 2, 4, 4}, Shape{1, 3, 4, 4}}); }) == ErrorKind::kShape);
    CHECK(infer_layer_shape(add, {Shape{1, 2, 4, 4}, Shape{1, 2, 1, 1}}) == Shape{1, 2, 4, 4});
    LayerSpec conv = fixture::layer("c", LayerKind::kConv, {"x"}, "y");
    conv.conv = ConvAttrs{4, 8, 3, 2, 1, 1, false};
    CHECK(infer_layer_shape(conv, {Shape{1, 4, 7, 7}}) == Shape{1, 8, 4, 4});
    CHECK(kind_of([&] { infer_layer_shape(conv, {Shape{1, 5, 7, 7}}); }) == ErrorKind::kShape);
    LayerSpec cat = fixture::layer("k", LayerKind::kConcat, {"x", "y"}, "z");
    CHECK(infer_layer_shape(cat, {Shape{1, 2, 4, 4}, Shape{1, 3, 4, 4}}) == Shape{1, 5, 4, 4});
    LayerSpec up = fixture::layer("u", LayerKind::kUpsample, {"x"}, "z");
    up.factor = 8;
    CHECK(infer_layer_shape(up, {Shape{2, 3, 4, 5}}) == Shape{2, 3, 32, 40});
  }

  TEST_CASE("receptive field of stacked convolutions") {
    GraphBuilder b;
    b.input("x", 1);
    auto a = b.conv("c1", "x", 1, 3);
    auto c = b.conv("c2", a, 1, 3);
    auto d = b.conv("c3", c, 1, 3, 2);
    auto e = b.conv("c4", d, 1, 3);
    auto u = b.upsample("u", e, 2);
    auto gp = b.gap("g", u);
    const auto rf = receptive_fields(b.graph());
    CHECK(rf.at(a).size() == 3.0);
    CHECK(rf.at(c).size() == 5.0);
    CHECK(rf.at(d).size() == 7.0);
    CHECK(rf.at(d).jump == 2.0);
    CHECK(rf.at(e).size() == 11.0);
    CHECK(rf.at(a).lo == -1.0);
    CHECK_FALSE(rf.at(u).global);
    CHECK(rf.at(gp).global);
  }
}
