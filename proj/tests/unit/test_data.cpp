#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <set>

#include "bisenet/data.hpp"
#include "bisenet/image_io.hpp"
#include "oracles.hpp"

using namespace bisenet;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

std::uint64_t format_offset(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
    return e.byte_offset().value_or(~0ULL);
  }
  FAIL("no format error");
  return 0;
}

Sample ramp(std::int64_t h, std::int64_t w) {
  Sample s{Tensor(Shape{1, 3, h, w}), LabelMap(1, h, w)};
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) s.image.at(0, c, y, x) = static_cast<float>((c * 50 + y * 7 + x * 3) % 256);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) s.label.at(0, y, x) = static_cast<std::int32_t>((x / 3 + y) % 4);
  return s;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("binary ppm decodes channel planes") {
    std::string file = "P6\n2 1\n255\n";
    file += std::string{'\xff', '\0', '\0', '\0', '\0', '\xff'};
    const auto img = decode_ppm(bytes_of(file));
    CHECK(img.shape() == Shape{1, 3, 1, 2});
    CHECK(img.at(0, 0, 0, 0) == 255.0f);
    CHECK(img.at(0, 1, 0, 0) == 0.0f);
    CHECK(img.at(0, 2, 0, 1) == 255.0f);
    CHECK(img.at(0, 0, 0, 1) == 0.0f);
    CHECK(encode_ppm(img) == bytes_of(file));
  }

  TEST_CASE("header comments are skipped") {
    std::string file = "P5\n# comment\n3 1\n# more\n255\n";
    file += std::string{'\1', '\2', '\3'};
    const auto l = decode_pgm(bytes_of(file));
    CHECK(l.data == std::vector<std::int32_t>{1, 2, 3});
  }

  TEST_CASE("malformed headers are format errors with offsets") {
    CHECK(format_offset([] { decode_ppm(bytes_of("P3\n1 1\n255\n0 0 0\n")); }) == 0);
    CHECK(format_offset([] { decode_ppm(bytes_of("P6\nx 1\n255\n")); }) == 3);
    CHECK(format_offset([] { decode_ppm(bytes_of("P6\n1 1\n65535\n")); }) == 7);
    CHECK(format_offset([] { decode_ppm(bytes_of("P6\n2 2\n255\nabc")); }) == 14);
    CHECK(format_offset([] { decode_pgm(bytes_of("P6\n1 1\n255\nabc")); }) == 0);
  }

  TEST_CASE("ppm and pgm files round trip") {
    const auto dir = fs::temp_directory_path() / "bisenet_data_test";
    fs::create_directories(dir);
    const auto s = ramp(5, 7);
    write_ppm(s.image, (dir / "a.ppm").string());
    write_pgm(s.label, (dir / "a.pgm").string());
    CHECK(read_ppm((dir / "a.ppm").string()) == s.image);
    CHECK(read_pgm((dir / "a.pgm").string()) == s.label);
    write_manifest({{"a.ppm", "a.pgm"}, {"a.ppm", "a.pgm"}}, (dir / "list.txt").string());
    const auto set = load_dataset((dir / "list.txt").string());
    REQUIRE(set.size() == 2);
    CHECK(set[1].image == s.image);
    const auto batch = stack_images(set);
    CHECK(batch.shape() == Shape{2, 3, 5, 7});
    CHECK(stack_labels(set).n == 2);
    LabelMap big(1, 1, 1, 300);
    CHECK_THROWS_AS(write_pgm(big, (dir / "b.pgm").string()), Error);
    fs::remove_all(dir);
  }

  TEST_CASE("identity augmentation only subtracts the mean") {
    const auto s = ramp(8, 6);
    AugmentConfig cfg;
    cfg.scales = {1.0};
    cfg.hflip_prob = 0.0;
    cfg.crop_h = 8;
    cfg.crop_w = 6;
    Rng rng(1);
    const auto out = augment(s, cfg, rng);
    CHECK(out.label == s.label);
    CHECK(out.image == normalize_image(s.image, cfg.mean));
    for (std::int64_t i = 0; i < 5; ++i) {
      const auto a = augment_indexed(s, cfg, static_cast<std::uint64_t>(i), 3);
      CHECK(a.label == s.label);
    }
  }

  TEST_CASE("flipping twice is the identity") {
    auto s = ramp(4, 5);
    const auto orig = s;
    hflip(s);
    CHECK(s.label.at(0, 1, 0) == orig.label.at(0, 1, 4));
    CHECK(s.image.at(0, 2, 3, 1) == orig.image.at(0, 2, 3, 3));
    hflip(s);
    CHECK(s.image == orig.image);
    CHECK(s.label == orig.label);
  }

  TEST_CASE("augmentation output has the crop size and is reproducible") {
    const auto s = ramp(20, 24);
    AugmentConfig cfg;
    cfg.crop_h = 32;
    cfg.crop_w = 16;
    for (std::uint64_t i = 0; i < 20; ++i) {
      const auto a = augment_indexed(s, cfg, i, 1);
      const auto b = augment_indexed(s, cfg, i, 1);
      CHECK(a.image.shape() == Shape{1, 3, 32, 16});
      CHECK(a.image == b.image);
      CHECK(a.label == b.label);
      for (auto v : a.label.data) CHECK(((v >= 0 && v < 4) || v == kIgnoreLabel));
    }
    AugmentConfig bad = cfg;
    bad.scales.clear();
    CHECK_THROWS_AS(bad.validate(), Error);
  }

  TEST_CASE("nearest resampling never invents classes") {
    Rng rng(3);
    for (int t = 0; t < 10; ++t) {
      LabelMap l(1, 9, 13);
      for (auto& v : l.data) v = static_cast<std::int32_t>(rng.below(3)) * 4;
      std::set<std::int32_t> before(l.data.begin(), l.data.end());
      for (auto [h, w] : {std::pair{4, 5}, std::pair{18, 26}, std::pair{7, 31}}) {
        const auto r = resize_nearest(l, h, w);
        for (auto v : r.data) CHECK(before.count(v) == 1);
      }
    }
    LabelMap l(1, 2, 2);
    l.data = {0, 1, 2, 3};
    const auto up = resize_nearest(l, 4, 4);
    CHECK(up.at(0, 0, 1) == 0);
    CHECK(up.at(0, 0, 2) == 1);
    CHECK(up.at(0, 3, 3) == 3);
  }

  TEST_CASE("bilinear resize preserves constants") {
    Tensor c(Shape{1, 3, 5, 4}, 17.0f);
    const Tensor r = resize_bilinear(c, 9, 11);
    for (float v : r.data()) CHECK(v == doctest::Approx(17.0f));
  }

  TEST_CASE("synthetic shape areas follow the placement ranges") {
    const std::int64_t n = 100, h = 64, w = 64;
    const auto set = synth_shapes(n, h, w, 3, 5);
    REQUIRE(set.size() == 100);
    std::vector<double> freq(3, 0.0);
    for (const auto& s : set)
      for (auto v : s.label.data) freq[static_cast<std::size_t>(v)] += 1.0;
    for (auto& f : freq) f /= static_cast<double>(n * h * w);
    const SynthGeometry geo;
    const double side = (geo.rect_min + geo.rect_max) / 2.0;
    const double rect = side * side;
    const double r2 = (std::pow(geo.radius_max, 3) - std::pow(geo.radius_min, 3)) /
                      (3.0 * (geo.radius_max - geo.radius_min));
    const double disc = std::numbers::pi * r2;
    INFO("rect " << freq[1] << " vs " << rect << ", disc " << freq[2] << " vs " << disc);
    CHECK(freq[1] > rect / 3.0);
    CHECK(freq[1] < rect * 3.0);
    CHECK(freq[2] > disc / 3.0);
    CHECK(freq[2] < disc * 3.0);
    CHECK(freq[0] > 0.5);
    const auto again = synth_shapes(2, h, w, 3, 5);
    CHECK(again[1].image == set[1].image);
    CHECK(synth_shapes(1, h, w, 3, 6)[0].label != set[0].label);
  }

  TEST_CASE("palette files and defaults") {
    const auto p = default_palette(25);
    CHECK(p.size() == 25);
    CHECK(default_palette(25) == p);
    const auto path = (fs::temp_directory_path() / "bisenet_palette.txt").string();
    write_file_bytes(path, bytes_of("# c r g b\n0 1 2 3\n2 255 0 9\n"));
    const auto q = read_palette(path);
    REQUIRE(q.size() == 3);
    CHECK(q[2] == Rgb{255, 0, 9});
    write_file_bytes(path, bytes_of("0 1 2\n"));
    CHECK_THROWS_AS(read_palette(path), Error);
    fs::remove(path);
  }
}
