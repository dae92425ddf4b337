#pragma once

// Training samples, the scale / flip / crop / mean augmentation pipeline
// and the synthetic shapes dataset.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bisenet/tensor.hpp"

namespace bisenet {

struct Sample {
  Tensor image;    // (1, 3, h, w), 0..255 before mean subtraction
  LabelMap label;  // (1, h, w)
};

struct AugmentConfig {
  std::array<double, 3> mean{123.68, 116.78, 103.94};
  double hflip_prob = 0.5;
  std::vector<double> scales{0.75, 1.0, 1.5, 1.75, 2.0};
  std::int64_t crop_h = 64;
  std::int64_t crop_w = 64;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

// Half-pixel bilinear resize of an image to (h, w), edge clamped.
Tensor resize_bilinear(const Tensor& image, std::int64_t h, std::int64_t w);
// Nearest-neighbour resize of a label map (source index floor((d + 0.5) * in / out)).
LabelMap resize_nearest(const LabelMap& labels, std::int64_t h, std::int64_t w);
void hflip(Sample& s);

// scale (uniform pick from cfg.scales) -> horizontal flip -> random crop,
// padding short sides with the mean / ignore label -> mean subtraction.
// Random draws happen in a fixed order whether or not they are used.
Sample augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng);

// Per-sample stream so serial and parallel loading agree.
Sample augment_indexed(const Sample& sample, const AugmentConfig& cfg, std::uint64_t sample_index,
                       std::uint64_t epoch = 0);

// Mean subtraction only (inference preprocessing).
Tensor normalize_image(const Tensor& image, const std::array<double, 3>& mean);

// Shape placement ranges of the synthetic set, exposed for statistics checks.
struct SynthGeometry {
  double rect_min = 1.0 / 6.0;    // side as a fraction of the image extent
  double rect_max = 1.0 / 3.0;
  double radius_min = 1.0 / 8.0;  // radius as a fraction of min(h, w)
  double radius_max = 1.0 / 5.0;
};

// Background is class 0. Class c >= 1 is a rectangle when c is odd and a
// disc when c is even; each scene draws one shape per class in class order
// (later shapes cover earlier ones). Colours are per class with per-sample
// jitter and pixel noise.
std::vector<Sample> synth_shapes(std::int64_t count, std::int64_t h, std::int64_t w, std::int64_t num_classes,
                                 std::uint64_t seed, const SynthGeometry& geo = {});

// Images and labels listed in a manifest.
std::vector<Sample> load_dataset(const std::string& manifest_path);

// Stacks samples into a batch; all must share one size.
Tensor stack_images(const std::vector<Sample>& samples);
LabelMap stack_labels(const std::vector<Sample>& samples);

}  // namespace bisenet
