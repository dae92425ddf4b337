#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bisenet/tensor.hpp"

namespace bisenet {

// Rows are ground truth, columns prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::int64_t num_classes);

  // Pixels whose ground truth is `ignore_index` are skipped. Other values
  // outside [0, C) throw kData.
  void add(const LabelMap& truth, const LabelMap& pred, std::int32_t ignore_index = kIgnoreLabel);
  void add_pixel(std::int32_t truth, std::int32_t pred);

  std::int64_t num_classes() const { return c_; }
  std::int64_t at(std::int64_t truth, std::int64_t pred) const { return counts_[static_cast<std::size_t>(truth * c_ + pred)]; }
  std::int64_t total() const;
  const std::vector<std::int64_t>& counts() const { return counts_; }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::int64_t c_;
  std::vector<std::int64_t> counts_;
};

struct MiouResult {
  std::vector<std::optional<double>> iou;  // absent for classes with empty union
  std::optional<double> mean_iou;          // absent when no class has a union
  std::optional<double> pixel_accuracy;    // absent for an empty matrix
};

MiouResult miou(const ConfusionMatrix& cm);

}  // namespace bisenet
