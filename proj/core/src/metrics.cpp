#include "bisenet/metrics.hpp"

#include <string>

namespace bisenet {

ConfusionMatrix::ConfusionMatrix(std::int64_t num_classes) : c_(num_classes) {
  if (num_classes < 1) fail(ErrorKind::kArgument, "confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(num_classes * num_classes), 0);
}

void ConfusionMatrix::add_pixel(std::int32_t truth, std::int32_t pred) {
  if (truth < 0 || truth >= c_ || pred < 0 || pred >= c_)
    fail(ErrorKind::kData, "class pair (" + std::to_string(truth) + ", " + std::to_string(pred) + ") out of range");
  ++counts_[static_cast<std::size_t>(truth * c_ + pred)];
}

void ConfusionMatrix::add(const LabelMap& truth, const LabelMap& pred, std::int32_t ignore_index) {
  if (truth.n != pred.n || truth.h != pred.h || truth.w != pred.w)
    fail(ErrorKind::kShape, "truth and prediction maps differ in size");
  for (std::size_t i = 0; i < truth.data.size(); ++i) {
    if (truth.data[i] == ignore_index) continue;
    add_pixel(truth.data[i], pred.data[i]);
  }
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (auto v : counts_) t += v;
  return t;
}

MiouResult miou(const ConfusionMatrix& cm) {
  const std::int64_t c = cm.num_classes();
  MiouResult r;
  r.iou.resize(static_cast<std::size_t>(c));
  std::int64_t trace = 0;
  double sum = 0.0;
  std::int64_t present = 0;
  for (std::int64_t k = 0; k < c; ++k) {
    std::int64_t row = 0;
    std::int64_t col = 0;
    for (std::int64_t j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::int64_t tp = cm.at(k, k);
    trace += tp;
    const std::int64_t uni = row + col - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.iou[static_cast<std::size_t>(k)] = iou;
    sum += iou;
    ++present;
  }
  if (present > 0) r.mean_iou = sum / static_cast<double>(present);
  if (const auto total = cm.total(); total > 0)
    r.pixel_accuracy = static_cast<double>(trace) / static_cast<double>(total);
  return r;
}

}  // namespace bisenet
