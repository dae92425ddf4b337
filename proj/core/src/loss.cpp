#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bisenet/ops.hpp"

namespace bisenet {

namespace {

template <typename T>
void check_labels(const BasicTensor<T>& logits, const LabelMap& labels) {
  const Shape& s = logits.shape();
  if (labels.n != s.n || labels.h != s.h || labels.w != s.w)
    fail(ErrorKind::kShape, "loss: labels (" + std::to_string(labels.n) + "," + std::to_string(labels.h) +
                                "," + std::to_string(labels.w) + ") do not match logits " + s.str());
}

// Fills per-pixel loss (NaN when ignored) and, optionally, the unscaled
// softmax - onehot gradient.
template <typename T>
std::vector<double> pixel_losses(const BasicTensor<T>& logits, const LabelMap& labels,
                                 std::int32_t ignore_index, BasicTensor<T>* grad) {
  check_labels(logits, labels);
  const Shape& s = logits.shape();
  const std::int64_t hw = s.spatial();
  std::vector<double> losses(static_cast<std::size_t>(s.n * hw),
                             std::numeric_limits<double>::quiet_NaN());
  std::vector<double> prob(static_cast<std::size_t>(s.c));
  for (std::int64_t n = 0; n < s.n; ++n) {
    const T* base = logits.ptr() + n * s.c * hw;
    for (std::int64_t i = 0; i < hw; ++i) {
      const std::int32_t label = labels.data[static_cast<std::size_t>(n * hw + i)];
      if (label == ignore_index) continue;
      if (label < 0 || label >= s.c)
        fail(ErrorKind::kData, "label " + std::to_string(label) + " outside [0, " + std::to_string(s.c) +
                                   ") at pixel " + std::to_string(n * hw + i));
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t c = 0; c < s.c; ++c) mx = std::max(mx, static_cast<double>(base[c * hw + i]));
      double sum = 0.0;
      for (std::int64_t c = 0; c < s.c; ++c) {
        prob[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(base[c * hw + i]) - mx);
        sum += prob[static_cast<std::size_t>(c)];
      }
      losses[static_cast<std::size_t>(n * hw + i)] =
          std::log(sum) - (static_cast<double>(base[label * hw + i]) - mx);
      if (grad != nullptr) {
        T* g = grad->ptr() + n * s.c * hw;
        for (std::int64_t c = 0; c < s.c; ++c) {
          const double pc = prob[static_cast<std::size_t>(c)] / sum;
          g[c * hw + i] = static_cast<T>(pc - (c == label ? 1.0 : 0.0));
        }
      }
    }
  }
  return losses;
}

// Mean over the pixels flagged in `keep` (in index order), scaling the raw
// gradient by 1/count and zeroing it elsewhere.
template <typename T>
LossResult<T> reduce_kept(const std::vector<double>& losses, const std::vector<char>& keep,
                          BasicTensor<T> raw_grad) {
  LossResult<T> r;
  const Shape& s = raw_grad.shape();
  const std::int64_t hw = s.spatial();
  double sum = 0.0;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!keep[i]) continue;
    sum += losses[i];
    ++count;
  }
  r.counted = count;
  r.all_ignored = count == 0;
  r.loss = count > 0 ? sum / static_cast<double>(count) : 0.0;
  const double scale = count > 0 ? 1.0 / static_cast<double>(count) : 0.0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t i = 0; i < hw; ++i) {
      const bool kept = keep[static_cast<std::size_t>(n * hw + i)] != 0;
      for (std::int64_t c = 0; c < s.c; ++c) {
        T& g = raw_grad[(n * s.c + c) * hw + i];
        g = kept ? static_cast<T>(static_cast<double>(g) * scale) : T(0);
      }
    }
  }
  r.grad = std::move(raw_grad);
  return r;
}

}  // namespace

template <typename T>
std::vector<double> pixel_cross_entropy(const BasicTensor<T>& logits, const LabelMap& labels,
                                        std::int32_t ignore_index) {
  return pixel_losses<T>(logits, labels, ignore_index, nullptr);
}

template <typename T>
LossResult<T> softmax_ce_loss(const BasicTensor<T>& logits, const LabelMap& labels,
                              std::int32_t ignore_index) {
  BasicTensor<T> grad(logits.shape());
  const auto losses = pixel_losses(logits, labels, ignore_index, &grad);
  std::vector<char> keep(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) keep[i] = labels.data[i] != ignore_index;
  return reduce_kept(losses, keep, std::move(grad));
}

std::int64_t bootstrap_keep_count(std::int64_t valid, double keep_fraction, std::int64_t min_kept) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    fail(ErrorKind::kArgument, "bootstrap: keep_fraction must lie in (0, 1]");
  if (min_kept < 0) fail(ErrorKind::kArgument, "bootstrap: min_kept must be >= 0");
  const auto by_fraction =
      static_cast<std::int64_t>(std::ceil(keep_fraction * static_cast<double>(valid)));
  return std::min(valid, std::max(min_kept, by_fraction));
}

template <typename T>
LossResult<T> bootstrap_ce_loss(const BasicTensor<T>& logits, const LabelMap& labels,
                                double keep_fraction, std::int64_t min_kept,
                                std::int32_t ignore_index) {
  BasicTensor<T> grad(logits.shape());
  const auto losses = pixel_losses(logits, labels, ignore_index, &grad);
  std::vector<std::int64_t> valid;
  valid.reserve(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i)
    if (labels.data[i] != ignore_index) valid.push_back(static_cast<std::int64_t>(i));
  const std::int64_t keep_n =
      bootstrap_keep_count(static_cast<std::int64_t>(valid.size()), keep_fraction, min_kept);
  // NaN ranks hardest so a diverged pixel is always kept and shows up in the loss.
  const auto rank = [&](std::int64_t i) {
    const double l = losses[static_cast<std::size_t>(i)];
    return std::isnan(l) ? std::numeric_limits<double>::infinity() : l;
  };
  const auto hardest_first = [&](std::int64_t a, std::int64_t b) {
    const double la = rank(a), lb = rank(b);
    return la != lb ? la > lb : a < b;
  };
  if (keep_n < static_cast<std::int64_t>(valid.size()))
    std::nth_element(valid.begin(), valid.begin() + keep_n, valid.end(), hardest_first);
  std::vector<char> keep(losses.size(), 0);
  for (std::int64_t i = 0; i < keep_n; ++i) keep[static_cast<std::size_t>(valid[static_cast<std::size_t>(i)])] = 1;
  return reduce_kept(losses, keep, std::move(grad));
}

LabelMap downsample_labels(const LabelMap& labels, std::int64_t stride) {
  if (stride < 1) fail(ErrorKind::kArgument, "downsample_labels: stride must be >= 1");
  if (labels.h % stride != 0 || labels.w % stride != 0)
    fail(ErrorKind::kShape, "downsample_labels: extents not divisible by stride " + std::to_string(stride));
  LabelMap out(labels.n, labels.h / stride, labels.w / stride);
  const std::int64_t off = stride / 2;
  for (std::int64_t b = 0; b < out.n; ++b)
    for (std::int64_t y = 0; y < out.h; ++y)
      for (std::int64_t x = 0; x < out.w; ++x) out.at(b, y, x) = labels.at(b, y * stride + off, x * stride + off);
  return out;
}

#define BISENET_INSTANTIATE(T)                                                                 \
  template std::vector<double> pixel_cross_entropy<T>(const BasicTensor<T>&, const LabelMap&,  \
                                                      std::int32_t);                           \
  template LossResult<T> softmax_ce_loss<T>(const BasicTensor<T>&, const LabelMap&,            \
                                            std::int32_t);                                     \
  template LossResult<T> bootstrap_ce_loss<T>(const BasicTensor<T>&, const LabelMap&, double, \
                                              std::int64_t, std::int32_t);

BISENET_INSTANTIATE(float)
BISENET_INSTANTIATE(double)
#undef BISENET_INSTANTIATE

}  // namespace bisenet
