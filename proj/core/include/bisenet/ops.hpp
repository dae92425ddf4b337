#pragma once

// Forward and backward kernels for every layer primitive the network uses.
// All kernels are templated on the scalar type and instantiated for float
// (deployment) and double (gradient checking).

#include <cstdint>
#include <memory>
#include <vector>

#include "bisenet/tensor.hpp"

namespace bisenet {

namespace detail {
template <typename T>
class GemmScratch;
}

// Output extent of a convolution along one axis; throws kShape when < 1.
std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                std::int64_t padding);

// weight: (c_out, c_in / groups, k_h, k_w); bias: (c_out, 1, 1, 1) or null.
// Zero padding, cross-correlation (no kernel flip).
template <typename T>
struct Conv2dParams {
  const BasicTensor<T>* weight = nullptr;
  const BasicTensor<T>* bias = nullptr;
  int stride = 1;
  int padding = 0;
  int groups = 1;

  std::int64_t out_channels() const { return weight->shape().n; }
  std::int64_t in_channels() const { return weight->shape().c * groups; }
  bool depthwise() const { return groups > 1 && weight->shape().c == 1 && weight->shape().n == groups; }
};

// Scratch reused across calls: the im2col buffer and GEMM blocking space.
template <typename T>
class ConvWorkspace {
 public:
  ConvWorkspace();
  ~ConvWorkspace();
  ConvWorkspace(ConvWorkspace&&) noexcept;
  ConvWorkspace& operator=(ConvWorkspace&&) noexcept;

  std::vector<T> col;
  std::vector<T> col_grad;
  detail::GemmScratch<T>& gemm() { return *gemm_; }

 private:
  std::unique_ptr<detail::GemmScratch<T>> gemm_;
};

template <typename T>
struct Conv2dGrads {
  BasicTensor<T> grad_x;
  BasicTensor<T> grad_weight;
  BasicTensor<T> grad_bias;  // empty when the layer has no bias
};

template <typename T>
Shape conv2d_output_shape(const Shape& x, const Conv2dParams<T>& p);

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const Conv2dParams<T>& p);
template <typename T>
void conv2d_forward_into(const BasicTensor<T>& x, const Conv2dParams<T>& p, BasicTensor<T>& out,
                         ConvWorkspace<T>& ws);

// grad_x is skipped (left empty) when need_grad_x is false.
template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& x, const Conv2dParams<T>& p,
                               const BasicTensor<T>& grad_out, bool need_grad_x = true);
template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& x, const Conv2dParams<T>& p,
                               const BasicTensor<T>& grad_out, bool need_grad_x,
                               ConvWorkspace<T>& ws);

// Pure composition depthwise -> pointwise; normalisation and activation
// between the two are the caller's business.
template <typename T>
BasicTensor<T> separable_conv_forward(const BasicTensor<T>& x, const Conv2dParams<T>& depthwise,
                                      const Conv2dParams<T>& pointwise);

std::int64_t separable_param_count(std::int64_t c_in, std::int64_t c_out, std::int64_t kernel);

// ---------------------------------------------------------------------------

enum class Mode { kTrain, kInfer };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

// Tensors are (c, 1, 1, 1). Running statistics are only written in train
// mode, and only when non-null.
template <typename T>
struct BatchNormParams {
  const BasicTensor<T>* gamma = nullptr;
  const BasicTensor<T>* beta = nullptr;
  BasicTensor<T>* running_mean = nullptr;
  BasicTensor<T>* running_var = nullptr;
  double eps = kBatchNormEps;
  double momentum = kBatchNormMomentum;
  Mode mode = Mode::kInfer;
};

// Per-channel statistics used by the forward pass, kept for backward.
struct BatchNormCache {
  std::vector<double> mean;
  std::vector<double> inv_std;
  Mode mode = Mode::kInfer;
};

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> grad_x;
  BasicTensor<T> grad_gamma;
  BasicTensor<T> grad_beta;
};

template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& x, const BatchNormParams<T>& p,
                                 BatchNormCache* cache = nullptr);
template <typename T>
void batchnorm_forward_into(const BasicTensor<T>& x, const BatchNormParams<T>& p,
                            BasicTensor<T>& out, BatchNormCache* cache);
template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& x, const BatchNormParams<T>& p,
                                     const BatchNormCache& cache, const BasicTensor<T>& grad_out);

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
void relu_into(const BasicTensor<T>& x, BasicTensor<T>& out);
// Passes grad where x > 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out);

// Output is clamped into the open interval (0, 1) so saturated inputs never
// produce exact 0 or 1.
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);
template <typename T>
void sigmoid_into(const BasicTensor<T>& x, BasicTensor<T>& out);
// Takes the forward output y: grad * y * (1 - y).
template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& y, const BasicTensor<T>& grad_out);

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);
template <typename T>
void global_avg_pool_into(const BasicTensor<T>& x, BasicTensor<T>& out);
template <typename T>
BasicTensor<T> global_avg_pool_backward(const Shape& input, const BasicTensor<T>& grad_out);

// Half-pixel-centre bilinear resize by an integer factor: the source
// coordinate of output index d is (d + 0.5) / factor - 0.5, clamped to the
// input extent.
template <typename T>
BasicTensor<T> bilinear_upsample(const BasicTensor<T>& x, int factor);
template <typename T>
void bilinear_upsample_into(const BasicTensor<T>& x, int factor, BasicTensor<T>& out);
template <typename T>
BasicTensor<T> bilinear_upsample_backward(const BasicTensor<T>& grad_out, int factor,
                                          const Shape& input);

// Interpolation taps for one output index along one axis.
struct BilinearTap {
  std::int64_t i0 = 0;
  std::int64_t i1 = 0;
  double frac = 0.0;  // weight of i1
};
BilinearTap bilinear_tap(std::int64_t dst, std::int64_t in_extent, int factor);

// ---------------------------------------------------------------------------

template <typename T>
struct LossResult {
  double loss = 0.0;
  BasicTensor<T> grad;          // d loss / d logits
  std::int64_t counted = 0;     // pixels contributing to the mean
  bool all_ignored = false;     // no valid pixel: loss 0, zero grad
};

// Per-pixel -log softmax(logits)[label]; ignored pixels report NaN.
// Throws kData on a label outside [0, C) that is not the ignore value.
template <typename T>
std::vector<double> pixel_cross_entropy(const BasicTensor<T>& logits, const LabelMap& labels,
                                        std::int32_t ignore_index = kIgnoreLabel);

// Mean cross-entropy over non-ignored pixels.
template <typename T>
LossResult<T> softmax_ce_loss(const BasicTensor<T>& logits, const LabelMap& labels,
                              std::int32_t ignore_index = kIgnoreLabel);

inline constexpr double kBootstrapKeepFraction = 1.0 / 16.0;
inline constexpr std::int64_t kBootstrapMinKept = 256;

// Number of hardest pixels kept out of `valid`.
std::int64_t bootstrap_keep_count(std::int64_t valid, double keep_fraction, std::int64_t min_kept);

// Online hard-pixel mining: mean cross-entropy over the
// max(min_kept, ceil(keep_fraction * N)) highest-loss valid pixels.
// Ties break towards the lower pixel index.
template <typename T>
LossResult<T> bootstrap_ce_loss(const BasicTensor<T>& logits, const LabelMap& labels,
                                double keep_fraction = kBootstrapKeepFraction,
                                std::int64_t min_kept = kBootstrapMinKept,
                                std::int32_t ignore_index = kIgnoreLabel);

// Nearest-neighbour label resampling to 1/stride resolution using the
// half-pixel convention (sample at stride * y + stride / 2).
LabelMap downsample_labels(const LabelMap& labels, std::int64_t stride);

}  // namespace bisenet
