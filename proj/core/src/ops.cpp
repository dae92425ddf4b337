#include "bisenet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gemm.hpp"

namespace bisenet {

std::int64_t conv_output_extent(std::int64_t in, std::int64_t kernel, std::int64_t stride,
                                std::int64_t padding) {
  if (kernel < 1 || stride < 1 || padding < 0)
    fail(ErrorKind::kArgument, "convolution needs kernel >= 1, stride >= 1, padding >= 0");
  const std::int64_t span = in + 2 * padding - kernel;
  if (span < 0)
    fail(ErrorKind::kShape, "convolution output extent < 1 (input " + std::to_string(in) +
                                ", kernel " + std::to_string(kernel) + ", padding " +
                                std::to_string(padding) + ")");
  return span / stride + 1;
}

std::int64_t separable_param_count(std::int64_t c_in, std::int64_t c_out, std::int64_t kernel) {
  return c_in * kernel * kernel + c_in * c_out;
}

template <typename T>
ConvWorkspace<T>::ConvWorkspace() : gemm_(std::make_unique<detail::GemmScratch<T>>()) {}
template <typename T>
ConvWorkspace<T>::~ConvWorkspace() = default;
template <typename T>
ConvWorkspace<T>::ConvWorkspace(ConvWorkspace&&) noexcept = default;
template <typename T>
ConvWorkspace<T>& ConvWorkspace<T>::operator=(ConvWorkspace&&) noexcept = default;

namespace {

template <typename T>
void check_conv(const Shape& x, const Conv2dParams<T>& p) {
  if (p.weight == nullptr) fail(ErrorKind::kArgument, "conv2d: missing weight");
  if (p.groups < 1) fail(ErrorKind::kArgument, "conv2d: groups must be >= 1");
  const Shape& w = p.weight->shape();
  if (w.n % p.groups != 0) fail(ErrorKind::kShape, "conv2d: c_out not divisible by groups");
  if (x.c != w.c * p.groups)
    fail(ErrorKind::kShape, "conv2d: input has " + std::to_string(x.c) + " channels, weight expects " +
                                std::to_string(w.c * p.groups));
  if (p.bias != nullptr && p.bias->numel() != w.n)
    fail(ErrorKind::kShape, "conv2d: bias length does not match c_out");
}

struct ConvDims {
  std::int64_t cin_g, cout_g, kh, kw, ho, wo, k, npix;
  bool direct;  // 1x1, stride 1, no padding: im2col is the identity
};

template <typename T>
ConvDims conv_dims(const Shape& x, const Conv2dParams<T>& p) {
  const Shape& w = p.weight->shape();
  ConvDims d{};
  d.cin_g = w.c;
  d.cout_g = w.n / p.groups;
  d.kh = w.h;
  d.kw = w.w;
  d.ho = conv_output_extent(x.h, d.kh, p.stride, p.padding);
  d.wo = conv_output_extent(x.w, d.kw, p.stride, p.padding);
  d.k = d.cin_g * d.kh * d.kw;
  d.npix = d.ho * d.wo;
  d.direct = d.kh == 1 && d.kw == 1 && p.stride == 1 && p.padding == 0;
  return d;
}

// col[(ci * kh + ky) * kw + kx][oy * wo + ox] = x[ci][oy*s - p + ky][ox*s - p + kx]
template <typename T>
void im2col(const T* x, std::int64_t channels, std::int64_t h, std::int64_t w, const ConvDims& d,
            int stride, int pad, T* col) {
  for (std::int64_t ci = 0; ci < channels; ++ci) {
    const T* plane = x + ci * h * w;
    for (std::int64_t ky = 0; ky < d.kh; ++ky) {
      for (std::int64_t kx = 0; kx < d.kw; ++kx) {
        T* row = col + ((ci * d.kh + ky) * d.kw + kx) * d.npix;
        for (std::int64_t oy = 0; oy < d.ho; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          T* dst = row + oy * d.wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + d.wo, T(0));
            continue;
          }
          const T* src = plane + iy * w;
          if (stride == 1) {
            const std::int64_t shift = kx - pad;
            const std::int64_t lo = std::clamp<std::int64_t>(-shift, 0, d.wo);
            const std::int64_t hi = std::clamp<std::int64_t>(w - shift, lo, d.wo);
            std::fill(dst, dst + lo, T(0));
            std::copy(src + lo + shift, src + hi + shift, dst + lo);
            std::fill(dst + hi, dst + d.wo, T(0));
          } else {
            for (std::int64_t ox = 0; ox < d.wo; ++ox) {
              const std::int64_t ix = ox * stride - pad + kx;
              dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::int64_t channels, std::int64_t h, std::int64_t w,
                const ConvDims& d, int stride, int pad, T* x) {
  for (std::int64_t ci = 0; ci < channels; ++ci) {
    T* plane = x + ci * h * w;
    for (std::int64_t ky = 0; ky < d.kh; ++ky) {
      for (std::int64_t kx = 0; kx < d.kw; ++kx) {
        const T* row = col + ((ci * d.kh + ky) * d.kw + kx) * d.npix;
        for (std::int64_t oy = 0; oy < d.ho; ++oy) {
          const std::int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + oy * d.wo;
          T* dst = plane + iy * w;
          for (std::int64_t ox = 0; ox < d.wo; ++ox) {
            const std::int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Valid output range [lo, hi) along one axis for kernel offset k.
inline void valid_range(std::int64_t k, int stride, int pad, std::int64_t in, std::int64_t out,
                        std::int64_t& lo, std::int64_t& hi) {
  // need 0 <= o*stride - pad + k < in
  const std::int64_t a = pad - k;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  const std::int64_t b = in - 1 + pad - k;
  hi = b < 0 ? 0 : b / stride + 1;
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
}

template <typename T>
void depthwise_forward(const BasicTensor<T>& x, const Conv2dParams<T>& p, const ConvDims& d,
                       BasicTensor<T>& out) {
  const Shape& s = x.shape();
  const T* wt = p.weight->ptr();
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* src = x.ptr() + (n * s.c + c) * s.h * s.w;
      T* dst = out.ptr() + (n * s.c + c) * d.npix;
      const T b = p.bias ? (*p.bias)[c] : T(0);
      std::fill(dst, dst + d.npix, b);
      const T* kern = wt + c * d.kh * d.kw;
      for (std::int64_t ky = 0; ky < d.kh; ++ky) {
        std::int64_t oy0, oy1;
        valid_range(ky, p.stride, p.padding, s.h, d.ho, oy0, oy1);
        for (std::int64_t kx = 0; kx < d.kw; ++kx) {
          std::int64_t ox0, ox1;
          valid_range(kx, p.stride, p.padding, s.w, d.wo, ox0, ox1);
          const T wv = kern[ky * d.kw + kx];
          const std::int64_t shift = kx - p.padding;
          for (std::int64_t oy = oy0; oy < oy1; ++oy) {
            const T* row = src + (oy * p.stride - p.padding + ky) * s.w;
            T* o = dst + oy * d.wo;
            if (p.stride == 1) {
              for (std::int64_t ox = ox0; ox < ox1; ++ox) o[ox] += wv * row[ox + shift];
            } else {
              for (std::int64_t ox = ox0; ox < ox1; ++ox) o[ox] += wv * row[ox * p.stride + shift];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const BasicTensor<T>& x, const Conv2dParams<T>& p, const ConvDims& d,
                        const BasicTensor<T>& grad_out, Conv2dGrads<T>& g, bool need_grad_x) {
  const Shape& s = x.shape();
  const T* wt = p.weight->ptr();
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      const T* src = x.ptr() + (n * s.c + c) * s.h * s.w;
      const T* go = grad_out.ptr() + (n * s.c + c) * d.npix;
      T* gx = need_grad_x ? g.grad_x.ptr() + (n * s.c + c) * s.h * s.w : nullptr;
      const T* kern = wt + c * d.kh * d.kw;
      T* gkern = g.grad_weight.ptr() + c * d.kh * d.kw;
      for (std::int64_t ky = 0; ky < d.kh; ++ky) {
        std::int64_t oy0, oy1;
        valid_range(ky, p.stride, p.padding, s.h, d.ho, oy0, oy1);
        for (std::int64_t kx = 0; kx < d.kw; ++kx) {
          std::int64_t ox0, ox1;
          valid_range(kx, p.stride, p.padding, s.w, d.wo, ox0, ox1);
          const T wv = kern[ky * d.kw + kx];
          T acc = T(0);
          const std::int64_t shift = kx - p.padding;
          for (std::int64_t oy = oy0; oy < oy1; ++oy) {
            const std::int64_t base = (oy * p.stride - p.padding + ky) * s.w;
            const T* row = src + base;
            const T* gorow = go + oy * d.wo;
            for (std::int64_t ox = ox0; ox < ox1; ++ox) acc += gorow[ox] * row[ox * p.stride + shift];
            if (gx != nullptr) {
              T* gxrow = gx + base;
              for (std::int64_t ox = ox0; ox < ox1; ++ox) gxrow[ox * p.stride + shift] += wv * gorow[ox];
            }
          }
          gkern[ky * d.kw + kx] += acc;
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Shape conv2d_output_shape(const Shape& x, const Conv2dParams<T>& p) {
  check_conv(x, p);
  const ConvDims d = conv_dims(x, p);
  return Shape{x.n, p.weight->shape().n, d.ho, d.wo};
}

template <typename T>
void conv2d_forward_into(const BasicTensor<T>& x, const Conv2dParams<T>& p, BasicTensor<T>& out,
                         ConvWorkspace<T>& ws) {
  const Shape& s = x.shape();
  check_conv(s, p);
  const ConvDims d = conv_dims(s, p);
  const std::int64_t cout = p.weight->shape().n;
  out.reshape_storage(Shape{s.n, cout, d.ho, d.wo});
  if (p.depthwise()) {
    depthwise_forward(x, p, d, out);
    return;
  }
  if (!d.direct) ws.col.resize(static_cast<std::size_t>(d.k * d.npix));
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (int g = 0; g < p.groups; ++g) {
      const T* xin = x.ptr() + (n * s.c + g * d.cin_g) * s.h * s.w;
      const T* cols = xin;
      if (!d.direct) {
        im2col(xin, d.cin_g, s.h, s.w, d, p.stride, p.padding, ws.col.data());
        cols = ws.col.data();
      }
      const T* wg = p.weight->ptr() + g * d.cout_g * d.k;
      T* og = out.ptr() + (n * cout + g * d.cout_g) * d.npix;
      detail::gemm<T>(false, false, d.cout_g, d.npix, d.k, T(1), wg, d.k, cols, d.npix, T(0), og,
                      d.npix, ws.gemm());
    }
    if (p.bias != nullptr) {
      for (std::int64_t c = 0; c < cout; ++c) {
        T* o = out.ptr() + (n * cout + c) * d.npix;
        const T b = (*p.bias)[c];
        for (std::int64_t i = 0; i < d.npix; ++i) o[i] += b;
      }
    }
  }
}

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const Conv2dParams<T>& p) {
  ConvWorkspace<T> ws;
  BasicTensor<T> out;
  conv2d_forward_into(x, p, out, ws);
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& x, const Conv2dParams<T>& p,
                               const BasicTensor<T>& grad_out, bool need_grad_x,
                               ConvWorkspace<T>& ws) {
  const Shape& s = x.shape();
  check_conv(s, p);
  const ConvDims d = conv_dims(s, p);
  const std::int64_t cout = p.weight->shape().n;
  const Shape expected{s.n, cout, d.ho, d.wo};
  if (grad_out.shape() != expected)
    fail(ErrorKind::kShape, "conv2d_backward: grad_out " + grad_out.shape().str() + " expected " +
                                expected.str());
  Conv2dGrads<T> g;
  g.grad_weight = BasicTensor<T>(p.weight->shape());
  if (p.bias != nullptr) {
    g.grad_bias = BasicTensor<T>(p.bias->shape());
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t c = 0; c < cout; ++c) {
        const T* go = grad_out.ptr() + (n * cout + c) * d.npix;
        T acc = T(0);
        for (std::int64_t i = 0; i < d.npix; ++i) acc += go[i];
        g.grad_bias[c] += acc;
      }
    }
  }
  if (need_grad_x) g.grad_x = BasicTensor<T>(s);
  if (p.depthwise()) {
    depthwise_backward(x, p, d, grad_out, g, need_grad_x);
    return g;
  }
  if (!d.direct) {
    ws.col.resize(static_cast<std::size_t>(d.k * d.npix));
    if (need_grad_x) ws.col_grad.resize(static_cast<std::size_t>(d.k * d.npix));
  }
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (int g_idx = 0; g_idx < p.groups; ++g_idx) {
      const T* xin = x.ptr() + (n * s.c + g_idx * d.cin_g) * s.h * s.w;
      const T* cols = xin;
      if (!d.direct) {
        im2col(xin, d.cin_g, s.h, s.w, d, p.stride, p.padding, ws.col.data());
        cols = ws.col.data();
      }
      const T* go = grad_out.ptr() + (n * cout + g_idx * d.cout_g) * d.npix;
      T* gw = g.grad_weight.ptr() + g_idx * d.cout_g * d.k;
      // dW += dY * col^T
      detail::gemm<T>(false, true, d.cout_g, d.k, d.npix, T(1), go, d.npix, cols, d.npix, T(1), gw,
                      d.k, ws.gemm());
      if (!need_grad_x) continue;
      const T* wg = p.weight->ptr() + g_idx * d.cout_g * d.k;
      T* gx = g.grad_x.ptr() + (n * s.c + g_idx * d.cin_g) * s.h * s.w;
      // dcol = W^T * dY
      if (d.direct) {
        detail::gemm<T>(true, false, d.k, d.npix, d.cout_g, T(1), wg, d.k, go, d.npix, T(0), gx,
                        d.npix, ws.gemm());
      } else {
        detail::gemm<T>(true, false, d.k, d.npix, d.cout_g, T(1), wg, d.k, go, d.npix, T(0),
                        ws.col_grad.data(), d.npix, ws.gemm());
        col2im_add(ws.col_grad.data(), d.cin_g, s.h, s.w, d, p.stride, p.padding, gx);
      }
    }
  }
  return g;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& x, const Conv2dParams<T>& p,
                               const BasicTensor<T>& grad_out, bool need_grad_x) {
  ConvWorkspace<T> ws;
  return conv2d_backward(x, p, grad_out, need_grad_x, ws);
}

template <typename T>
BasicTensor<T> separable_conv_forward(const BasicTensor<T>& x, const Conv2dParams<T>& depthwise,
                                      const Conv2dParams<T>& pointwise) {
  if (depthwise.groups != depthwise.in_channels() || !depthwise.depthwise())
    fail(ErrorKind::kArgument, "separable_conv: first stage must be depthwise");
  if (pointwise.groups != 1 || pointwise.weight->shape().h != 1 || pointwise.weight->shape().w != 1)
    fail(ErrorKind::kArgument, "separable_conv: second stage must be a 1x1 dense convolution");
  return conv2d_forward(conv2d_forward(x, depthwise), pointwise);
}

// ---------------------------------------------------------------------------

template <typename T>
void batchnorm_forward_into(const BasicTensor<T>& x, const BatchNormParams<T>& p,
                            BasicTensor<T>& out, BatchNormCache* cache) {
  const Shape& s = x.shape();
  if (p.gamma == nullptr || p.beta == nullptr)
    fail(ErrorKind::kArgument, "batchnorm: missing gamma/beta");
  if (p.gamma->numel() != s.c || p.beta->numel() != s.c)
    fail(ErrorKind::kShape, "batchnorm: parameter length does not match " + std::to_string(s.c) +
                                " channels");
  out.reshape_storage(s);
  const std::int64_t hw = s.spatial();
  const std::int64_t count = s.n * hw;
  if (cache != nullptr) {
    cache->mean.resize(static_cast<std::size_t>(s.c));
    cache->inv_std.resize(static_cast<std::size_t>(s.c));
    cache->mode = p.mode;
  }
  for (std::int64_t c = 0; c < s.c; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (p.mode == Mode::kTrain) {
      double sum = 0.0;
      for (std::int64_t n = 0; n < s.n; ++n) {
        const T* src = x.ptr() + (n * s.c + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) sum += src[i];
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::int64_t n = 0; n < s.n; ++n) {
        const T* src = x.ptr() + (n * s.c + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const double dv = src[i] - mean;
          sq += dv * dv;
        }
      }
      var = sq / static_cast<double>(count);
      if (p.running_mean != nullptr && p.running_var != nullptr) {
        // Running variance tracks the unbiased estimate.
        const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
        auto& rm = (*p.running_mean)[c];
        auto& rv = (*p.running_var)[c];
        rm = static_cast<T>((1.0 - p.momentum) * mean + p.momentum * static_cast<double>(rm));
        rv = static_cast<T>((1.0 - p.momentum) * unbiased + p.momentum * static_cast<double>(rv));
      }
    } else {
      if (p.running_mean == nullptr || p.running_var == nullptr)
        fail(ErrorKind::kArgument, "batchnorm: inference needs running statistics");
      mean = (*p.running_mean)[c];
      var = std::max(0.0, static_cast<double>((*p.running_var)[c]));
    }
    const double denom = var + p.eps;
    const double inv_std = denom > 0.0 ? 1.0 / std::sqrt(denom) : 0.0;
    if (cache != nullptr) {
      cache->mean[static_cast<std::size_t>(c)] = mean;
      cache->inv_std[static_cast<std::size_t>(c)] = inv_std;
    }
    const double scale = static_cast<double>((*p.gamma)[c]) * inv_std;
    const T sc = static_cast<T>(scale);
    const T sh = static_cast<T>(static_cast<double>((*p.beta)[c]) - mean * scale);
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* src = x.ptr() + (n * s.c + c) * hw;
      T* dst = out.ptr() + (n * s.c + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i] * sc + sh;
    }
  }
}

template <typename T>
BasicTensor<T> batchnorm_forward(const BasicTensor<T>& x, const BatchNormParams<T>& p,
                                 BatchNormCache* cache) {
  BasicTensor<T> out;
  batchnorm_forward_into(x, p, out, cache);
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& x, const BatchNormParams<T>& p,
                                     const BatchNormCache& cache, const BasicTensor<T>& grad_out) {
  const Shape& s = x.shape();
  if (grad_out.shape() != s) fail(ErrorKind::kShape, "batchnorm_backward: grad_out shape mismatch");
  BatchNormGrads<T> g;
  g.grad_x = BasicTensor<T>(s);
  g.grad_gamma = BasicTensor<T>(p.gamma->shape());
  g.grad_beta = BasicTensor<T>(p.beta->shape());
  const std::int64_t hw = s.spatial();
  const double count = static_cast<double>(s.n * hw);
  for (std::int64_t c = 0; c < s.c; ++c) {
    const double mean = cache.mean[static_cast<std::size_t>(c)];
    const double inv_std = cache.inv_std[static_cast<std::size_t>(c)];
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* src = x.ptr() + (n * s.c + c) * hw;
      const T* dy = grad_out.ptr() + (n * s.c + c) * hw;
      for (std::int64_t i = 0; i < hw; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * (src[i] - mean) * inv_std;
      }
    }
    g.grad_gamma[c] = static_cast<T>(sum_dy_xhat);
    g.grad_beta[c] = static_cast<T>(sum_dy);
    const double gamma = (*p.gamma)[c];
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* src = x.ptr() + (n * s.c + c) * hw;
      const T* dy = grad_out.ptr() + (n * s.c + c) * hw;
      T* dx = g.grad_x.ptr() + (n * s.c + c) * hw;
      if (cache.mode == Mode::kTrain) {
        const double k = gamma * inv_std;
        for (std::int64_t i = 0; i < hw; ++i) {
          const double xhat = (src[i] - mean) * inv_std;
          dx[i] = static_cast<T>(k * (dy[i] - sum_dy / count - xhat * sum_dy_xhat / count));
        }
      } else {
        const T k = static_cast<T>(gamma * inv_std);
        for (std::int64_t i = 0; i < hw; ++i) dx[i] = dy[i] * k;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
void relu_into(const BasicTensor<T>& x, BasicTensor<T>& out) {
  out.reshape_storage(x.shape());
  const T* src = x.ptr();
  T* dst = out.ptr();
  const std::int64_t count = x.numel();
  for (std::int64_t i = 0; i < count; ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  BasicTensor<T> out;
  relu_into(x, out);
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
  if (x.shape() != grad_out.shape()) fail(ErrorKind::kShape, "relu_backward: shape mismatch");
  BasicTensor<T> g(x.shape());
  const std::int64_t count = x.numel();
  for (std::int64_t i = 0; i < count; ++i) g[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <typename T>
void sigmoid_into(const BasicTensor<T>& x, BasicTensor<T>& out) {
  out.reshape_storage(x.shape());
  constexpr T kLow = std::numeric_limits<T>::denorm_min();
  constexpr T kHigh = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  const std::int64_t count = x.numel();
  for (std::int64_t i = 0; i < count; ++i) {
    const T v = x[i];
    T y;
    if (v >= T(0)) {
      y = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y = e / (T(1) + e);
    }
    out[i] = std::clamp(y, kLow, kHigh);
  }
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  BasicTensor<T> out;
  sigmoid_into(x, out);
  return out;
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& y, const BasicTensor<T>& grad_out) {
  if (y.shape() != grad_out.shape()) fail(ErrorKind::kShape, "sigmoid_backward: shape mismatch");
  BasicTensor<T> g(y.shape());
  const std::int64_t count = y.numel();
  for (std::int64_t i = 0; i < count; ++i) g[i] = grad_out[i] * y[i] * (T(1) - y[i]);
  return g;
}

template <typename T>
void global_avg_pool_into(const BasicTensor<T>& x, BasicTensor<T>& out) {
  const Shape& s = x.shape();
  out.reshape_storage(Shape{s.n, s.c, 1, 1});
  const std::int64_t hw = s.spatial();
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const T* src = x.ptr() + p * hw;
    double sum = 0.0;
    for (std::int64_t i = 0; i < hw; ++i) sum += src[i];
    out[p] = static_cast<T>(sum / static_cast<double>(hw));
  }
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  BasicTensor<T> out;
  global_avg_pool_into(x, out);
  return out;
}

template <typename T>
BasicTensor<T> global_avg_pool_backward(const Shape& input, const BasicTensor<T>& grad_out) {
  if (grad_out.shape() != Shape{input.n, input.c, 1, 1})
    fail(ErrorKind::kShape, "global_avg_pool_backward: grad_out must be (n, c, 1, 1)");
  BasicTensor<T> g(input);
  const std::int64_t hw = input.spatial();
  const T scale = T(1) / static_cast<T>(hw);
  for (std::int64_t p = 0; p < input.n * input.c; ++p) {
    const T v = grad_out[p] * scale;
    std::fill(g.ptr() + p * hw, g.ptr() + (p + 1) * hw, v);
  }
  return g;
}

BilinearTap bilinear_tap(std::int64_t dst, std::int64_t in_extent, int factor) {
  double src = (static_cast<double>(dst) + 0.5) / factor - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_extent - 1));
  BilinearTap tap;
  tap.i0 = static_cast<std::int64_t>(std::floor(src));
  tap.i1 = std::min(tap.i0 + 1, in_extent - 1);
  tap.frac = src - static_cast<double>(tap.i0);
  return tap;
}

namespace {

std::vector<BilinearTap> axis_taps(std::int64_t in, int factor) {
  std::vector<BilinearTap> taps(static_cast<std::size_t>(in * factor));
  for (std::int64_t d = 0; d < in * factor; ++d) taps[static_cast<std::size_t>(d)] = bilinear_tap(d, in, factor);
  return taps;
}

}  // namespace

template <typename T>
void bilinear_upsample_into(const BasicTensor<T>& x, int factor, BasicTensor<T>& out) {
  if (factor < 1) fail(ErrorKind::kArgument, "bilinear_upsample: factor must be >= 1");
  const Shape& s = x.shape();
  const Shape os{s.n, s.c, s.h * factor, s.w * factor};
  out.reshape_storage(os);
  if (factor == 1) {
    std::copy(x.data().begin(), x.data().end(), out.data().begin());
    return;
  }
  // Scratch grows to the widest row seen, then stays put.
  thread_local std::vector<std::int64_t> xi0, xi1;
  thread_local std::vector<T> xf, row;
  xi0.resize(static_cast<std::size_t>(os.w));
  xi1.resize(static_cast<std::size_t>(os.w));
  xf.resize(static_cast<std::size_t>(os.w));
  row.resize(static_cast<std::size_t>(s.w));
  for (std::int64_t ox = 0; ox < os.w; ++ox) {
    const BilinearTap t = bilinear_tap(ox, s.w, factor);
    xi0[static_cast<std::size_t>(ox)] = t.i0;
    xi1[static_cast<std::size_t>(ox)] = t.i1;
    xf[static_cast<std::size_t>(ox)] = static_cast<T>(t.frac);
  }
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const T* src = x.ptr() + p * s.h * s.w;
    T* dst = out.ptr() + p * os.h * os.w;
    for (std::int64_t oy = 0; oy < os.h; ++oy) {
      const BilinearTap ty = bilinear_tap(oy, s.h, factor);
      const T fy = static_cast<T>(ty.frac);
      const T* r0 = src + ty.i0 * s.w;
      const T* r1 = src + ty.i1 * s.w;
      for (std::int64_t ix = 0; ix < s.w; ++ix) row[static_cast<std::size_t>(ix)] = r0[ix] + fy * (r1[ix] - r0[ix]);
      T* o = dst + oy * os.w;
      for (std::int64_t ox = 0; ox < os.w; ++ox) {
        const T a = row[static_cast<std::size_t>(xi0[static_cast<std::size_t>(ox)])];
        const T b = row[static_cast<std::size_t>(xi1[static_cast<std::size_t>(ox)])];
        o[ox] = a + xf[static_cast<std::size_t>(ox)] * (b - a);
      }
    }
  }
}

template <typename T>
BasicTensor<T> bilinear_upsample(const BasicTensor<T>& x, int factor) {
  BasicTensor<T> out;
  bilinear_upsample_into(x, factor, out);
  return out;
}

template <typename T>
BasicTensor<T> bilinear_upsample_backward(const BasicTensor<T>& grad_out, int factor,
                                          const Shape& input) {
  const Shape os{input.n, input.c, input.h * factor, input.w * factor};
  if (grad_out.shape() != os) fail(ErrorKind::kShape, "bilinear_upsample_backward: shape mismatch");
  BasicTensor<T> g(input);
  const auto ty_all = axis_taps(input.h, factor);
  const auto tx_all = axis_taps(input.w, factor);
  for (std::int64_t p = 0; p < input.n * input.c; ++p) {
    const T* go = grad_out.ptr() + p * os.h * os.w;
    T* gi = g.ptr() + p * input.h * input.w;
    for (std::int64_t oy = 0; oy < os.h; ++oy) {
      const auto& ty = ty_all[static_cast<std::size_t>(oy)];
      const T fy = static_cast<T>(ty.frac);
      T* r0 = gi + ty.i0 * input.w;
      T* r1 = gi + ty.i1 * input.w;
      for (std::int64_t ox = 0; ox < os.w; ++ox) {
        const auto& tx = tx_all[static_cast<std::size_t>(ox)];
        const T fx = static_cast<T>(tx.frac);
        const T v = go[oy * os.w + ox];
        r0[tx.i0] += (T(1) - fy) * (T(1) - fx) * v;
        r0[tx.i1] += (T(1) - fy) * fx * v;
        r1[tx.i0] += fy * (T(1) - fx) * v;
        r1[tx.i1] += fy * fx * v;
      }
    }
  }
  return g;
}

#define BISENET_INSTANTIATE(T)                                                                     \
  template class ConvWorkspace<T>;                                                                 \
  template Shape conv2d_output_shape<T>(const Shape&, const Conv2dParams<T>&);                     \
  template BasicTensor<T> conv2d_forward<T>(const BasicTensor<T>&, const Conv2dParams<T>&);        \
  template void conv2d_forward_into<T>(const BasicTensor<T>&, const Conv2dParams<T>&,              \
                                       BasicTensor<T>&, ConvWorkspace<T>&);                        \
  template Conv2dGrads<T> conv2d_backward<T>(const BasicTensor<T>&, const Conv2dParams<T>&,        \
                                             const BasicTensor<T>&, bool);                         \
  template Conv2dGrads<T> conv2d_backward<T>(const BasicTensor<T>&, const Conv2dParams<T>&,        \
                                             const BasicTensor<T>&, bool, ConvWorkspace<T>&);      \
  template BasicTensor<T> separable_conv_forward<T>(const BasicTensor<T>&, const Conv2dParams<T>&, \
                                                    const Conv2dParams<T>&);                       \
  template BasicTensor<T> batchnorm_forward<T>(const BasicTensor<T>&, const BatchNormParams<T>&,   \
                                               BatchNormCache*);                                   \
  template void batchnorm_forward_into<T>(const BasicTensor<T>&, const BatchNormParams<T>&,        \
                                          BasicTensor<T>&, BatchNormCache*);                       \
  template BatchNormGrads<T> batchnorm_backward<T>(const BasicTensor<T>&,                          \
                                                   const BatchNormParams<T>&,                      \
                                                   const BatchNormCache&, const BasicTensor<T>&);  \
  template BasicTensor<T> relu<T>(const BasicTensor<T>&);                                          \
  template void relu_into<T>(const BasicTensor<T>&, BasicTensor<T>&);                              \
  template BasicTensor<T> relu_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&);          \
  template BasicTensor<T> sigmoid<T>(const BasicTensor<T>&);                                       \
  template void sigmoid_into<T>(const BasicTensor<T>&, BasicTensor<T>&);                           \
  template BasicTensor<T> sigmoid_backward<T>(const BasicTensor<T>&, const BasicTensor<T>&);       \
  template BasicTensor<T> global_avg_pool<T>(const BasicTensor<T>&);                               \
  template void global_avg_pool_into<T>(const BasicTensor<T>&, BasicTensor<T>&);                   \
  template BasicTensor<T> global_avg_pool_backward<T>(const Shape&, const BasicTensor<T>&);        \
  template BasicTensor<T> bilinear_upsample<T>(const BasicTensor<T>&, int);                        \
  template void bilinear_upsample_into<T>(const BasicTensor<T>&, int, BasicTensor<T>&);           \
  template BasicTensor<T> bilinear_upsample_backward<T>(const BasicTensor<T>&, int, const Shape&);

BISENET_INSTANTIATE(float)
BISENET_INSTANTIATE(double)
#undef BISENET_INSTANTIATE

}  // namespace bisenet
