#include "bisenet/data.hpp"

#include <algorithm>
#include <cmath>

#include "bisenet/image_io.hpp"

namespace bisenet {

void AugmentConfig::validate() const {
  if (scales.empty()) fail(ErrorKind::kConfig, "augment.scales must not be empty");
  for (double s : scales)
    if (!(s > 0.0)) fail(ErrorKind::kConfig, "augment.scales must be positive");
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) fail(ErrorKind::kConfig, "augment.hflip_prob must be in [0, 1]");
  if (crop_h < 1 || crop_w < 1) fail(ErrorKind::kConfig, "augment.crop_h and augment.crop_w must be >= 1");
}

namespace {

std::int64_t clamp_index(std::int64_t i, std::int64_t n) { return std::clamp<std::int64_t>(i, 0, n - 1); }

}  // namespace

Tensor resize_bilinear(const Tensor& image, std::int64_t h, std::int64_t w) {
  const Shape& s = image.shape();
  if (s.h == h && s.w == w) return image;
  Tensor out(Shape{s.n, s.c, h, w});
  const double sy = static_cast<double>(s.h) / static_cast<double>(h);
  const double sx = static_cast<double>(s.w) / static_cast<double>(w);
  struct Tap {
    std::int64_t i0, i1;
    double f;
  };
  const auto taps = [](std::int64_t out_n, std::int64_t in_n, double scale) {
    std::vector<Tap> t(static_cast<std::size_t>(out_n));
    for (std::int64_t d = 0; d < out_n; ++d) {
      const double src = std::clamp((static_cast<double>(d) + 0.5) * scale - 0.5, 0.0,
                                    static_cast<double>(in_n - 1));
      const auto i0 = static_cast<std::int64_t>(std::floor(src));
      t[static_cast<std::size_t>(d)] = Tap{i0, clamp_index(i0 + 1, in_n), src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto ty = taps(h, s.h, sy);
  const auto tx = taps(w, s.w, sx);
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const auto src = image.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::int64_t y = 0; y < h; ++y) {
        const Tap& a = ty[static_cast<std::size_t>(y)];
        for (std::int64_t x = 0; x < w; ++x) {
          const Tap& b = tx[static_cast<std::size_t>(x)];
          const double top = src[a.i0 * s.w + b.i0] * (1.0 - b.f) + src[a.i0 * s.w + b.i1] * b.f;
          const double bot = src[a.i1 * s.w + b.i0] * (1.0 - b.f) + src[a.i1 * s.w + b.i1] * b.f;
          dst[y * w + x] = static_cast<float>(top * (1.0 - a.f) + bot * a.f);
        }
      }
    }
  return out;
}

LabelMap resize_nearest(const LabelMap& labels, std::int64_t h, std::int64_t w) {
  if (labels.h == h && labels.w == w) return labels;
  LabelMap out(labels.n, h, w);
  const auto src_index = [](std::int64_t d, std::int64_t in_n, std::int64_t out_n) {
    return clamp_index(static_cast<std::int64_t>(std::floor((static_cast<double>(d) + 0.5) *
                                                            static_cast<double>(in_n) / static_cast<double>(out_n))),
                       in_n);
  };
  for (std::int64_t n = 0; n < labels.n; ++n)
    for (std::int64_t y = 0; y < h; ++y) {
      const std::int64_t sy = src_index(y, labels.h, h);
      for (std::int64_t x = 0; x < w; ++x) out.at(n, y, x) = labels.at(n, sy, src_index(x, labels.w, w));
    }
  return out;
}

void hflip(Sample& s) {
  const Shape& sh = s.image.shape();
  for (std::int64_t n = 0; n < sh.n; ++n)
    for (std::int64_t c = 0; c < sh.c; ++c) {
      auto p = s.image.plane(n, c);
      for (std::int64_t y = 0; y < sh.h; ++y) std::reverse(p.begin() + y * sh.w, p.begin() + (y + 1) * sh.w);
    }
  for (std::int64_t n = 0; n < s.label.n; ++n)
    for (std::int64_t y = 0; y < s.label.h; ++y) {
      auto row = s.label.data.begin() + (n * s.label.h + y) * s.label.w;
      std::reverse(row, row + s.label.w);
    }
}

Tensor normalize_image(const Tensor& image, const std::array<double, 3>& mean) {
  Tensor out = image;
  const Shape& s = out.shape();
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const float m = static_cast<float>(mean[static_cast<std::size_t>(c % 3)]);
      for (auto& v : out.plane(n, c)) v -= m;
    }
  return out;
}

Sample augment(const Sample& sample, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::uint64_t scale_pick = rng.below(cfg.scales.size());
  const double flip_draw = rng.uniform();
  const std::uint64_t crop_y_draw = rng.next_u64();
  const std::uint64_t crop_x_draw = rng.next_u64();

  const double scale = cfg.scales[scale_pick];
  const Shape& s = sample.image.shape();
  const auto sh = std::max<std::int64_t>(1, std::llround(static_cast<double>(s.h) * scale));
  const auto sw = std::max<std::int64_t>(1, std::llround(static_cast<double>(s.w) * scale));
  Sample scaled{resize_bilinear(sample.image, sh, sw), resize_nearest(sample.label, sh, sw)};
  if (flip_draw < cfg.hflip_prob) hflip(scaled);

  const std::int64_t ph = std::max(sh, cfg.crop_h);
  const std::int64_t pw = std::max(sw, cfg.crop_w);
  const std::int64_t oy = static_cast<std::int64_t>(crop_y_draw % static_cast<std::uint64_t>(ph - cfg.crop_h + 1));
  const std::int64_t ox = static_cast<std::int64_t>(crop_x_draw % static_cast<std::uint64_t>(pw - cfg.crop_w + 1));

  Sample out;
  out.image = Tensor(Shape{1, s.c, cfg.crop_h, cfg.crop_w});
  out.label = LabelMap(1, cfg.crop_h, cfg.crop_w, kIgnoreLabel);
  for (std::int64_t c = 0; c < s.c; ++c) {
    const float m = static_cast<float>(cfg.mean[static_cast<std::size_t>(c % 3)]);
    for (std::int64_t y = 0; y < cfg.crop_h; ++y)
      for (std::int64_t x = 0; x < cfg.crop_w; ++x) {
        const std::int64_t yy = y + oy;
        const std::int64_t xx = x + ox;
        // Padding takes the mean, so it is exactly zero after subtraction.
        const float v = (yy < sh && xx < sw) ? scaled.image.at(0, c, yy, xx) : m;
        out.image.at(0, c, y, x) = v - m;
      }
  }
  for (std::int64_t y = 0; y < cfg.crop_h; ++y)
    for (std::int64_t x = 0; x < cfg.crop_w; ++x) {
      const std::int64_t yy = y + oy;
      const std::int64_t xx = x + ox;
      if (yy < sh && xx < sw) out.label.at(0, y, x) = scaled.label.at(0, yy, xx);
    }
  return out;
}

Sample augment_indexed(const Sample& sample, const AugmentConfig& cfg, std::uint64_t sample_index,
                       std::uint64_t epoch) {
  Rng rng = Rng::derive(cfg.seed ^ (epoch * 0x9E3779B97F4A7C15ULL), sample_index);
  return augment(sample, cfg, rng);
}

std::vector<Sample> synth_shapes(std::int64_t count, std::int64_t h, std::int64_t w, std::int64_t num_classes,
                                 std::uint64_t seed, const SynthGeometry& geo) {
  if (num_classes < 2) fail(ErrorKind::kArgument, "synthetic shapes need at least 2 classes");
  if (count < 0 || h < 1 || w < 1) fail(ErrorKind::kArgument, "synthetic shapes need positive extents");
  const Palette colours = default_palette(num_classes);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
    LabelMap label(1, h, w, 0);
    for (std::int64_t c = 1; c < num_classes; ++c) {
      if (c % 2 == 1) {
        const auto side = [&](std::int64_t extent) {
          const double f = geo.rect_min + (geo.rect_max - geo.rect_min) * rng.uniform();
          return std::max<std::int64_t>(1, std::llround(f * static_cast<double>(extent)));
        };
        const std::int64_t rh = side(h);
        const std::int64_t rw = side(w);
        const auto y0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - rh + 1)));
        const auto x0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - rw + 1)));
        for (std::int64_t y = y0; y < y0 + rh; ++y)
          for (std::int64_t x = x0; x < x0 + rw; ++x) label.at(0, y, x) = static_cast<std::int32_t>(c);
      } else {
        const double m = static_cast<double>(std::min(h, w));
        const double r = m * (geo.radius_min + (geo.radius_max - geo.radius_min) * rng.uniform());
        const double cy = rng.uniform() * static_cast<double>(h);
        const double cx = rng.uniform() * static_cast<double>(w);
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t x = 0; x < w; ++x) {
            const double dy = static_cast<double>(y) + 0.5 - cy;
            const double dx = static_cast<double>(x) + 0.5 - cx;
            if (dy * dy + dx * dx <= r * r) label.at(0, y, x) = static_cast<std::int32_t>(c);
          }
      }
    }
    // Per-sample colour jitter, then per-pixel noise.
    std::vector<std::array<double, 3>> tint(static_cast<std::size_t>(num_classes));
    for (std::int64_t c = 0; c < num_classes; ++c)
      for (int k = 0; k < 3; ++k)
        tint[static_cast<std::size_t>(c)][k] = colours[static_cast<std::size_t>(c)][k] + 16.0 * (rng.uniform() - 0.5);
    Tensor image(Shape{1, 3, h, w});
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const auto& t = tint[static_cast<std::size_t>(label.at(0, y, x))];
        for (int k = 0; k < 3; ++k) {
          const double v = t[k] + 8.0 * rng.normal();
          image.at(0, k, y, x) = static_cast<float>(std::nearbyint(std::clamp(v, 0.0, 255.0)));
        }
      }
    out.push_back(Sample{std::move(image), std::move(label)});
  }
  return out;
}

std::vector<Sample> load_dataset(const std::string& manifest_path) {
  std::vector<Sample> out;
  for (const auto& [img, lab] : read_manifest(manifest_path)) {
    Sample s{read_ppm(img), read_pgm(lab)};
    if (s.label.h != s.image.shape().h || s.label.w != s.image.shape().w)
      fail(ErrorKind::kData, "image '" + img + "' and label '" + lab + "' differ in size");
    out.push_back(std::move(s));
  }
  return out;
}

Tensor stack_images(const std::vector<Sample>& samples) {
  if (samples.empty()) fail(ErrorKind::kData, "empty batch");
  const Shape s = samples.front().image.shape();
  Tensor out(Shape{static_cast<std::int64_t>(samples.size()), s.c, s.h, s.w});
  const std::int64_t block = s.c * s.h * s.w;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& img = samples[i].image;
    if (!(img.shape() == s)) fail(ErrorKind::kData, "batch images differ in shape");
    std::copy(img.ptr(), img.ptr() + block, out.ptr() + static_cast<std::int64_t>(i) * block);
  }
  return out;
}

LabelMap stack_labels(const std::vector<Sample>& samples) {
  if (samples.empty()) fail(ErrorKind::kData, "empty batch");
  const auto& f = samples.front().label;
  LabelMap out(static_cast<std::int64_t>(samples.size()), f.h, f.w);
  const std::int64_t block = f.h * f.w;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& l = samples[i].label;
    if (l.h != f.h || l.w != f.w) fail(ErrorKind::kData, "batch labels differ in shape");
    std::copy(l.data.begin(), l.data.end(), out.data.begin() + static_cast<std::int64_t>(i) * block);
  }
  return out;
}

}  // namespace bisenet
