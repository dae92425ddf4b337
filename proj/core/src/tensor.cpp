#include "bisenet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace bisenet {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kSize: return "size";
    case ErrorKind::kArgument: return "argument";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kGraph: return "graph";
    case ErrorKind::kConsistency: return "consistency";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kData: return "data";
    case ErrorKind::kAnalysis: return "analysis";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(message), kind_(kind) {}

Error::Error(ErrorKind kind, const std::string& message, std::uint64_t byte_offset)
    : std::runtime_error(message + " (at byte " + std::to_string(byte_offset) + ")"),
      kind_(kind),
      offset_(byte_offset) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

// ---------------------------------------------------------------------------

bool Shape::valid() const noexcept { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }

std::int64_t Shape::numel() const {
  if (!valid()) fail(ErrorKind::kSize, "shape extents must be >= 1, got " + str());
  constexpr auto kMax = std::numeric_limits<std::int64_t>::max();
  std::int64_t total = 1;
  for (std::int64_t extent : {n, c, h, w}) {
    if (total > kMax / extent) fail(ErrorKind::kSize, "element count overflows for " + str());
    total *= extent;
  }
  if (static_cast<std::uint64_t>(total) > std::numeric_limits<std::size_t>::max() / 8)
    fail(ErrorKind::kSize, "element count not addressable for " + str());
  return total;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : shape_(shape), data_(static_cast<std::size_t>(shape.numel()), fill) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
  if (static_cast<std::int64_t>(data_.size()) != shape.numel())
    fail(ErrorKind::kSize, "buffer length " + std::to_string(data_.size()) + " does not match " + shape.str());
}

template <typename T>
void BasicTensor<T>::reshape_storage(const Shape& shape) {
  data_.resize(static_cast<std::size_t>(shape.numel()));
  shape_ = shape;
  if (!grad_.empty()) grad_.assign(data_.size(), T(0));
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
std::span<T> BasicTensor<T>::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), T(0));
  return grad_;
}

template <typename T>
std::vector<T> BasicTensor<T>::release() noexcept {
  shape_ = Shape{0, 0, 0, 0};
  grad_.clear();
  return std::move(data_);
}

template <typename T>
void BasicTensor<T>::adopt(const Shape& shape, std::vector<T>&& storage) {
  data_ = std::move(storage);
  data_.resize(static_cast<std::size_t>(shape.numel()));
  shape_ = shape;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

// ---------------------------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t x = seed;
  for (auto& word : s_) word = splitmix64(x);
}

Rng Rng::derive(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t x = seed ^ 0x5851f42d4c957f2dULL;
  std::uint64_t mixed = splitmix64(x) ^ (index * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
  return Rng(mixed);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound == 0) fail(ErrorKind::kArgument, "Rng::below requires bound > 0");
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % bound;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  has_spare_ = true;
  return u * m;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> zeros(const Shape& shape) {
  return BasicTensor<T>(shape, T(0));
}

template <typename T>
BasicTensor<T> init_kaiming(const Shape& shape, std::int64_t fan_in, Rng& rng) {
  if (fan_in < 1) fail(ErrorKind::kArgument, "init_kaiming: fan_in must be >= 1");
  BasicTensor<T> t(shape);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

bool broadcastable(const Shape& a, const Shape& b) noexcept {
  if (a == b) return true;
  return b.n == a.n && b.c == a.c && b.h == 1 && b.w == 1;
}

template <typename T>
void elementwise_into(const BasicTensor<T>& a, const BasicTensor<T>& b, Elementwise kind,
                      BasicTensor<T>& out) {
  if (!broadcastable(a.shape(), b.shape()))
    fail(ErrorKind::kShape, "elementwise: incompatible shapes " + a.shape().str() + " and " + b.shape().str());
  out.reshape_storage(a.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  if (a.shape() == b.shape()) {
    const std::int64_t count = a.numel();
    if (kind == Elementwise::kAdd) {
      for (std::int64_t i = 0; i < count; ++i) po[i] = pa[i] + pb[i];
    } else {
      for (std::int64_t i = 0; i < count; ++i) po[i] = pa[i] * pb[i];
    }
    return;
  }
  const std::int64_t planes = a.shape().n * a.shape().c;
  const std::int64_t hw = a.shape().spatial();
  for (std::int64_t p = 0; p < planes; ++p) {
    const T s = pb[p];
    const T* src = pa + p * hw;
    T* dst = po + p * hw;
    if (kind == Elementwise::kAdd) {
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i] + s;
    } else {
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = src[i] * s;
    }
  }
}

template <typename T>
BasicTensor<T> elementwise(const BasicTensor<T>& a, const BasicTensor<T>& b, Elementwise kind) {
  BasicTensor<T> out;
  elementwise_into(a, b, kind, out);
  return out;
}

template <typename T>
void concat_channels_into(std::span<const BasicTensor<T>* const> parts, BasicTensor<T>& out) {
  if (parts.empty()) fail(ErrorKind::kShape, "concat_channels: no inputs");
  const Shape& first = parts.front()->shape();
  Shape shape = first;
  shape.c = 0;
  for (const auto* p : parts) {
    const Shape& s = p->shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w)
      fail(ErrorKind::kShape, "concat_channels: mismatched shapes " + first.str() + " and " + s.str());
    shape.c += s.c;
  }
  out.reshape_storage(shape);
  const std::int64_t hw = shape.spatial();
  for (std::int64_t n = 0; n < shape.n; ++n) {
    T* dst = out.ptr() + n * shape.c * hw;
    for (const auto* p : parts) {
      const std::int64_t block = p->shape().c * hw;
      const T* src = p->ptr() + n * block;
      std::copy(src, src + block, dst);
      dst += block;
    }
  }
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const BasicTensor<T>* parts[] = {&a, &b};
  BasicTensor<T> out;
  concat_channels_into<T>(parts, out);
  return out;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>& x,
                                                         std::int64_t first_channels) {
  const Shape& s = x.shape();
  if (first_channels < 1 || first_channels >= s.c)
    fail(ErrorKind::kShape, "split_channels: split point outside (0, c)");
  BasicTensor<T> a(Shape{s.n, first_channels, s.h, s.w});
  BasicTensor<T> b(Shape{s.n, s.c - first_channels, s.h, s.w});
  const std::int64_t hw = s.spatial();
  for (std::int64_t n = 0; n < s.n; ++n) {
    const T* src = x.ptr() + n * s.c * hw;
    std::copy(src, src + first_channels * hw, a.ptr() + n * first_channels * hw);
    std::copy(src + first_channels * hw, src + s.c * hw, b.ptr() + n * (s.c - first_channels) * hw);
  }
  return {std::move(a), std::move(b)};
}

#define BISENET_INSTANTIATE(T)                                                                      \
  template BasicTensor<T> zeros<T>(const Shape&);                                                   \
  template BasicTensor<T> init_kaiming<T>(const Shape&, std::int64_t, Rng&);                        \
  template BasicTensor<T> elementwise<T>(const BasicTensor<T>&, const BasicTensor<T>&, Elementwise); \
  template void elementwise_into<T>(const BasicTensor<T>&, const BasicTensor<T>&, Elementwise,      \
                                    BasicTensor<T>&);                                               \
  template BasicTensor<T> concat_channels<T>(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template void concat_channels_into<T>(std::span<const BasicTensor<T>* const>, BasicTensor<T>&);   \
  template std::pair<BasicTensor<T>, BasicTensor<T>> split_channels<T>(const BasicTensor<T>&, std::int64_t);

BISENET_INSTANTIATE(float)
BISENET_INSTANTIATE(double)
#undef BISENET_INSTANTIATE

}  // namespace bisenet
