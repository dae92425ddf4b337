#pragma once

// Dense NCHW tensors, the deterministic random source used for weight
// initialisation, and the elementwise algebra the network is built from.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bisenet/error.hpp"

namespace bisenet {

struct Shape {
  std::int64_t n = 1;
  std::int64_t c = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  // Throws kSize when any extent is < 1 or the element count overflows.
  std::int64_t numel() const;
  std::int64_t spatial() const { return h * w; }
  bool valid() const noexcept;

  friend bool operator==(const Shape&, const Shape&) = default;
  std::string str() const;
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> values);

  const Shape& shape() const noexcept { return shape_; }
  bool empty() const noexcept { return data_.empty(); }
  std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  std::int64_t offset(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const noexcept {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) noexcept {
    return data_[static_cast<std::size_t>(offset(n, c, h, w))];
  }
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const noexcept {
    return data_[static_cast<std::size_t>(offset(n, c, h, w))];
  }
  T& operator[](std::int64_t i) noexcept { return data_[static_cast<std::size_t>(i)]; }
  T operator[](std::int64_t i) const noexcept { return data_[static_cast<std::size_t>(i)]; }

  // Plane (n, c) as a contiguous h*w span.
  std::span<T> plane(std::int64_t n, std::int64_t c) noexcept {
    return std::span<T>(data_).subspan(static_cast<std::size_t>(offset(n, c, 0, 0)),
                                       static_cast<std::size_t>(shape_.spatial()));
  }
  std::span<const T> plane(std::int64_t n, std::int64_t c) const noexcept {
    return std::span<const T>(data_).subspan(static_cast<std::size_t>(offset(n, c, 0, 0)),
                                             static_cast<std::size_t>(shape_.spatial()));
  }

  // Changes the shape, reusing storage when the element count allows it.
  // Contents are unspecified afterwards unless the count is unchanged.
  void reshape_storage(const Shape& shape);
  void fill(T value);

  bool has_grad() const noexcept { return !grad_.empty(); }
  std::span<T> grad() noexcept { return grad_; }
  std::span<const T> grad() const noexcept { return grad_; }
  // Allocates a zeroed gradient buffer if none exists.
  std::span<T> ensure_grad();
  void drop_grad() noexcept { grad_.clear(); grad_.shrink_to_fit(); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> values(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(values));
  }

  // Detaches the storage, leaving the tensor empty.
  std::vector<T> release() noexcept;
  // Adopts `storage` (resized to the shape's element count).
  void adopt(const Shape& shape, std::vector<T>&& storage);

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<T> data_;
  std::vector<T> grad_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// xoshiro256** seeded through splitmix64. Streams depend only on the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  // Independent stream for (seed, index) pairs, e.g. per-sample augmentation.
  static Rng derive(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, bound); bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  // Standard normal via the Marsaglia polar method.
  double normal();

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

enum class Elementwise { kAdd, kMul };

template <typename T>
BasicTensor<T> zeros(const Shape& shape);

// He-normal: N(0, sqrt(2 / fan_in)).
template <typename T>
BasicTensor<T> init_kaiming(const Shape& shape, std::int64_t fan_in, Rng& rng);

// b must equal a's shape or be (n, c, 1, 1) against a's (n, c, h, w).
template <typename T>
BasicTensor<T> elementwise(const BasicTensor<T>& a, const BasicTensor<T>& b, Elementwise kind);
template <typename T>
void elementwise_into(const BasicTensor<T>& a, const BasicTensor<T>& b, Elementwise kind,
                      BasicTensor<T>& out);
bool broadcastable(const Shape& a, const Shape& b) noexcept;

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
void concat_channels_into(std::span<const BasicTensor<T>* const> parts, BasicTensor<T>& out);

// Inverse of concat_channels: splits after `first_channels` channels.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> split_channels(const BasicTensor<T>& x,
                                                         std::int64_t first_channels);

}  // namespace bisenet

namespace bisenet {

// Per-pixel class indices, (n, h, w) row-major. Values >= 0; the ignore
// value (255 by default) marks void pixels.
struct LabelMap {
  std::int64_t n = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(std::int64_t n_, std::int64_t h_, std::int64_t w_, std::int32_t fill = 0)
      : n(n_), h(h_), w(w_), data(static_cast<std::size_t>(n_ * h_ * w_), fill) {}

  std::int32_t& at(std::int64_t b, std::int64_t y, std::int64_t x) {
    return data[static_cast<std::size_t>((b * h + y) * w + x)];
  }
  std::int32_t at(std::int64_t b, std::int64_t y, std::int64_t x) const {
    return data[static_cast<std::size_t>((b * h + y) * w + x)];
  }
  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

inline constexpr std::int32_t kIgnoreLabel = 255;

}  // namespace bisenet
