#pragma once

#include <cstdint>
#include <memory>

namespace bisenet::detail {

// Row-major C(MxN) = alpha * op(A) * op(B) + beta * C.
// A is stored (M x K) or, when trans_a, (K x M); likewise for B.
//
// Blocking buffers live in the scratch object so repeated calls with the
// same dimensions perform no heap allocation.
template <typename T>
class GemmScratch {
 public:
  GemmScratch();
  ~GemmScratch();
  GemmScratch(GemmScratch&&) noexcept;
  GemmScratch& operator=(GemmScratch&&) noexcept;

  struct Impl;
  Impl& impl() { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha,
          const T* a, std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc,
          GemmScratch<T>& scratch);

}  // namespace bisenet::detail
