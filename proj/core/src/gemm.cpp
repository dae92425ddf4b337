#include "gemm.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <optional>

namespace bisenet::detail {

namespace {

using Eigen::ColMajor;
using Eigen::Dynamic;
using Eigen::Index;
using Eigen::RowMajor;

template <typename T>
using Blocking = Eigen::internal::gemm_blocking_space<ColMajor, T, T, Dynamic, Dynamic, Dynamic>;

template <typename T, int LhsOrder, int RhsOrder>
void run_product(Index rows, Index cols, Index depth, const T* lhs, Index lhs_stride, const T* rhs,
                 Index rhs_stride, T* res, Index res_stride, T alpha, Blocking<T>& blocking) {
  Eigen::internal::general_matrix_matrix_product<Index, T, LhsOrder, false, T, RhsOrder, false,
                                                 ColMajor, 1>::run(rows, cols, depth, lhs,
                                                                   lhs_stride, rhs, rhs_stride, res,
                                                                   1, res_stride, alpha, blocking,
                                                                   nullptr);
}

}  // namespace

template <typename T>
struct GemmScratch<T>::Impl {
  // A handful of recently used (rows, cols, depth) blockings. Convolution
  // layers call with at most three distinct shapes (forward, two backward).
  struct Slot {
    std::array<Index, 3> dims{};
    std::optional<Blocking<T>> blocking;
  };
  std::array<Slot, 4> slots;
  std::size_t next = 0;

  Blocking<T>& get(Index rows, Index cols, Index depth) {
    const std::array<Index, 3> dims{rows, cols, depth};
    for (auto& slot : slots) {
      if (slot.blocking && slot.dims == dims) return *slot.blocking;
    }
    Slot& slot = slots[next];
    next = (next + 1) % slots.size();
    slot.dims = dims;
    slot.blocking.reset();
    slot.blocking.emplace(rows, cols, depth, 1, false);
    slot.blocking->allocateAll();
    return *slot.blocking;
  }
};

template <typename T>
GemmScratch<T>::GemmScratch() : impl_(std::make_unique<Impl>()) {}
template <typename T>
GemmScratch<T>::~GemmScratch() = default;
template <typename T>
GemmScratch<T>::GemmScratch(GemmScratch&&) noexcept = default;
template <typename T>
GemmScratch<T>& GemmScratch<T>::operator=(GemmScratch&&) noexcept = default;

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, T alpha,
          const T* a, std::int64_t lda, const T* b, std::int64_t ldb, T beta, T* c, std::int64_t ldc,
          GemmScratch<T>& scratch) {
  if (m == 0 || n == 0) return;
  // Scale C first; the Eigen kernel accumulates.
  if (beta == T(0)) {
    for (std::int64_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, T(0));
  } else if (beta != T(1)) {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
  }
  if (k == 0) return;
  // A row-major buffer read as column-major is the transpose, so the
  // row-major product C = op(A) op(B) is computed as the column-major
  // product C^T (n x m) = op(B)^T (n x k) * op(A)^T (k x m).
  Blocking<T>& blocking = scratch.impl().get(n, m, k);
  if (!trans_b && !trans_a) {
    run_product<T, ColMajor, ColMajor>(n, m, k, b, ldb, a, lda, c, ldc, alpha, blocking);
  } else if (!trans_b && trans_a) {
    run_product<T, ColMajor, RowMajor>(n, m, k, b, ldb, a, lda, c, ldc, alpha, blocking);
  } else if (trans_b && !trans_a) {
    run_product<T, RowMajor, ColMajor>(n, m, k, b, ldb, a, lda, c, ldc, alpha, blocking);
  } else {
    run_product<T, RowMajor, RowMajor>(n, m, k, b, ldb, a, lda, c, ldc, alpha, blocking);
  }
}

template class GemmScratch<float>;
template class GemmScratch<double>;
template void gemm<float>(bool, bool, std::int64_t, std::int64_t, std::int64_t, float, const float*,
                          std::int64_t, const float*, std::int64_t, float, float*, std::int64_t,
                          GemmScratch<float>&);
template void gemm<double>(bool, bool, std::int64_t, std::int64_t, std::int64_t, double,
                           const double*, std::int64_t, const double*, std::int64_t, double, double*,
                           std::int64_t, GemmScratch<double>&);

}  // namespace bisenet::detail
