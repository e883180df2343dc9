#include "kdbd/simd.hpp"

#include <algorithm>

namespace kdbd::simd::detail {
namespace {

template <typename T>
T dot_scalar(std::size_t n, const T* a, const T* b) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void axpy_scalar(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void gemm_nn_scalar(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                    bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      if (aip == T{0}) continue;
      axpy_scalar(n, aip, b + p * n, crow);
    }
  }
}

template <typename T>
void gemm_nt_scalar(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                    bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T v = dot_scalar(k, a + i * k, b + j * k);
      c[i * n + j] = accumulate ? c[i * n + j] + v : v;
    }
  }
}

template <typename T>
void gemm_tn_scalar(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                    bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < m; ++i) {
      const T api = a[p * m + i];
      if (api == T{0}) continue;
      axpy_scalar(n, api, b + p * n, c + i * n);
    }
  }
}

}  // namespace

template <typename T>
const Kernels<T>& scalar_kernels() {
  static const Kernels<T> table{&gemm_nn_scalar<T>, &gemm_nt_scalar<T>, &gemm_tn_scalar<T>,
                                &dot_scalar<T>, &axpy_scalar<T>};
  return table;
}

template const Kernels<float>& scalar_kernels<float>();
template const Kernels<double>& scalar_kernels<double>();

}  // namespace kdbd::simd::detail
