// Compiled with -mavx2 -mfma. Only reached through the dispatch table after a
// successful CPU feature check.
#include "kdbd/simd.hpp"

#include <immintrin.h>

#include <algorithm>

namespace kdbd::simd::detail {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using type = __m256;
  static constexpr std::size_t lanes = 8;
  static type zero() { return _mm256_setzero_ps(); }
  static type set1(float v) { return _mm256_set1_ps(v); }
  static type load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, type v) { _mm256_storeu_ps(p, v); }
  static type fmadd(type a, type b, type c) { return _mm256_fmadd_ps(a, b, c); }
  static type add(type a, type b) { return _mm256_add_ps(a, b); }
  static float hsum(type v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

template <>
struct Vec<double> {
  using type = __m256d;
  static constexpr std::size_t lanes = 4;
  static type zero() { return _mm256_setzero_pd(); }
  static type set1(double v) { return _mm256_set1_pd(v); }
  static type load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, type v) { _mm256_storeu_pd(p, v); }
  static type fmadd(type a, type b, type c) { return _mm256_fmadd_pd(a, b, c); }
  static type add(type a, type b) { return _mm256_add_pd(a, b); }
  static double hsum(type v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
  }
};

template <typename T>
T dot_avx2(std::size_t n, const T* a, const T* b) {
  using V = Vec<T>;
  constexpr std::size_t L = V::lanes;
  auto acc0 = V::zero();
  auto acc1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * L <= n; i += 2 * L) {
    acc0 = V::fmadd(V::load(a + i), V::load(b + i), acc0);
    acc1 = V::fmadd(V::load(a + i + L), V::load(b + i + L), acc1);
  }
  for (; i + L <= n; i += L) acc0 = V::fmadd(V::load(a + i), V::load(b + i), acc0);
  T acc = V::hsum(V::add(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void axpy_avx2(std::size_t n, T alpha, const T* x, T* y) {
  using V = Vec<T>;
  constexpr std::size_t L = V::lanes;
  const auto va = V::set1(alpha);
  std::size_t i = 0;
  for (; i + L <= n; i += L) V::store(y + i, V::fmadd(va, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// Shared inner loop of gemm_nn / gemm_tn: one output row, accumulated over k
// rank-1 updates. `coef(p)` yields the A coefficient for step p.
template <typename T, typename Coef>
void accumulate_row(std::size_t n, std::size_t k, Coef coef, const T* b, T* crow) {
  using V = Vec<T>;
  constexpr std::size_t L = V::lanes;
  std::size_t j = 0;
  for (; j + 4 * L <= n; j += 4 * L) {
    auto c0 = V::load(crow + j);
    auto c1 = V::load(crow + j + L);
    auto c2 = V::load(crow + j + 2 * L);
    auto c3 = V::load(crow + j + 3 * L);
    for (std::size_t p = 0; p < k; ++p) {
      const T s = coef(p);
      if (s == T{0}) continue;
      const auto va = V::set1(s);
      const T* brow = b + p * n + j;
      c0 = V::fmadd(va, V::load(brow), c0);
      c1 = V::fmadd(va, V::load(brow + L), c1);
      c2 = V::fmadd(va, V::load(brow + 2 * L), c2);
      c3 = V::fmadd(va, V::load(brow + 3 * L), c3);
    }
    V::store(crow + j, c0);
    V::store(crow + j + L, c1);
    V::store(crow + j + 2 * L, c2);
    V::store(crow + j + 3 * L, c3);
  }
  for (; j + L <= n; j += L) {
    auto c0 = V::load(crow + j);
    for (std::size_t p = 0; p < k; ++p) {
      const T s = coef(p);
      if (s == T{0}) continue;
      c0 = V::fmadd(V::set1(s), V::load(b + p * n + j), c0);
    }
    V::store(crow + j, c0);
  }
  for (; j < n; ++j) {
    T acc = crow[j];
    for (std::size_t p = 0; p < k; ++p) {
      const T s = coef(p);
      if (s == T{0}) continue;
      acc += s * b[p * n + j];
    }
    crow[j] = acc;
  }
}

template <typename T>
void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                  bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    const T* arow = a + i * k;
    accumulate_row<T>(n, k, [arow](std::size_t p) { return arow[p]; }, b, crow);
  }
}

template <typename T>
void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                  bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const T v = dot_avx2(k, a + i * k, b + j * k);
      c[i * n + j] = accumulate ? c[i * n + j] + v : v;
    }
  }
}

template <typename T>
void gemm_tn_avx2(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                  bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, T{0});
    accumulate_row<T>(n, k, [a, m, i](std::size_t p) { return a[p * m + i]; }, b, crow);
  }
}

}  // namespace

template <typename T>
const Kernels<T>* avx2_kernels() {
  static const Kernels<T> table{&gemm_nn_avx2<T>, &gemm_nt_avx2<T>, &gemm_tn_avx2<T>,
                                &dot_avx2<T>, &axpy_avx2<T>};
  return &table;
}

template const Kernels<float>* avx2_kernels<float>();
template const Kernels<double>* avx2_kernels<double>();

}  // namespace kdbd::simd::detail
