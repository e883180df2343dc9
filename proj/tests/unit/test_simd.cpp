#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "kdbd/network.hpp"
#include "kdbd/random.hpp"
#include "kdbd/simd.hpp"

using namespace kdbd;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  return v;
}

// Plain triple loops; a(i, p) and b(p, j) abstract over the transposes.
template <typename T, typename A, typename B>
std::vector<T> naive_gemm(std::size_t m, std::size_t n, std::size_t k, A a, B b, const std::vector<T>& c0,
                          bool acc) {
  std::vector<T> c(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double s = acc ? c0[i * n + j] : 0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(a(i, p)) * b(p, j);
      c[i * n + j] = static_cast<T>(s);
    }
  }
  return c;
}

template <typename T>
void check_table(const simd::Kernels<T>& kern, double tol) {
  const std::size_t shapes[][3] = {{1, 1, 1}, {3, 5, 7}, {17, 9, 33}, {8, 16, 64}, {31, 2, 13}};
  for (const auto& s : shapes) {
    const std::size_t m = s[0], n = s[1], k = s[2];
    for (bool acc : {false, true}) {
      const auto a = random_vec<T>(m * k, m * 100 + k);
      const auto at = random_vec<T>(k * m, m * 101 + k);
      const auto b = random_vec<T>(k * n, n * 7 + k);
      const auto bt = random_vec<T>(n * k, n * 9 + k);
      const auto c0 = random_vec<T>(m * n, 5);

      auto c = c0;
      kern.gemm_nn(m, n, k, a.data(), b.data(), c.data(), acc);
      auto ref = naive_gemm<T>(m, n, k, [&](auto i, auto p) { return a[i * k + p]; },
                               [&](auto p, auto j) { return b[p * n + j]; }, c0, acc);
      for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], tol) << "gemm_nn " << m << n << k;

      c = c0;
      kern.gemm_nt(m, n, k, a.data(), bt.data(), c.data(), acc);
      ref = naive_gemm<T>(m, n, k, [&](auto i, auto p) { return a[i * k + p]; },
                          [&](auto p, auto j) { return bt[j * k + p]; }, c0, acc);
      for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], tol) << "gemm_nt";

      c = c0;
      kern.gemm_tn(m, n, k, at.data(), b.data(), c.data(), acc);
      ref = naive_gemm<T>(m, n, k, [&](auto i, auto p) { return at[p * m + i]; },
                          [&](auto p, auto j) { return b[p * n + j]; }, c0, acc);
      for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], tol) << "gemm_tn";
    }
  }
  for (std::size_t n : {0u, 1u, 7u, 8u, 9u, 100u}) {
    const auto x = random_vec<T>(n, n + 1);
    const auto y0 = random_vec<T>(n, n + 2);
    long double d = 0;
    for (std::size_t i = 0; i < n; ++i) d += static_cast<long double>(x[i]) * y0[i];
    EXPECT_NEAR(kern.dot(n, x.data(), y0.data()), static_cast<double>(d), tol);
    auto y = y0;
    kern.axpy(n, T(0.5), x.data(), y.data());
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y[i], y0[i] + 0.5 * x[i], tol);
  }
}

}  // namespace

TEST(Simd, ScalarKernelsMatchNaiveLoops) {
  check_table(simd::kernels_for<float>(simd::Isa::scalar), 1e-4);
  check_table(simd::kernels_for<double>(simd::Isa::scalar), 1e-12);
}

TEST(Simd, Avx2KernelsMatchNaiveLoops) {
  if (!simd::isa_available(simd::Isa::avx2)) GTEST_SKIP() << "AVX2 not available";
  check_table(simd::kernels_for<float>(simd::Isa::avx2), 1e-4);
  check_table(simd::kernels_for<double>(simd::Isa::avx2), 1e-12);
}

TEST(Simd, NetworkLogitsAgreeAcrossIsas) {
  if (!simd::isa_available(simd::Isa::avx2)) GTEST_SKIP() << "AVX2 not available";
  nn::ArchSpec arch;
  const auto params = nn::init_network<float>(arch, nn::Role::student, 3);
  Tensor x({4, 3, 16, 16});
  Rng rng(4);
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform());
  const auto before = simd::active_isa();
  simd::set_active_isa(simd::Isa::scalar);
  const auto scalar = nn::infer(params, x);
  simd::set_active_isa(simd::Isa::avx2);
  const auto vec = nn::infer(params, x);
  simd::set_active_isa(before);
  for (std::size_t i = 0; i < scalar.size(); ++i) EXPECT_NEAR(scalar[i], vec[i], 1e-4);
}

TEST(Simd, UnavailableIsaIsRejected) {
  if (simd::isa_available(simd::Isa::avx2)) GTEST_SKIP() << "AVX2 present";
  EXPECT_THROW(simd::set_active_isa(simd::Isa::avx2), std::invalid_argument);
}
