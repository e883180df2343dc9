#pragma once
// Dense arithmetic kernels used by the convolution and dense layers.
//
// Every kernel has a scalar reference implementation and, on x86-64, an AVX2+FMA
// variant. The active table is chosen once at startup from the CPU feature
// bits; KDBD_FORCE_SCALAR=1 in the environment pins the scalar path. All
// matrices are row-major and densely packed.

#include <cstddef>
#include <string_view>

namespace kdbd::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

template <typename T>
struct Kernels {
  // C[m x n] (+)= A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                  bool accumulate);
  // C[m x n] (+)= A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                  bool accumulate);
  // C[m x n] (+)= A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
                  bool accumulate);
  T (*dot)(std::size_t n, const T* a, const T* b);
  // y += alpha * x
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
};

/// True when the running CPU (and this build) can execute `isa`.
bool isa_available(Isa isa);

/// The table currently used by the network code.
Isa active_isa();

/// Switches the active table. Throws std::invalid_argument if `isa` is unavailable.
void set_active_isa(Isa isa);

template <typename T>
const Kernels<T>& kernels_for(Isa isa);

template <typename T>
const Kernels<T>& kernels() {
  return kernels_for<T>(active_isa());
}

namespace detail {
template <typename T>
const Kernels<T>& scalar_kernels();
template <typename T>
const Kernels<T>* avx2_kernels();  // nullptr when not compiled in
}  // namespace detail

}  // namespace kdbd::simd
