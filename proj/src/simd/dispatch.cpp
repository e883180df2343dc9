#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kdbd/simd.hpp"

namespace kdbd::simd {

namespace detail {
#ifndef KDBD_HAVE_AVX2
template <typename T>
const Kernels<T>* avx2_kernels() {
  return nullptr;
}
template const Kernels<float>* avx2_kernels<float>();
template const Kernels<double>* avx2_kernels<double>();
#endif
}  // namespace detail

namespace {

bool cpu_has_avx2() {
#if defined(KDBD_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return supported;
#else
  return false;
#endif
}

Isa detect_default() {
  if (const char* force = std::getenv("KDBD_FORCE_SCALAR"); force && std::string(force) == "1") {
    return Isa::scalar;
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{detect_default()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
      return cpu_has_avx2();
  }
  return false;
}

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw std::invalid_argument("kernel set '" + std::string(isa_name(isa)) +
                                "' is not available on this CPU/build");
  }
  active().store(isa, std::memory_order_relaxed);
}

template <typename T>
const Kernels<T>& kernels_for(Isa isa) {
  if (isa == Isa::avx2) {
    static const Kernels<T>* table = cpu_has_avx2() ? detail::avx2_kernels<T>() : nullptr;
    if (table) return *table;
    throw std::invalid_argument("avx2 kernels requested but unavailable");
  }
  return detail::scalar_kernels<T>();
}

template const Kernels<float>& kernels_for<float>(Isa);
template const Kernels<double>& kernels_for<double>(Isa);

}  // namespace kdbd::simd
