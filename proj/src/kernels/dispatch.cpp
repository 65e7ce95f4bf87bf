#include <cstdlib>
#include <stdexcept>
#include <string>

#include "satflow/kernels.hpp"

namespace satflow::kernels {
namespace {

Isa detect() {
  if (const char* env = std::getenv("SATFLOW_ISA"); env != nullptr && std::string(env) == "scalar") {
    return Isa::scalar;
  }
  return isa_supported(Isa::avx2) ? Isa::avx2 : Isa::scalar;
}

Isa& current() {
  static Isa isa = detect();
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_supported(Isa isa) {
  if (isa == Isa::scalar) return true;
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() { return current(); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("kernels: instruction set '" + std::string(isa_name(isa)) +
                                "' not supported on this CPU");
  }
  current() = isa;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  if (current() == Isa::avx2) {
    avx2::gemm_nn(m, n, k, a, b, c, accumulate);
  } else {
    scalar::gemm_nn(m, n, k, a, b, c, accumulate);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  if (current() == Isa::avx2) {
    avx2::gemm_nt(m, n, k, a, b, c, accumulate);
  } else {
    scalar::gemm_nt(m, n, k, a, b, c, accumulate);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  if (current() == Isa::avx2) {
    avx2::gemm_tn(m, n, k, a, b, c, accumulate);
  } else {
    scalar::gemm_tn(m, n, k, a, b, c, accumulate);
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("kernels::axpy: length mismatch");
  if (current() == Isa::avx2) {
    avx2::axpy(x.size(), alpha, x.data(), y.data());
  } else {
    scalar::axpy(x.size(), alpha, x.data(), y.data());
  }
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("kernels::dot: length mismatch");
  return current() == Isa::avx2 ? avx2::dot(x.size(), x.data(), y.data())
                                : scalar::dot(x.size(), x.data(), y.data());
}

}  // namespace satflow::kernels
