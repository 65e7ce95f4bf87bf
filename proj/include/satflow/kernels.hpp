#pragma once
// Dense double-precision kernels behind the tensor engine.
//
// Every kernel has a portable scalar reference and an AVX2/FMA variant. The
// variant is chosen once per process from the CPU feature bits; setting the
// environment variable SATFLOW_ISA=scalar forces the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace satflow::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// True when this process can execute the given variant.
bool isa_supported(Isa isa);

/// The variant currently used by the dispatching entry points below.
Isa active_isa();

/// Override the dispatch target. Throws std::invalid_argument if the CPU lacks
/// the requested instruction set.
void set_active_isa(Isa isa);

// All matrices are row-major and densely packed. When `accumulate` is false the
// output is overwritten, otherwise the product is added to it.

/// C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
/// C[m,n] (+)= A[m,k] * B[n,k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
/// C[m,n] (+)= A[k,m]^T * B[k,n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);

/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
double dot(std::span<const double> x, std::span<const double> y);

// Backend entry points, exposed so the equivalence tests can call both sides.
#define SATFLOW_KERNEL_DECLS                                                                  \
  void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, \
               double* c, bool accumulate);                                                   \
  void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, \
               double* c, bool accumulate);                                                   \
  void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, \
               double* c, bool accumulate);                                                   \
  void axpy(std::size_t n, double alpha, const double* x, double* y);                         \
  double dot(std::size_t n, const double* x, const double* y);

namespace scalar {
SATFLOW_KERNEL_DECLS
}
namespace avx2 {
SATFLOW_KERNEL_DECLS
}

#undef SATFLOW_KERNEL_DECLS

}  // namespace satflow::kernels
