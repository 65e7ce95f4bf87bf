// AVX2/FMA kernels. This translation unit is compiled with -mavx2 -mfma and must
// only be entered after the dispatcher has confirmed CPU support.

#include <immintrin.h>

#include "satflow/kernels.hpp"

namespace satflow::kernels::avx2 {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// R rows of C starting at `c`; A element (r, p) lives at a[r * rs + p * cs].
template <int R>
inline void row_block(std::size_t n, std::size_t k, const double* a, std::size_t rs,
                      std::size_t cs, const double* b, double* c, bool accumulate) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d c0[R];
    __m256d c1[R];
    for (int r = 0; r < R; ++r) {
      c0[r] = accumulate ? _mm256_loadu_pd(c + r * n + j) : _mm256_setzero_pd();
      c1[r] = accumulate ? _mm256_loadu_pd(c + r * n + j + 4) : _mm256_setzero_pd();
    }
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
      const __m256d b1 = _mm256_loadu_pd(b + p * n + j + 4);
      for (int r = 0; r < R; ++r) {
        const __m256d av = _mm256_broadcast_sd(a + r * rs + p * cs);
        c0[r] = _mm256_fmadd_pd(av, b0, c0[r]);
        c1[r] = _mm256_fmadd_pd(av, b1, c1[r]);
      }
    }
    for (int r = 0; r < R; ++r) {
      _mm256_storeu_pd(c + r * n + j, c0[r]);
      _mm256_storeu_pd(c + r * n + j + 4, c1[r]);
    }
  }
  for (; j + 4 <= n; j += 4) {
    __m256d c0[R];
    for (int r = 0; r < R; ++r) {
      c0[r] = accumulate ? _mm256_loadu_pd(c + r * n + j) : _mm256_setzero_pd();
    }
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
      for (int r = 0; r < R; ++r) {
        c0[r] = _mm256_fmadd_pd(_mm256_broadcast_sd(a + r * rs + p * cs), b0, c0[r]);
      }
    }
    for (int r = 0; r < R; ++r) _mm256_storeu_pd(c + r * n + j, c0[r]);
  }
  for (; j < n; ++j) {
    for (int r = 0; r < R; ++r) {
      double s = accumulate ? c[r * n + j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[r * rs + p * cs] * b[p * n + j];
      c[r * n + j] = s;
    }
  }
}

void strided_gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t rs,
                  std::size_t cs, const double* b, double* c, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) row_block<4>(n, k, a + i * rs, rs, cs, b, c + i * n, accumulate);
  switch (m - i) {
    case 3: row_block<3>(n, k, a + i * rs, rs, cs, b, c + i * n, accumulate); break;
    case 2: row_block<2>(n, k, a + i * rs, rs, cs, b, c + i * n, accumulate); break;
    case 1: row_block<1>(n, k, a + i * rs, rs, cs, b, c + i * n, accumulate); break;
    default: break;
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  strided_gemm(m, n, k, a, k, 1, b, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  strided_gemm(m, n, k, a, 1, m, b, c, accumulate);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      __m256d s0 = _mm256_setzero_pd();
      __m256d s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd();
      __m256d s3 = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d av = _mm256_loadu_pd(ai + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      double r0 = hsum(s0);
      double r1 = hsum(s1);
      double r2 = hsum(s2);
      double r3 = hsum(s3);
      for (; p < k; ++p) {
        r0 += ai[p] * b0[p];
        r1 += ai[p] * b1[p];
        r2 += ai[p] * b2[p];
        r3 += ai[p] * b3[p];
      }
      double* ci = c + i * n + j;
      if (accumulate) {
        ci[0] += r0;
        ci[1] += r1;
        ci[2] += r2;
        ci[3] += r3;
      } else {
        ci[0] = r0;
        ci[1] = r1;
        ci[2] = r2;
        ci[3] = r3;
      }
    }
    for (; j < n; ++j) {
      const double s = dot(k, ai, b + j * k);
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double dot(std::size_t n, const double* x, const double* y) {
  __m256d s = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) s = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s);
  double r = hsum(s);
  for (; i < n; ++i) r += x[i] * y[i];
  return r;
}

}  // namespace satflow::kernels::avx2
