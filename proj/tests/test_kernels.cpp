#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "satflow/kernels.hpp"

namespace kn = satflow::kernels;

namespace {

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Shapes cover the full 4x8 register block, every row remainder, the 4-wide and
// scalar column tails, and the widths the flow model actually uses.
const std::vector<std::array<std::size_t, 3>> kShapes = {
    {1, 1, 1},   {1, 3, 12},  {1, 64, 12}, {2, 7, 5},    {3, 12, 64}, {4, 8, 3},
    {5, 9, 17},  {7, 4, 1},   {16, 64, 64}, {33, 30, 45}, {64, 160, 45}, {129, 3, 16}};

class KernelEquivalence : public ::testing::Test {
 protected:
  void SetUp() override {
    if (!kn::isa_supported(kn::Isa::avx2)) GTEST_SKIP() << "AVX2/FMA not available";
  }
};

}  // namespace

TEST_F(KernelEquivalence, GemmNnMatchesScalar) {
  std::mt19937_64 rng(1);
  for (auto [m, n, k] : kShapes) {
    const auto a = random_vector(m * k, rng);
    const auto b = random_vector(k * n, rng);
    for (bool acc : {false, true}) {
      auto c0 = random_vector(m * n, rng);
      auto c1 = c0;
      kn::scalar::gemm_nn(m, n, k, a.data(), b.data(), c0.data(), acc);
      kn::avx2::gemm_nn(m, n, k, a.data(), b.data(), c1.data(), acc);
      EXPECT_LT(max_abs_diff(c0, c1), 1e-12 * static_cast<double>(k + 1)) << m << "x" << n << "x" << k;
    }
  }
}

TEST_F(KernelEquivalence, GemmNtMatchesScalar) {
  std::mt19937_64 rng(2);
  for (auto [m, n, k] : kShapes) {
    const auto a = random_vector(m * k, rng);
    const auto b = random_vector(n * k, rng);
    for (bool acc : {false, true}) {
      auto c0 = random_vector(m * n, rng);
      auto c1 = c0;
      kn::scalar::gemm_nt(m, n, k, a.data(), b.data(), c0.data(), acc);
      kn::avx2::gemm_nt(m, n, k, a.data(), b.data(), c1.data(), acc);
      EXPECT_LT(max_abs_diff(c0, c1), 1e-12 * static_cast<double>(k + 1)) << m << "x" << n << "x" << k;
    }
  }
}

TEST_F(KernelEquivalence, GemmTnMatchesScalar) {
  std::mt19937_64 rng(3);
  for (auto [m, n, k] : kShapes) {
    const auto a = random_vector(k * m, rng);
    const auto b = random_vector(k * n, rng);
    for (bool acc : {false, true}) {
      auto c0 = random_vector(m * n, rng);
      auto c1 = c0;
      kn::scalar::gemm_tn(m, n, k, a.data(), b.data(), c0.data(), acc);
      kn::avx2::gemm_tn(m, n, k, a.data(), b.data(), c1.data(), acc);
      EXPECT_LT(max_abs_diff(c0, c1), 1e-12 * static_cast<double>(k + 1)) << m << "x" << n << "x" << k;
    }
  }
}

TEST_F(KernelEquivalence, AxpyAndDotMatchScalar) {
  std::mt19937_64 rng(4);
  for (std::size_t n : {0u, 1u, 3u, 4u, 5u, 8u, 63u, 64u, 1001u}) {
    const auto x = random_vector(n, rng);
    auto y0 = random_vector(n, rng);
    auto y1 = y0;
    kn::scalar::axpy(n, -0.75, x.data(), y0.data());
    kn::avx2::axpy(n, -0.75, x.data(), y1.data());
    EXPECT_LT(max_abs_diff(y0, y1), 1e-14);
    EXPECT_NEAR(kn::scalar::dot(n, x.data(), y0.data()), kn::avx2::dot(n, x.data(), y0.data()),
                1e-12 * static_cast<double>(n + 1));
  }
}

TEST(Kernels, ScalarGemmAgainstNaiveTripleLoop) {
  std::mt19937_64 rng(5);
  const std::size_t m = 5, n = 6, k = 7;
  const auto a = random_vector(m * k, rng);
  const auto b = random_vector(k * n, rng);
  std::vector<double> c(m * n);
  kn::scalar::gemm_nn(m, n, k, a.data(), b.data(), c.data(), false);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      EXPECT_NEAR(c[i * n + j], s, 1e-14);
    }
  }
}

TEST(Kernels, DispatchOverrideAndRestore) {
  const auto before = kn::active_isa();
  kn::set_active_isa(kn::Isa::scalar);
  EXPECT_EQ(kn::active_isa(), kn::Isa::scalar);
  const std::vector<double> x{1.0, 2.0, 3.0};
  EXPECT_DOUBLE_EQ(kn::dot(x, x), 14.0);
  kn::set_active_isa(before);
  EXPECT_EQ(kn::active_isa(), before);
  std::vector<double> y{1.0, 1.0};
  EXPECT_THROW(kn::axpy(1.0, x, y), std::invalid_argument);
}
