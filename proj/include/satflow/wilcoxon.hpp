#pragma once
// Two-sided Wilcoxon signed-rank test for paired samples.

#include <cstddef>
#include <span>

namespace satflow::eval {

struct WilcoxonResult {
  double p = 1.0;
  /// Rank sums of the positive and negative differences a - b.
  double w_plus = 0.0;
  double w_minus = 0.0;
  /// Nonzero differences used.
  std::size_t n = 0;
  bool exact = false;
  /// Every difference was zero; p is reported as 1.
  bool all_zero = false;
};

/// Zero differences are dropped and tied magnitudes get mid-ranks. For n <= 25
/// the p-value comes from the exact permutation distribution of W+, otherwise
/// from the tie-corrected normal approximation without continuity correction.
/// Throws std::invalid_argument unless the inputs have equal length >= 5.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

}  // namespace satflow::eval
