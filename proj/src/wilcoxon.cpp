#include "satflow/wilcoxon.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace satflow::eval {

namespace {

constexpr std::size_t kExactLimit = 25;

// P(W+ <= w) and P(W+ >= w) by counting sign assignments. Ranks are doubled so
// that mid-ranks stay integral.
std::pair<double, double> exact_tails(const std::vector<double>& ranks, double w_plus) {
  std::vector<long> r2;
  long total = 0;
  for (double r : ranks) {
    r2.push_back(std::lround(2.0 * r));
    total += r2.back();
  }
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  long reach = 0;
  for (long r : r2) {
    for (long s = reach; s >= 0; --s) count[static_cast<std::size_t>(s + r)] += count[static_cast<std::size_t>(s)];
    reach += r;
  }
  const long w = std::lround(2.0 * w_plus);
  const double all = std::ldexp(1.0, static_cast<int>(ranks.size()));
  double lo = 0.0, hi = 0.0;
  for (long s = 0; s <= total; ++s) {
    if (s <= w) lo += count[static_cast<std::size_t>(s)];
    if (s >= w) hi += count[static_cast<std::size_t>(s)];
  }
  return {lo / all, hi / all};
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: samples differ in length");
  if (a.size() < 5) throw std::invalid_argument("wilcoxon: need at least 5 pairs");
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double v = a[i] - b[i];
    if (v != 0.0) d.push_back(v);
  }
  WilcoxonResult res;
  res.n = d.size();
  if (d.empty()) {
    res.all_zero = true;
    return res;
  }

  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
  std::vector<double> rank(d.size());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  for (std::size_t i = 0; i < d.size(); ++i) (d[i] > 0.0 ? res.w_plus : res.w_minus) += rank[i];

  const double n = static_cast<double>(res.n);
  if (res.n <= kExactLimit) {
    res.exact = true;
    const auto [lo, hi] = exact_tails(rank, res.w_plus);
    res.p = std::min(1.0, 2.0 * std::min(lo, hi));
  } else {
    const double mean = n * (n + 1.0) / 4.0;
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    const double z = (res.w_plus - mean) / std::sqrt(var);
    res.p = std::min(1.0, std::erfc(std::abs(z) / std::sqrt(2.0)));
  }
  return res;
}

}  // namespace satflow::eval
