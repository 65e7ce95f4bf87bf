#pragma once
// Central-difference gradient verification.

#include <functional>
#include <string>
#include <vector>

#include "satflow/autodiff.hpp"

namespace satflow::ad {

struct GradcheckOptions {
  double step = 1e-6;
  double tolerance = 1e-5;
  /// Denominator floor of the relative error. Entries with |grad| below it are
  /// judged by absolute error tolerance * floor = 1e-7, which sits above the
  /// central-difference roundoff eps * |loss| / step of O(10) losses.
  double floor = 1e-2;
  /// Check at most this many entries per parameter (evenly strided); 0 = all.
  std::size_t max_entries = 0;
};

struct GradcheckReport {
  bool passed = true;
  double worst_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// `build` must record a scalar loss on the given tape deterministically from
/// the parameters. Inputs to differentiate against are passed as Parameters.
using LossBuilder = std::function<Var(Tape&)>;

GradcheckReport gradcheck(const LossBuilder& build, const std::vector<Parameter*>& params,
                          const GradcheckOptions& opts = {});

}  // namespace satflow::ad
