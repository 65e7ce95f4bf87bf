#include "satflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace satflow::ad {

GradcheckReport gradcheck(const LossBuilder& build, const std::vector<Parameter*>& params,
                          const GradcheckOptions& opts) {
  for (Parameter* p : params) p->zero_grad();
  Tape tape;
  tape.backward(build(tape));
  std::vector<std::vector<double>> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad.data);

  auto eval = [&] {
    Tape t;
    t.set_param_grads(false);
    return t.scalar(build(t));
  };

  GradcheckReport rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    const std::size_t n = p.value.numel();
    const std::size_t stride =
        opts.max_entries == 0 || n <= opts.max_entries ? 1 : (n + opts.max_entries - 1) / opts.max_entries;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = p.value.data[i];
      p.value.data[i] = orig + opts.step;
      const double fp = eval();
      p.value.data[i] = orig - opts.step;
      const double fm = eval();
      p.value.data[i] = orig;
      const double num = (fp - fm) / (2.0 * opts.step);
      const double ana = analytic[pi][i];
      const double err =
          std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), opts.floor});
      ++rep.checked;
      const double e = std::isnan(err) ? INFINITY : err;
      if (rep.checked == 1 || e > rep.worst_error) {
        rep.worst_error = e;
        rep.worst_param = p.name;
        rep.worst_index = i;
        rep.analytic = ana;
        rep.numeric = num;
      }
    }
  }
  rep.passed = rep.worst_error < opts.tolerance;
  return rep;
}

}  // namespace satflow::ad
