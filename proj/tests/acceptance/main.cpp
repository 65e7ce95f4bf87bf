// Acceptance suite: prints one PASS/FAIL line per criterion and exits nonzero
// when any selected criterion fails.

#include <chrono>
#include <exception>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "checks.hpp"

using namespace satflow::acceptance;

int main(int argc, char** argv) {
  CLI::App app{"satflow acceptance suite"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  std::size_t runs = 10;
  app.add_option("--work", work, "Directory for datasets, models and run outputs");
  app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 10))->delimiter(',');
  app.add_option("--robustness-runs", runs, "Monte Carlo runs per model")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  Pipeline pipeline(work, runs);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"physics oracles", physics_oracles},
      {"autodiff gradchecks", autodiff_suite},
      {"flow invertibility", flow_invertibility},
      {"loss oracles", loss_oracles},
      {"desk-scale training", [&] { return pipeline.desk_training(); }},
      {"MPC with exact dynamics", [&] { return pipeline.mpc_exact_model(); }},
      {"MPC with learned models", [&] { return pipeline.mpc_learned_model(); }},
      {"robustness Monte Carlo", [&] { return pipeline.robustness(); }},
      {"performance", [&] { return pipeline.performance(); }},
      {"determinism", [&] { return pipeline.determinism(); }},
  };
  const std::set<int> selected(only.begin(), only.end());

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    std::cout << fmt::format("criterion {}: {} ...", id, criteria[i].first) << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.passed) ++failed;
    std::cout << fmt::format("[{}] criterion {} {}: {} [{:.1f} s]", o.passed ? "PASS" : "FAIL", id,
                             criteria[i].first, o.detail, secs)
              << std::endl;
  }
  std::cout << (failed ? fmt::format("{} criteria failed", failed) : "all selected criteria passed") << std::endl;
  return failed ? 1 : 0;
}
