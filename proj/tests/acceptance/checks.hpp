#pragma once
// Acceptance criteria, one function per criterion.

#include <filesystem>
#include <optional>
#include <string>

namespace satflow::acceptance {

struct Outcome {
  bool passed = false;
  std::string detail;
};

Outcome physics_oracles();
Outcome autodiff_suite();
Outcome flow_invertibility();
Outcome loss_oracles();

/// State shared by the pipeline criteria. Later criteria reuse the models and
/// timings of earlier ones, or rebuild them when run alone.
class Pipeline {
 public:
  Pipeline(std::filesystem::path work, std::size_t robustness_runs);

  Outcome desk_training();
  Outcome mpc_exact_model();
  Outcome mpc_learned_model();
  Outcome robustness();
  Outcome performance();
  Outcome determinism();

 private:
  void ensure_models();
  std::filesystem::path model_path(const std::string& name) const;

  std::filesystem::path work_;
  std::size_t robustness_runs_;
  bool models_ready_ = false;
  std::optional<double> closed_loop_seconds_;
};

}  // namespace satflow::acceptance
