#pragma once
// JSON run configuration shared by every CLI subcommand. The schema is
// documented in README.md; unknown keys are rejected by name.

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "satflow/evaluation.hpp"
#include "satflow/flow.hpp"
#include "satflow/mpc.hpp"
#include "satflow/sim.hpp"
#include "satflow/training.hpp"

namespace satflow::config {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(message), key_(std::move(key)) {}
  /// Dotted path of the offending key, empty for document-level errors.
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct DatasetOptions {
  std::size_t train_runs = 300;
  std::size_t test_runs = 50;
  /// Inertia multiplier of the test spacecraft.
  double test_inertia_scale = 1.1;
  /// Test runs are seeded from seed + test_seed_offset.
  std::uint64_t test_seed_offset = 1000000;
  std::size_t steps = 10;
};

struct ScenarioOptions {
  Vec3 axis{0.0, 1.0, 0.0};
  double angle_deg = 90.0;
  double duration = 360.0;
  /// Initial wheel speeds, rpm.
  Vec3 initial_wheel_speed_rpm;
  /// "gravity_gradient" or "none" for the plant.
  sim::DisturbanceKind disturbance = sim::DisturbanceKind::gravity_gradient;
  double settle_threshold = 0.01;
};

enum class Predictor { flow, dynamics, zero };

struct EvalOptions {
  eval::RegressionOptions regression;
  eval::SpeOptions spe;
  std::size_t robustness_runs = 10;
  eval::NoiseOptions noise;
  /// Prediction model used by mpc-run and robustness.
  Predictor predictor = Predictor::flow;
};

struct Paths {
  std::string train_dataset = "train.bin";
  std::string test_dataset = "test.bin";
  std::string weights = "model.bin";
  /// Name used for this model's rows in the report tables.
  std::string experiment = "NVPSA2-LD";
};

struct RunConfig {
  std::uint64_t seed = 1;
  sim::SimConfig sim;
  DatasetOptions dataset;
  flow::ModelConfig model;
  train::TrainConfig train;
  mpc::MpcConfig mpc;
  ScenarioOptions scenario;
  EvalOptions evaluation;
  Paths paths;

  /// Seeds of every stage derived from `seed`.
  void apply_seed(std::uint64_t s);
  /// Throws ConfigError naming the section of a violated invariant.
  void validate() const;
  /// Closed-loop scenario described by `scenario`, `sim` and `mpc`.
  eval::Scenario closed_loop_scenario() const;
};

/// Parse a JSON document; absent keys keep their defaults.
RunConfig parse(const std::string& json_text);
RunConfig load(const std::filesystem::path& path);
/// Fully resolved configuration, every key present.
std::string dump(const RunConfig& c);
void write_resolved(const RunConfig& c, const std::filesystem::path& dir);

}  // namespace satflow::config
