#pragma once
// Regression and closed-loop metrics, the noise-robustness experiment, and the
// CSV/JSON report writers.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "satflow/dataset.hpp"
#include "satflow/flow.hpp"
#include "satflow/mpc.hpp"

namespace satflow::eval {

using ad::Tensor;
using dynamics::BodyState;
using dynamics::SpacecraftParams;

inline constexpr double kMreEpsilon = 1e-12;

enum class MreMode {
  /// Mean over all entries of |pred - truth| / (|truth| + eps).
  elementwise,
  /// Mean over rows of |pred - truth|_2 / (|truth|_2 + eps).
  norm_ratio,
};

/// Mean relative error in percent. `pred` and `truth` are row-major N x 3.
double mre(std::span<const double> pred, std::span<const double> truth, MreMode mode = MreMode::elementwise);

/// What the relative error is taken on.
enum class MreBasis {
  /// The predicted angular velocity w_t + dw against the recorded w_{t+1}.
  state,
  /// The increment dw against the recorded increment.
  increment,
};

/// One-step increment model over a batch: raw input [B,12], raw conditioning
/// [B,21] -> increments [B,3] in rad/s.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual Tensor predict(const Tensor& input, const Tensor& cond) = 0;
};

/// First predicted step of a flow model.
class FlowStepModel final : public StepModel {
 public:
  explicit FlowStepModel(flow::FlowModel& m) : model_(&m) {}
  Tensor predict(const Tensor& input, const Tensor& cond) override;

 private:
  flow::FlowModel* model_;
};

/// Rigid-body increment with the sample torque held and no disturbance.
class DynamicsStepModel final : public StepModel {
 public:
  DynamicsStepModel(const SpacecraftParams& p, double dt, int substeps = 100);
  Tensor predict(const Tensor& input, const Tensor& cond) override;

 private:
  SpacecraftParams p_;
  double dt_;
  int substeps_;
};

class ZeroStepModel final : public StepModel {
 public:
  Tensor predict(const Tensor& input, const Tensor& cond) override;
};

struct RegressionOptions {
  std::size_t selfloop_steps = 10;
  MreMode mode = MreMode::elementwise;
  MreBasis basis = MreBasis::state;
  double p_factor = 1e-2;
  std::size_t batch_size = 2048;
};

struct RegressionMetrics {
  /// Percent.
  double mre_single = 0.0;
  /// Physics loss of the one-step predictions.
  double physics_single = 0.0;
  double mre_selfloop = 0.0;
  /// Physics loss of the fed-back increments over the self-loop horizon.
  double physics_selfloop = 0.0;
  /// Per-sample relative error of the one-step prediction (percent).
  std::vector<double> single_errors;
  /// Per-window relative error of the self-loop rollout (percent), for paired tests.
  std::vector<double> selfloop_errors;
};

/// Self-loop: the model's increment is fed back as the next input with the
/// sample torque held, w_dot = dw/dt, and the wheel speed advanced with the
/// momentum exchange. Physics losses use the dataset's parameters and its
/// normalization so that every model is measured on the same scale.
RegressionMetrics evaluate_regression(StepModel& m, const data::Dataset& test, const RegressionOptions& opts = {});

/// Increments [N, steps*3] of the self-loop rollout for every sample.
std::vector<double> selfloop_increments(StepModel& m, const data::Dataset& d, std::size_t steps,
                                        std::size_t batch_size = 2048);

/// Absolute performance error of a closed-loop run, one entry per recorded state.
struct ApeSeries {
  std::vector<double> times;
  /// q - q_ref after hemisphere alignment.
  std::vector<std::array<double, 4>> q_err;
  std::vector<double> q_norm;
  std::vector<Vec3> omega;
  std::vector<Vec3> omega_rw;
};

ApeSeries ape(const mpc::ClosedLoopResult& r, const Quat& q_ref);

/// First time after which q_norm stays below `threshold`; infinity if it never settles.
double settling_time(const ApeSeries& a, double threshold = 0.01);

struct SpeOptions {
  /// Window in seconds, or in samples when `delta_in_steps` is set.
  double delta = 10.0;
  bool delta_in_steps = false;
  /// Only samples with t > settle_time are kept.
  double settle_time = 120.0;
};

struct SpeResult {
  std::vector<double> times;
  std::vector<double> values;
  double mean_abs = 0.0;
};

/// Stability performance error per axis, |e_a(t)| - |e_a(t - delta)|, averaged
/// over the axes. `axes` holds one per-axis APE sample per entry of `times`.
SpeResult spe(std::span<const double> times, std::span<const Vec3> axes, const SpeOptions& opts = {});
/// On the vector part of the attitude error.
SpeResult spe(const ApeSeries& a, const SpeOptions& opts = {});

struct Scenario {
  sim::SimConfig plant;
  mpc::MpcConfig mpc;
  BodyState initial;
  Quat q_ref = Quat::identity();
  double duration = 360.0;
};

/// Rest-to-rest 90 degree rotation about the body y axis with the wheels at rest.
Scenario default_scenario();

struct NoiseOptions {
  /// Truncation bound; deviations are N(0, (level/3)^2) cut at +-level.
  double level = 0.10;
  /// Add delta * scale instead of multiplying by (1 + delta).
  bool additive = false;
  /// Additive scales for (quaternion, w, w_rw).
  std::array<double, 3> additive_scale{1.0, 0.01, 10.0};
};

/// Truncated normal deviate used for the observation noise.
double truncated_normal(std::mt19937_64& rng, double level);

/// Corrupt one observation: every component of q, w and w_rw is perturbed,
/// then q is renormalized.
BodyState observe_noisy(const BodyState& truth, std::mt19937_64& rng, const NoiseOptions& opts);

struct VariableStats {
  std::string variable;
  double mae = 0.0;
  double final_error = 0.0;
  double spread = 0.0;
};

struct RobustnessResult {
  std::vector<mpc::ClosedLoopResult> runs;
  /// attitude, angular_velocity, wheel_speed, wheel_torque.
  std::vector<VariableStats> stats;
};

/// `n_runs` closed-loop runs of the scenario, run i observing through its own
/// noise stream seeded with (seed, i).
RobustnessResult robustness_experiment(mpc::PredictionModel& m, const Scenario& sc, std::size_t n_runs,
                                       const NoiseOptions& noise, std::uint64_t seed);

/// Statistics of already simulated runs of one scenario. Errors are taken
/// against q_ref for the attitude and against zero otherwise. MAE averages
/// |error| over runs, time and components; final_error does so at the last
/// sample; spread is the population standard deviation across runs averaged
/// over time and components.
std::vector<VariableStats> run_statistics(const std::vector<mpc::ClosedLoopResult>& runs, const Quat& q_ref);

struct RegressionRow {
  std::string experiment;
  RegressionMetrics metrics;
};

/// experiment,mre,physics,mre_selfloop,physics_selfloop
void write_regression_table(const std::vector<RegressionRow>& rows, const std::filesystem::path& path);
/// experiment_variable,mae,final_error,spread
void write_robustness_table(const std::vector<std::pair<std::string, std::vector<VariableStats>>>& rows,
                            const std::filesystem::path& path);
/// time,q_err0..3,q_norm,w1..3,wrw1..3
void write_ape_csv(const ApeSeries& a, const std::filesystem::path& path);
/// time,spe
void write_spe_csv(const SpeResult& s, const std::filesystem::path& path);
/// time, then mean and standard deviation across runs of each error component.
void write_envelope_csv(const std::vector<mpc::ClosedLoopResult>& runs, const Quat& q_ref,
                        const std::filesystem::path& path);
/// experiment -> file names, as JSON.
void write_manifest(const std::map<std::string, std::vector<std::string>>& files, const std::filesystem::path& path);

}  // namespace satflow::eval
