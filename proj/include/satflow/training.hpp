#pragma once
// Hybrid data-driven / physics-informed training: the loss terms, the
// constant-torque rollout they are evaluated on, Lagrangian-dual weighting and
// the mini-batch fit loop.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "satflow/dataset.hpp"
#include "satflow/flow.hpp"

namespace satflow::train {

using ad::Tape;
using ad::Tensor;
using ad::Var;
using dynamics::SpacecraftParams;

enum class WeightMode { fixed, lagrangian_dual };

/// Per-epoch learning rate: constant, or cosine annealed from learning_rate
/// at the first epoch to final_learning_rate at max_epochs - 1.
enum class LrSchedule { constant, cosine };

struct LossWeights {
  double alpha = 0.5;
  double beta = 0.5;
  /// Weight of the momentum term inside the physics loss.
  double p = 1e-2;
  /// Dual step size.
  double eta = 1e-2;
  WeightMode mode = WeightMode::lagrangian_dual;

  static LossWeights fixed(double alpha, double beta);
  static LossWeights dual();
  void validate() const;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Per-axis NRMSE averaged over the axes. pred and target are [B, S*3] in rad/s.
Var loss_data_driven(Var pred, Var target, const std::array<double, 3>& sigma_dw);

/// Rolled-out states for k = 1..S, each [B,3].
struct Rollout {
  std::vector<Var> omega;
  std::vector<Var> omega_rw;
  std::vector<Var> omega_dot;
};

/// w_{k+1} = w_k + d_k, w_dot_{k+1} = d_k / dt,
/// w_rw_{k+1} = w_rw_k + (I_rw^-1 u - w_dot_{k+1}) dt, with u held at the sample torque.
/// `input` is the raw [B,12] sample input and `increments` [B, S*3].
Rollout rollout(Tape& t, const SpacecraftParams& p, Var input, Var increments, double dt);

/// Rigid-body angular acceleration with no external torque, row-wise on [B,3].
Var angular_acceleration(Tape& t, const SpacecraftParams& p, Var omega, Var omega_rw, Var torque);

struct PhysicsLoss {
  Var l_wdot;
  Var l_h;
  Var total;  // l_wdot + p * l_h
};

/// l_wdot: per-axis NRMSE between the rolled-out acceleration pred_k/dt and the
/// dynamics evaluated at the state the step starts from. l_h: mean squared
/// difference of the momentum norms along the predicted and the ground-truth
/// rollouts.
PhysicsLoss loss_physics(Tape& t, const SpacecraftParams& p, Var input, Var pred, Var target,
                         const std::array<double, 3>& sigma_wdot, double p_factor, double dt);

double total_loss(double ldd, double lpi, const LossWeights& w);
Var total_loss(Var ldd, Var lpi, const LossWeights& w);

/// beta <- clip(beta + eta (lpi - ldd), 0, 0.5), alpha = 1 - beta.
LossWeights lagrangian_update(const LossWeights& w, double ldd_val, double lpi_val);

/// Plain-number rollout of one sample, k = 1..S.
struct RolledState {
  Vec3 omega, omega_rw, omega_dot;
};
std::vector<RolledState> rollout(const SpacecraftParams& p, const data::TrainingSample& s,
                                 std::span<const double> increments, double dt);

struct LossValues {
  double l_dd = 0.0;
  double l_wdot = 0.0;
  double l_h = 0.0;
  double l_pi = 0.0;
};

/// All loss terms for one set of predictions (rows aligned with `samples`).
LossValues evaluate_losses(const SpacecraftParams& p, const data::Normalization& norm,
                           std::span<const data::TrainingSample> samples,
                           std::span<const double> pred, std::size_t steps, double dt,
                           double p_factor);

struct Batch {
  Tensor input;   // [B,12] raw
  Tensor target;  // [B,S*3] raw
  Tensor cond;    // [B,21] raw
};

Batch make_batch(const std::vector<data::TrainingSample>& samples,
                 std::span<const std::size_t> index, std::size_t steps);

struct BatchLosses {
  Var pred;
  Var l_dd;
  PhysicsLoss physics;
  Var total;
};

BatchLosses batch_losses(Tape& t, flow::FlowModel& m, const Batch& b, const SpacecraftParams& p,
                         const LossWeights& w, double dt);

struct TrainConfig {
  std::size_t batch_size = 16384;
  std::size_t max_epochs = 200;
  /// Epochs without a validation improvement before stopping.
  std::size_t patience = 20;
  double validation_fraction = 0.1;
  double learning_rate = 1e-3;
  LrSchedule lr_schedule = LrSchedule::constant;
  double final_learning_rate = 1e-5;
  std::uint64_t seed = 1;
  LossWeights weights;

  void validate() const;
  double learning_rate_at(std::size_t epoch) const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_ldd = 0.0, train_lpi = 0.0, train_total = 0.0;
  double val_ldd = 0.0, val_lpi = 0.0, val_total = 0.0;
  /// Weights in force during the epoch (the dual update follows it).
  double alpha = 0.0, beta = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;
  double wall_seconds = 0.0;
};

struct FitResult {
  flow::FlowModel model;
  TrainReport report;
};

/// Sample indices of the training and validation runs. Validation takes the
/// last round(fraction * n_runs) runs (at least one when there are two or
/// more runs and fraction > 0).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_run(
    const data::Dataset& d, double validation_fraction);

/// Mean losses over `index`, evaluated in chunks of `batch_size`.
LossValues evaluate(flow::FlowModel& m, const data::Dataset& d, std::span<const std::size_t> index,
                    const LossWeights& w, std::size_t batch_size);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam on alpha L_DD + beta L_PI, early stopping on the validation
/// total, returning the best-validation weights.
FitResult fit(const flow::FlowModel& initial, const data::Dataset& d, const TrainConfig& cfg,
              const EpochCallback& on_epoch = {});

/// epoch, train/val l_dd, l_pi, total, alpha, beta. No timing columns.
void write_report_csv(const TrainReport& r, const std::filesystem::path& path);

}  // namespace satflow::train
