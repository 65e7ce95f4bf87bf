#pragma once
// Shooting MPC over a learned (or exact) one-step model, and the closed-loop
// runner that drives the ground-truth simulator with it.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <vector>

#include "satflow/autodiff.hpp"
#include "satflow/flow.hpp"
#include "satflow/sim.hpp"

namespace satflow::mpc {

using ad::Tape;
using ad::Var;
using dynamics::BodyState;
using dynamics::SpacecraftParams;

struct MpcConfig {
  std::size_t horizon = 10;
  /// Diagonal state weights over (q0..q3, w, w_rw, w_dot).
  std::array<double, 13> q{1000, 1000, 1000, 1000, 1e-2, 1e-2, 1e-2, 1e-4, 1e-4, 1e-4, 1e-2, 1e-2, 1e-2};
  Vec3 c{100, 100, 100};
  Vec3 r{1, 1, 1};
  double torque_bound = 0.05;
  std::size_t iterations = 50;
  double step_size = 5e-3;
  double control_dt = 0.1;

  void validate() const;
};

class MpcError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MpcState {
  Quat q = Quat::identity();
  Vec3 omega, omega_rw, omega_dot;
};

/// MpcState on a tape: q is [1,4], the rates [1,3].
struct TapeState {
  Var q, omega, omega_rw, omega_dot;
};

TapeState to_tape(Tape& t, const MpcState& x);
MpcState from_tape(const Tape& t, const TapeState& x);

/// One-step angular-velocity increment model.
class PredictionModel {
 public:
  virtual ~PredictionModel() = default;
  /// Increment of w over one control step, [1,3].
  virtual Var increment(Tape& t, const TapeState& x, Var u) = 0;
};

/// Row 0 of the flow model's multi-step prediction.
class FlowPredictor final : public PredictionModel {
 public:
  FlowPredictor(flow::FlowModel& model, const SpacecraftParams& p);
  Var increment(Tape& t, const TapeState& x, Var u) override;

 private:
  flow::FlowModel* model_;
  data::ConditioningVector cond_;
};

class ZeroPredictor final : public PredictionModel {
 public:
  Var increment(Tape& t, const TapeState& x, Var u) override;
};

/// Exact rigid-body increment: RK4 over the control step with constant torque
/// and no disturbance, split into `substeps`.
class DynamicsPredictor final : public PredictionModel {
 public:
  DynamicsPredictor(const SpacecraftParams& p, double dt, int substeps = 2);
  Var increment(Tape& t, const TapeState& x, Var u) override;

 private:
  SpacecraftParams p_;
  double dt_;
  int substeps_;
};

/// dw = model; w_dot = dw/dt; w_rw rate = I_rw^-1 u - w_dot; q_dot from the
/// input w; explicit Euler over dt, quaternion renormalized.
TapeState learned_step(Tape& t, PredictionModel& m, const TapeState& x, Var u, const SpacecraftParams& p,
                       double dt);
MpcState learned_step(PredictionModel& m, const MpcState& x, const Vec3& u, const SpacecraftParams& p,
                      double dt);

/// 13-vector (q - q_ref after hemisphere alignment, w, w_rw, w_dot).
std::array<double, 13> error_state(const MpcState& x, const Quat& q_ref);

/// Quadratic plan cost over the horizon, including the terminal state term.
/// `torques` is [1, 3n]; `states`, when given, receives the n+1 predicted states.
Var plan_cost(Tape& t, PredictionModel& m, const MpcState& x0, const Quat& q_ref, Var torques,
              const Vec3& u_prev, const MpcConfig& cfg, const SpacecraftParams& p,
              std::vector<TapeState>* states = nullptr);
double plan_cost(PredictionModel& m, const MpcState& x0, const Quat& q_ref, const std::vector<Vec3>& torques,
                 const Vec3& u_prev, const MpcConfig& cfg, const SpacecraftParams& p);

struct Plan {
  std::vector<Vec3> torques;
  std::vector<MpcState> states;  // x_0 .. x_n
  double cost = 0.0;
  double warm_cost = 0.0;
  /// Gradient steps taken.
  std::size_t iterations = 0;
};

/// Projected Adam over the n torque vectors, starting from `warm_start`
/// (clamped to the box). Returns the lowest-cost iterate, which is never worse
/// than the warm start.
Plan solve(PredictionModel& m, const MpcState& x0, const Quat& q_ref, const Vec3& u_prev,
           const std::vector<Vec3>& warm_start, const MpcConfig& cfg, const SpacecraftParams& p);

/// Drop the first torque and repeat the last.
std::vector<Vec3> shift(const std::vector<Vec3>& torques);

/// Maps the true state to what the controller observes at control step k.
using Observer = std::function<BodyState(const BodyState& truth, std::size_t step)>;

struct ClosedLoopResult {
  std::vector<double> times;     // control_steps + 1
  std::vector<BodyState> states; // true states, control_steps + 1
  std::vector<Vec3> torques;     // applied, control_steps
  std::vector<double> costs;     // solver cost per step
  std::vector<std::size_t> iterations;
};

/// Run `duration` seconds of receding-horizon control of the plant described
/// by `plant` (its params, disturbance and sim_dt), starting from `initial`.
ClosedLoopResult closed_loop(PredictionModel& m, const sim::SimConfig& plant, const MpcConfig& cfg,
                             const BodyState& initial, const Quat& q_ref, double duration,
                             const Observer& observe = {});

/// time, q0..q3, w1..w3, wrw1..wrw3, u1..u3, cost, iterations; one row per control step.
void write_closed_loop_csv(const ClosedLoopResult& r, const std::filesystem::path& path);

}  // namespace satflow::mpc
