#pragma once
// Closed-loop maneuver simulator driven by an MRP feedback law.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "satflow/dynamics.hpp"

namespace satflow::sim {

using dynamics::BodyState;
using dynamics::SpacecraftParams;

struct MrpGains {
  double k = 0.36;
  double p = 3.0;
};

enum class DisturbanceKind { none, gravity_gradient };

struct SimConfig {
  SpacecraftParams params = SpacecraftParams::reference();
  double duration = 180.0;
  double sim_dt = 0.001;
  double control_dt = 0.1;
  std::uint64_t seed = 1;
  std::pair<double, double> initial_wheel_speed_rpm{-300.0, 300.0};
  DisturbanceKind disturbance = DisturbanceKind::gravity_gradient;
  double orbital_rate = 0.00113;
  /// Multiplier on body inertia and mass (1.1 for the perturbed test spacecraft).
  double inertia_scale = 1.0;
  MrpGains gains;

  /// Throws std::invalid_argument on a violated invariant.
  void validate() const;
  /// Number of sim_dt steps per control step.
  int substeps() const;
  /// Number of control steps covering `duration`.
  int control_steps() const;
  /// Params with `inertia_scale` applied.
  SpacecraftParams effective_params() const;
  dynamics::DisturbanceFn disturbance_fn() const;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<BodyState> states;
  /// Commanded wheel torque at each recorded state.
  std::vector<Vec3> torques;

  std::size_t size() const { return states.size(); }
};

/// Modified Rodrigues parameters of `q`, switched to the shadow set so that
/// |sigma| <= 1.
Vec3 mrp_from_quaternion(const Quat& q);

/// Requested body control torque -K sigma - P w + w x (I_s w + I_rw w_rw),
/// each component clamped to the wheel torque limit. The wheels are driven with
/// the opposite of this torque.
Vec3 mrp_feedback_torque(const SpacecraftParams& p, const BodyState& s, const Quat& q_ref,
                         const MrpGains& gains);

/// Wheel motor torque that realizes the MRP law, limited so that no wheel is
/// pushed past max_wheel_speed within one control interval.
Vec3 wheel_command(const SpacecraftParams& p, const BodyState& s, const Quat& q_ref,
                   const MrpGains& gains, double control_dt);

/// Uniformly distributed rotation (Shoemake's subgroup algorithm).
Quat random_quaternion(std::mt19937_64& rng);

/// Integrate one control interval with zero-order-held wheel torque.
BodyState advance(const SpacecraftParams& p, const BodyState& s, const Vec3& u_rw,
                  const dynamics::DisturbanceFn& disturbance, double t0, double sim_dt,
                  int substeps);

/// Simulate one maneuver toward `q_ref`. The initial attitude and wheel speeds
/// are drawn from `cfg.seed` unless `initial` is provided.
Trajectory run_maneuver(const SimConfig& cfg, const Quat& q_ref,
                        const std::optional<BodyState>& initial = std::nullopt);

/// time, q0..q3, w1..w3, wrw1..wrw3, u1..u3; one row per recorded state.
void write_trajectory_csv(const Trajectory& t, const std::filesystem::path& path);

}  // namespace satflow::sim
