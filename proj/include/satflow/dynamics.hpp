#pragma once
// Rigid spacecraft attitude dynamics with three body-aligned reaction wheels.
//
// Conventions: quaternions are scalar-first and map body to inertial; u_rw is the
// vector of wheel motor torques, so the body feels -u_rw. All functions are pure.

#include <functional>
#include <stdexcept>

#include "satflow/math3.hpp"

namespace satflow::dynamics {

class InvalidParameters : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kRpmToRadPerSec = 0.10471975511965977;  // 2*pi/60

/// Physical constants of one spacecraft. Construction validates the invariants
/// and caches the inverses used by the dynamics.
class SpacecraftParams {
 public:
  SpacecraftParams(const Mat3& inertia_body, const Mat3& inertia_wheels, double mass,
                   double max_wheel_torque, double max_wheel_speed, double control_dt);

  /// The reference 58 kg LEO spacecraft.
  static SpacecraftParams reference();

  /// Same spacecraft with body inertia and mass multiplied by `factor`.
  SpacecraftParams scaled(double factor) const;

  const Mat3& inertia_body() const { return inertia_body_; }
  const Mat3& inertia_wheels() const { return inertia_wheels_; }
  double mass() const { return mass_; }
  double max_wheel_torque() const { return max_wheel_torque_; }
  /// rad/s
  double max_wheel_speed() const { return max_wheel_speed_; }
  double control_dt() const { return control_dt_; }

  const Mat3& inertia_body_inv() const { return inertia_body_inv_; }
  const Mat3& inertia_wheels_inv() const { return inertia_wheels_inv_; }
  /// (I_s - I_rw)^-1
  const Mat3& coupled_inv() const { return coupled_inv_; }

  friend bool operator==(const SpacecraftParams&, const SpacecraftParams&) = default;

 private:
  Mat3 inertia_body_;
  Mat3 inertia_wheels_;
  double mass_;
  double max_wheel_torque_;
  double max_wheel_speed_;
  double control_dt_;
  Mat3 inertia_body_inv_;
  Mat3 inertia_wheels_inv_;
  Mat3 coupled_inv_;
};

struct BodyState {
  Quat attitude = Quat::identity();
  Vec3 omega;
  Vec3 omega_rw;
  Vec3 omega_dot;

  friend bool operator==(const BodyState&, const BodyState&) = default;
};

/// Cross-product matrix: skew(w) * v == cross(w, v).
Mat3 skew(const Vec3& w);

/// Body angular acceleration from the coupled body/wheel equations,
/// (I_s - I_rw) w_dot = -w x (I_s w + I_rw w_rw) - u_rw + n_ext.
Vec3 angular_acceleration(const SpacecraftParams& p, const Vec3& omega, const Vec3& omega_rw,
                          const Vec3& u_rw, const Vec3& n_ext);

/// Wheel acceleration I_rw^-1 u_rw - w_dot.
Vec3 wheel_acceleration(const SpacecraftParams& p, const Vec3& u_rw, const Vec3& omega_dot);

/// q_dot = 0.5 * Omega(w) q with the 4x4 quaternion-kinematics matrix.
Quat quaternion_derivative(const Quat& q, const Vec3& omega);

/// h = I_s w + I_rw w_rw
Vec3 total_angular_momentum(const SpacecraftParams& p, const Vec3& omega, const Vec3& omega_rw);

/// 3 n^2 (o x I_s o) for unit nadir direction `nadir_body` in body axes.
Vec3 gravity_gradient_torque(const SpacecraftParams& p, const Vec3& nadir_body,
                             double orbital_rate);

/// Classical RK4 over (q, w, w_rw) with u_rw and n_ext held constant. The
/// returned attitude is renormalized and omega_dot holds the acceleration at
/// the start of the step.
BodyState rk4_step(const SpacecraftParams& p, const BodyState& s, const Vec3& u_rw,
                   const Vec3& n_ext, double dt);

/// Environmental torque model evaluated once per integration step.
using DisturbanceFn = std::function<Vec3(const BodyState& state, double time)>;

DisturbanceFn no_disturbance();

/// Gravity gradient on a circular orbit. The nadir direction rotates about the
/// inertial z axis at `orbital_rate` starting from -x at t = 0.
DisturbanceFn gravity_gradient_disturbance(const SpacecraftParams& p, double orbital_rate);

}  // namespace satflow::dynamics
