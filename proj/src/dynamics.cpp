#include "satflow/dynamics.hpp"

#include <cmath>
#include <string>

namespace satflow::dynamics {
namespace {

constexpr double kMaxCondition = 1e12;

bool finite(const Mat3& a) {
  for (double v : a.m) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool symmetric_positive_definite(const Mat3& a) {
  const double scale = a.norm_inf();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = r + 1; c < 3; ++c) {
      if (std::abs(a(r, c) - a(c, r)) > 1e-12 * scale) return false;
    }
  }
  const double m1 = a(0, 0);
  const double m2 = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  return m1 > 0.0 && m2 > 0.0 && a.determinant() > 0.0;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidParameters("spacecraft parameters: " + what);
}

}  // namespace

SpacecraftParams::SpacecraftParams(const Mat3& inertia_body, const Mat3& inertia_wheels,
                                   double mass, double max_wheel_torque, double max_wheel_speed,
                                   double control_dt)
    : inertia_body_(inertia_body),
      inertia_wheels_(inertia_wheels),
      mass_(mass),
      max_wheel_torque_(max_wheel_torque),
      max_wheel_speed_(max_wheel_speed),
      control_dt_(control_dt) {
  require(finite(inertia_body_) && finite(inertia_wheels_), "non-finite inertia entry");
  require(symmetric_positive_definite(inertia_body_), "body inertia must be SPD");
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      if (r == c) {
        require(inertia_wheels_(r, c) > 0.0, "wheel inertia diagonal must be positive");
      } else {
        require(inertia_wheels_(r, c) == 0.0, "wheel inertia must be diagonal");
      }
    }
  }
  require(std::isfinite(mass_) && mass_ > 0.0, "mass must be positive");
  require(std::isfinite(max_wheel_torque_) && max_wheel_torque_ > 0.0,
          "max wheel torque must be positive");
  require(std::isfinite(max_wheel_speed_) && max_wheel_speed_ > 0.0,
          "max wheel speed must be positive");
  require(std::isfinite(control_dt_) && control_dt_ > 0.0, "control dt must be positive");

  const Mat3 coupled = inertia_body_ - inertia_wheels_;
  const double det = coupled.determinant();
  require(std::isfinite(det) && det != 0.0, "I_s - I_rw is singular");
  coupled_inv_ = coupled.inverse();
  require(coupled.norm_inf() * coupled_inv_.norm_inf() < kMaxCondition,
          "I_s - I_rw is ill-conditioned");
  inertia_body_inv_ = inertia_body_.inverse();
  inertia_wheels_inv_ =
      Mat3::diag(1.0 / inertia_wheels_(0, 0), 1.0 / inertia_wheels_(1, 1), 1.0 / inertia_wheels_(2, 2));
}

SpacecraftParams SpacecraftParams::reference() {
  Mat3 is;
  is.m = {5.700, 0.045, 0.002, 0.045, 3.300, 0.012, 0.002, 0.012, 6.100};
  return SpacecraftParams(is, Mat3::diag(0.001, 0.001, 0.001), 58.0, 0.05,
                          6000.0 * kRpmToRadPerSec, 0.1);
}

SpacecraftParams SpacecraftParams::scaled(double factor) const {
  return SpacecraftParams(factor * inertia_body_, inertia_wheels_, factor * mass_,
                          max_wheel_torque_, max_wheel_speed_, control_dt_);
}

Mat3 skew(const Vec3& w) {
  Mat3 s;
  s.m = {0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0};
  return s;
}

Vec3 angular_acceleration(const SpacecraftParams& p, const Vec3& omega, const Vec3& omega_rw,
                          const Vec3& u_rw, const Vec3& n_ext) {
  const Vec3 h = p.inertia_body() * omega + p.inertia_wheels() * omega_rw;
  return p.coupled_inv() * (n_ext - cross(omega, h) - u_rw);
}

Vec3 wheel_acceleration(const SpacecraftParams& p, const Vec3& u_rw, const Vec3& omega_dot) {
  return p.inertia_wheels_inv() * u_rw - omega_dot;
}

Quat quaternion_derivative(const Quat& q, const Vec3& w) {
  // 0.5 * [0 -w^T; w -skew(w)] * q
  return {0.5 * (-w.x * q.x - w.y * q.y - w.z * q.z),
          0.5 * (w.x * q.w + w.z * q.y - w.y * q.z),
          0.5 * (w.y * q.w - w.z * q.x + w.x * q.z),
          0.5 * (w.z * q.w + w.y * q.x - w.x * q.y)};
}

Vec3 total_angular_momentum(const SpacecraftParams& p, const Vec3& omega, const Vec3& omega_rw) {
  return p.inertia_body() * omega + p.inertia_wheels() * omega_rw;
}

Vec3 gravity_gradient_torque(const SpacecraftParams& p, const Vec3& nadir_body,
                             double orbital_rate) {
  if (!nadir_body.finite() || std::abs(nadir_body.norm() - 1.0) > 1e-9) {
    throw std::invalid_argument("gravity_gradient_torque: nadir direction must be a unit vector");
  }
  if (!(orbital_rate > 0.0)) {
    throw std::invalid_argument("gravity_gradient_torque: orbital rate must be positive");
  }
  return 3.0 * orbital_rate * orbital_rate * cross(nadir_body, p.inertia_body() * nadir_body);
}

namespace {

struct Derivative {
  Quat q;
  Vec3 omega;
  Vec3 omega_rw;
};

Derivative derivative(const SpacecraftParams& p, const Quat& q, const Vec3& omega,
                      const Vec3& omega_rw, const Vec3& u_rw, const Vec3& n_ext) {
  const Vec3 wd = angular_acceleration(p, omega, omega_rw, u_rw, n_ext);
  return {quaternion_derivative(q, omega), wd, wheel_acceleration(p, u_rw, wd)};
}

}  // namespace

BodyState rk4_step(const SpacecraftParams& p, const BodyState& s, const Vec3& u_rw,
                   const Vec3& n_ext, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be positive");
  const Derivative k1 = derivative(p, s.attitude, s.omega, s.omega_rw, u_rw, n_ext);
  const double h2 = 0.5 * dt;
  const Derivative k2 = derivative(p, s.attitude + h2 * k1.q, s.omega + h2 * k1.omega,
                                   s.omega_rw + h2 * k1.omega_rw, u_rw, n_ext);
  const Derivative k3 = derivative(p, s.attitude + h2 * k2.q, s.omega + h2 * k2.omega,
                                   s.omega_rw + h2 * k2.omega_rw, u_rw, n_ext);
  const Derivative k4 = derivative(p, s.attitude + dt * k3.q, s.omega + dt * k3.omega,
                                   s.omega_rw + dt * k3.omega_rw, u_rw, n_ext);
  const double w = dt / 6.0;
  BodyState out;
  out.attitude = (s.attitude + w * (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q)).normalized();
  out.omega = s.omega + w * (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega);
  out.omega_rw = s.omega_rw + w * (k1.omega_rw + 2.0 * k2.omega_rw + 2.0 * k3.omega_rw + k4.omega_rw);
  out.omega_dot = k1.omega;
  return out;
}

DisturbanceFn no_disturbance() {
  return [](const BodyState&, double) { return Vec3{}; };
}

DisturbanceFn gravity_gradient_disturbance(const SpacecraftParams& p, double orbital_rate) {
  if (!(orbital_rate > 0.0)) {
    throw std::invalid_argument("gravity gradient: orbital rate must be positive");
  }
  return [p, orbital_rate](const BodyState& s, double t) {
    const double a = orbital_rate * t;
    const Vec3 nadir_inertial{-std::cos(a), -std::sin(a), 0.0};
    Vec3 nadir_body = rotate(s.attitude.conjugate(), nadir_inertial);
    nadir_body = nadir_body / nadir_body.norm();
    return gravity_gradient_torque(p, nadir_body, orbital_rate);
  };
}

}  // namespace satflow::dynamics
