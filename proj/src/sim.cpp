#include "satflow/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/os.h>

namespace satflow::sim {
namespace {

bool is_integer_ratio(double num, double den) {
  const double r = num / den;
  return std::abs(r - std::round(r)) < 1e-9 * std::max(1.0, r);
}

}  // namespace

void SimConfig::validate() const {
  if (!(duration > 0.0)) throw std::invalid_argument("sim config: duration must be positive");
  if (!(sim_dt > 0.0)) throw std::invalid_argument("sim config: sim_dt must be positive");
  if (!(control_dt > 0.0)) throw std::invalid_argument("sim config: control_dt must be positive");
  if (!is_integer_ratio(control_dt, sim_dt)) {
    throw std::invalid_argument("sim config: sim_dt must divide control_dt exactly");
  }
  if (!is_integer_ratio(duration, control_dt)) {
    throw std::invalid_argument("sim config: duration must be a multiple of control_dt");
  }
  if (!(initial_wheel_speed_rpm.first <= initial_wheel_speed_rpm.second)) {
    throw std::invalid_argument("sim config: initial wheel speed range has lo > hi");
  }
  if (!(inertia_scale > 0.0)) throw std::invalid_argument("sim config: inertia_scale must be positive");
  if (gains.k < 0.0 || gains.p < 0.0) throw std::invalid_argument("sim config: gains must be >= 0");
  if (disturbance == DisturbanceKind::gravity_gradient && !(orbital_rate > 0.0)) {
    throw std::invalid_argument("sim config: orbital_rate must be positive");
  }
}

int SimConfig::substeps() const { return static_cast<int>(std::lround(control_dt / sim_dt)); }

int SimConfig::control_steps() const {
  return static_cast<int>(std::lround(duration / control_dt));
}

SpacecraftParams SimConfig::effective_params() const {
  return inertia_scale == 1.0 ? params : params.scaled(inertia_scale);
}

dynamics::DisturbanceFn SimConfig::disturbance_fn() const {
  if (disturbance == DisturbanceKind::gravity_gradient) {
    return dynamics::gravity_gradient_disturbance(effective_params(), orbital_rate);
  }
  return dynamics::no_disturbance();
}

Vec3 mrp_from_quaternion(const Quat& q) {
  // Working on the hemisphere q0 >= 0 is the shadow-set switch; it also keeps
  // the denominator away from zero at q0 = -1.
  const Quat h = q.w < 0.0 ? -q : q;
  return h.vec() / (1.0 + h.w);
}

Vec3 mrp_feedback_torque(const SpacecraftParams& p, const BodyState& s, const Quat& q_ref,
                         const MrpGains& gains) {
  const Vec3 sigma = mrp_from_quaternion(q_ref.conjugate() * s.attitude);
  const Vec3 h = dynamics::total_angular_momentum(p, s.omega, s.omega_rw);
  Vec3 u = -gains.k * sigma - gains.p * s.omega + cross(s.omega, h);
  const double lim = p.max_wheel_torque();
  for (std::size_t i = 0; i < 3; ++i) u[i] = std::clamp(u[i], -lim, lim);
  return u;
}

Vec3 wheel_command(const SpacecraftParams& p, const BodyState& s, const Quat& q_ref,
                   const MrpGains& gains, double control_dt) {
  Vec3 u = -mrp_feedback_torque(p, s, q_ref, gains);
  const double lim = p.max_wheel_torque();
  const double wmax = p.max_wheel_speed();
  for (std::size_t i = 0; i < 3; ++i) {
    const double inertia = p.inertia_wheels()(i, i);
    const double next = s.omega_rw[i] + u[i] / inertia * control_dt;
    if (std::abs(next) > wmax) {
      const double target = std::copysign(wmax, next);
      u[i] = std::clamp((target - s.omega_rw[i]) * inertia / control_dt, -lim, lim);
    }
  }
  return u;
}

Quat random_quaternion(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double u1 = uni(rng);
  const double u2 = uni(rng);
  const double u3 = uni(rng);
  const double a = std::sqrt(1.0 - u1);
  const double b = std::sqrt(u1);
  const double t2 = 2.0 * std::numbers::pi * u2;
  const double t3 = 2.0 * std::numbers::pi * u3;
  return Quat{b * std::cos(t3), a * std::sin(t2), a * std::cos(t2), b * std::sin(t3)}.normalized();
}

BodyState advance(const SpacecraftParams& p, const BodyState& s, const Vec3& u_rw,
                  const dynamics::DisturbanceFn& disturbance, double t0, double sim_dt,
                  int substeps) {
  BodyState cur = s;
  for (int i = 0; i < substeps; ++i) {
    const double t = t0 + i * sim_dt;
    cur = dynamics::rk4_step(p, cur, u_rw, disturbance(cur, t), sim_dt);
  }
  return cur;
}

Trajectory run_maneuver(const SimConfig& cfg, const Quat& q_ref,
                        const std::optional<BodyState>& initial) {
  cfg.validate();
  const SpacecraftParams p = cfg.effective_params();
  const auto disturbance = cfg.disturbance_fn();

  BodyState state;
  if (initial) {
    state = *initial;
  } else {
    std::mt19937_64 rng(cfg.seed);
    state.attitude = random_quaternion(rng);
    std::uniform_real_distribution<double> wheel(cfg.initial_wheel_speed_rpm.first,
                                                 cfg.initial_wheel_speed_rpm.second);
    for (std::size_t i = 0; i < 3; ++i) state.omega_rw[i] = wheel(rng) * dynamics::kRpmToRadPerSec;
  }

  const int steps = cfg.control_steps();
  const int sub = cfg.substeps();
  Trajectory traj;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);
  traj.torques.reserve(steps + 1);
  for (int k = 0; k <= steps; ++k) {
    const double t = k * cfg.control_dt;
    const Vec3 u = wheel_command(p, state, q_ref, cfg.gains, cfg.control_dt);
    traj.times.push_back(t);
    traj.states.push_back(state);
    traj.torques.push_back(u);
    if (k < steps) state = advance(p, state, u, disturbance, t, cfg.sim_dt, sub);
  }
  return traj;
}

void write_trajectory_csv(const Trajectory& t, const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("time,q0,q1,q2,q3,w1,w2,w3,wrw1,wrw2,wrw3,u1,u2,u3\n");
  for (std::size_t k = 0; k < t.size(); ++k) {
    const auto& s = t.states[k];
    const auto& u = t.torques[k];
    out.print("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},"
              "{:.17g},{:.17g}\n",
              t.times[k], s.attitude.w, s.attitude.x, s.attitude.y, s.attitude.z, s.omega.x, s.omega.y, s.omega.z,
              s.omega_rw.x, s.omega_rw.y, s.omega_rw.z, u.x, u.y, u.z);
  }
}

}  // namespace satflow::sim
