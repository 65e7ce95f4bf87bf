#include "satflow/mpc.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <fmt/os.h>

#include "satflow/optim.hpp"
#include "satflow/training.hpp"

namespace satflow::mpc {

using ad::Shape;
using ad::Tensor;

namespace {

Var row(Tape& t, std::initializer_list<double> v) {
  return t.constant(Tensor(Shape{1, v.size()}, std::vector<double>(v)));
}
Var row(Tape& t, const Vec3& v) { return row(t, {v.x, v.y, v.z}); }

Var apply(Tape& t, const Mat3& m, Var x) {
  Tensor mt(Shape{3, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) mt.data[i * 3 + j] = m(j, i);
  return ad::matmul(x, t.constant(mt));
}

Vec3 vec3(std::span<const double> v) { return {v[0], v[1], v[2]}; }

// 0.5 q (x) (0, w) for q [1,4], w [1,3].
Var quaternion_rate(Tape& t, Var q, Var w) {
  Var qw = ad::slice_cols(q, 0, 1);
  Var qv = ad::slice_cols(q, 1, 3);
  Var dot = ad::matmul(qv * w, t.constant(Tensor(Shape{3, 1}, 1.0)));
  return ad::scale(ad::concat(-dot, ad::matmul(qw, w) + ad::cross(qv, w)), 0.5);
}

Var normalize_row(Var q) {
  return ad::matmul(ad::reciprocal(ad::reshape(ad::row_norm(q), Shape{1, 1})), q);
}

Var stage_cost(Tape& t, const TapeState& x, const Quat& q_ref, const MpcConfig& cfg) {
  const auto qv = t.value(x.q);
  const double sign = qv[0] * q_ref.w + qv[1] * q_ref.x + qv[2] * q_ref.y + qv[3] * q_ref.z < 0.0 ? -1.0 : 1.0;
  Var eq = ad::scale(x.q, sign) - row(t, {q_ref.w, q_ref.x, q_ref.y, q_ref.z});
  Var e = ad::concat(ad::concat(ad::concat(eq, x.omega), x.omega_rw), x.omega_dot);
  Var weights = t.constant(Tensor(Shape{13}, std::vector<double>(cfg.q.begin(), cfg.q.end())));
  return ad::sum(ad::square(e) * weights);
}

Var weighted_square(Tape& t, Var v, const Vec3& w) { return ad::sum(ad::square(v) * row(t, w)); }

}  // namespace

void MpcConfig::validate() const {
  if (horizon < 1) throw std::invalid_argument("mpc: horizon must be >= 1");
  for (double v : q)
    if (!(v >= 0.0)) throw std::invalid_argument("mpc: Q weights must be >= 0");
  for (int i = 0; i < 3; ++i) {
    if (!(c[i] >= 0.0) || !(r[i] >= 0.0)) throw std::invalid_argument("mpc: C and R weights must be >= 0");
  }
  if (!(torque_bound > 0.0)) throw std::invalid_argument("mpc: torque_bound must be positive");
  if (!(step_size > 0.0)) throw std::invalid_argument("mpc: step_size must be positive");
  if (!(control_dt > 0.0)) throw std::invalid_argument("mpc: control_dt must be positive");
}

TapeState to_tape(Tape& t, const MpcState& x) {
  return {row(t, {x.q.w, x.q.x, x.q.y, x.q.z}), row(t, x.omega), row(t, x.omega_rw), row(t, x.omega_dot)};
}

MpcState from_tape(const Tape& t, const TapeState& x) {
  const auto q = t.value(x.q);
  return {Quat{q[0], q[1], q[2], q[3]}, vec3(t.value(x.omega)), vec3(t.value(x.omega_rw)),
          vec3(t.value(x.omega_dot))};
}

FlowPredictor::FlowPredictor(flow::FlowModel& model, const SpacecraftParams& p)
    : model_(&model), cond_(data::conditioning(p)) {}

Var FlowPredictor::increment(Tape& t, const TapeState& x, Var u) {
  Var raw = ad::concat(ad::concat(ad::concat(x.omega, x.omega_rw), u), x.omega_dot);
  return ad::slice_cols(model_->predict(t, raw, cond_), 0, 3);
}

Var ZeroPredictor::increment(Tape& t, const TapeState&, Var) { return row(t, {0.0, 0.0, 0.0}); }

DynamicsPredictor::DynamicsPredictor(const SpacecraftParams& p, double dt, int substeps)
    : p_(p), dt_(dt), substeps_(substeps) {
  if (substeps < 1) throw std::invalid_argument("DynamicsPredictor: substeps must be >= 1");
}

Var DynamicsPredictor::increment(Tape& t, const TapeState& x, Var u) {
  Var drive = apply(t, p_.inertia_wheels_inv(), u);
  const double h = dt_ / substeps_;
  Var w = x.omega, wrw = x.omega_rw;
  for (int i = 0; i < substeps_; ++i) {
    auto f = [&](Var a, Var b) { return train::angular_acceleration(t, p_, a, b, u); };
    Var k1 = f(w, wrw);
    Var l1 = drive - k1;
    Var k2 = f(w + ad::scale(k1, h / 2), wrw + ad::scale(l1, h / 2));
    Var l2 = drive - k2;
    Var k3 = f(w + ad::scale(k2, h / 2), wrw + ad::scale(l2, h / 2));
    Var l3 = drive - k3;
    Var k4 = f(w + ad::scale(k3, h), wrw + ad::scale(l3, h));
    Var l4 = drive - k4;
    w = w + ad::scale(k1 + ad::scale(k2, 2.0) + ad::scale(k3, 2.0) + k4, h / 6);
    wrw = wrw + ad::scale(l1 + ad::scale(l2, 2.0) + ad::scale(l3, 2.0) + l4, h / 6);
  }
  return w - x.omega;
}

TapeState learned_step(Tape& t, PredictionModel& m, const TapeState& x, Var u, const SpacecraftParams& p,
                       double dt) {
  Var dw = m.increment(t, x, u);
  TapeState out;
  out.omega_dot = ad::scale(dw, 1.0 / dt);
  Var rw_rate = apply(t, p.inertia_wheels_inv(), u) - out.omega_dot;
  out.q = normalize_row(x.q + ad::scale(quaternion_rate(t, x.q, x.omega), dt));
  out.omega = x.omega + ad::scale(out.omega_dot, dt);
  out.omega_rw = x.omega_rw + ad::scale(rw_rate, dt);
  return out;
}

MpcState learned_step(PredictionModel& m, const MpcState& x, const Vec3& u, const SpacecraftParams& p,
                      double dt) {
  Tape t;
  t.set_param_grads(false);
  return from_tape(t, learned_step(t, m, to_tape(t, x), row(t, u), p, dt));
}

std::array<double, 13> error_state(const MpcState& x, const Quat& q_ref) {
  const Quat q = dot(x.q, q_ref) < 0.0 ? -x.q : x.q;
  return {q.w - q_ref.w,  q.x - q_ref.x,  q.y - q_ref.y,  q.z - q_ref.z,  x.omega.x,
          x.omega.y,      x.omega.z,      x.omega_rw.x,   x.omega_rw.y,   x.omega_rw.z,
          x.omega_dot.x,  x.omega_dot.y,  x.omega_dot.z};
}

Var plan_cost(Tape& t, PredictionModel& m, const MpcState& x0, const Quat& q_ref, Var torques,
              const Vec3& u_prev, const MpcConfig& cfg, const SpacecraftParams& p,
              std::vector<TapeState>* states) {
  if (t.shape(torques) != Shape{1, 3 * cfg.horizon}) {
    throw ad::ShapeError("plan_cost: expected [1," + std::to_string(3 * cfg.horizon) + "], got " +
                         t.shape(torques).str());
  }
  TapeState x = to_tape(t, x0);
  if (states) states->assign(1, x);
  Var cost = stage_cost(t, x, q_ref, cfg);
  Var prev = row(t, u_prev);
  for (std::size_t k = 0; k < cfg.horizon; ++k) {
    Var u = ad::slice_cols(torques, 3 * k, 3);
    cost = cost + weighted_square(t, u, cfg.c) + weighted_square(t, u - prev, cfg.r);
    x = learned_step(t, m, x, u, p, cfg.control_dt);
    if (states) states->push_back(x);
    cost = cost + stage_cost(t, x, q_ref, cfg);
    prev = u;
  }
  return cost;
}

double plan_cost(PredictionModel& m, const MpcState& x0, const Quat& q_ref, const std::vector<Vec3>& torques,
                 const Vec3& u_prev, const MpcConfig& cfg, const SpacecraftParams& p) {
  if (torques.size() != cfg.horizon) throw std::invalid_argument("plan_cost: plan length != horizon");
  Tape t;
  t.set_param_grads(false);
  std::vector<double> flat;
  for (const auto& u : torques) flat.insert(flat.end(), {u.x, u.y, u.z});
  return t.scalar(plan_cost(t, m, x0, q_ref, t.input(Shape{1, flat.size()}, flat), u_prev, cfg, p));
}

std::vector<Vec3> shift(const std::vector<Vec3>& torques) {
  if (torques.empty()) return {};
  std::vector<Vec3> out(torques.begin() + 1, torques.end());
  out.push_back(torques.back());
  return out;
}

Plan solve(PredictionModel& m, const MpcState& x0, const Quat& q_ref, const Vec3& u_prev,
           const std::vector<Vec3>& warm_start, const MpcConfig& cfg, const SpacecraftParams& p) {
  const std::size_t n = cfg.horizon;
  if (warm_start.size() != n) throw std::invalid_argument("solve: warm start length != horizon");
  const double bound = cfg.torque_bound;
  ad::Parameter u("torques", Tensor(Shape{1, 3 * n}));
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t a = 0; a < 3; ++a) u.value.data[3 * k + a] = std::clamp(warm_start[k][a], -bound, bound);

  ad::Adam opt({&u}, ad::AdamConfig{.lr = cfg.step_size});
  Tape t;
  t.set_param_grads(false);
  std::vector<double> best = u.value.data;
  double best_cost = std::numeric_limits<double>::infinity();
  Plan plan;
  for (std::size_t it = 0;; ++it) {
    t.clear();
    Var uv = t.input(u.value, true);
    Var cost = plan_cost(t, m, x0, q_ref, uv, u_prev, cfg, p);
    const double c = t.scalar(cost);
    if (!std::isfinite(c)) throw MpcError(fmt::format("solve: non-finite cost at iteration {}", it));
    if (it == 0) plan.warm_cost = c;
    if (c < best_cost) {
      best_cost = c;
      best = u.value.data;
    }
    if (it == cfg.iterations) break;
    t.backward(cost);
    const auto g = t.grad(uv);
    std::copy(g.begin(), g.end(), u.grad.data.begin());
    opt.step();
    for (double& v : u.value.data) v = std::clamp(v, -bound, bound);
    plan.iterations = it + 1;
  }

  t.clear();
  std::vector<TapeState> states;
  Var uv = t.input(Shape{1, 3 * n}, best);
  plan.cost = t.scalar(plan_cost(t, m, x0, q_ref, uv, u_prev, cfg, p, &states));
  for (std::size_t k = 0; k < n; ++k) plan.torques.push_back({best[3 * k], best[3 * k + 1], best[3 * k + 2]});
  for (const auto& x : states) plan.states.push_back(from_tape(t, x));
  return plan;
}

ClosedLoopResult closed_loop(PredictionModel& m, const sim::SimConfig& plant, const MpcConfig& cfg,
                             const BodyState& initial, const Quat& q_ref, double duration,
                             const Observer& observe) {
  cfg.validate();
  plant.validate();
  if (std::abs(plant.control_dt - cfg.control_dt) > 1e-12) {
    throw std::invalid_argument("closed_loop: plant and controller control_dt differ");
  }
  const auto steps = static_cast<std::size_t>(std::llround(duration / cfg.control_dt));
  const SpacecraftParams p = plant.effective_params();
  const auto disturbance = plant.disturbance_fn();
  const int substeps = plant.substeps();

  ClosedLoopResult r;
  BodyState s = initial;
  r.times.push_back(0.0);
  r.states.push_back(s);
  std::vector<Vec3> warm(cfg.horizon);
  Vec3 u_prev;
  Vec3 prev_obs_omega;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t0 = static_cast<double>(k) * cfg.control_dt;
    const BodyState obs = observe ? observe(s, k) : s;
    MpcState x{obs.attitude.normalized(), obs.omega, obs.omega_rw, {}};
    if (k > 0) x.omega_dot = (obs.omega - prev_obs_omega) * (1.0 / cfg.control_dt);
    prev_obs_omega = obs.omega;

    const Plan plan = solve(m, x, q_ref, u_prev, warm, cfg, p);
    const Vec3 u = plan.torques.front();
    s = sim::advance(p, s, u, disturbance, t0, plant.sim_dt, substeps);
    r.times.push_back(static_cast<double>(k + 1) * cfg.control_dt);
    r.states.push_back(s);
    r.torques.push_back(u);
    r.costs.push_back(plan.cost);
    r.iterations.push_back(plan.iterations);
    warm = shift(plan.torques);
    u_prev = u;
  }
  return r;
}

void write_closed_loop_csv(const ClosedLoopResult& r, const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("time,q0,q1,q2,q3,w1,w2,w3,wrw1,wrw2,wrw3,u1,u2,u3,cost,iterations\n");
  for (std::size_t k = 0; k < r.torques.size(); ++k) {
    const auto& s = r.states[k];
    const auto& u = r.torques[k];
    out.print("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},"
              "{:.17g},{:.17g},{:.17g},{:.17g},{}\n",
              r.times[k], s.attitude.w, s.attitude.x, s.attitude.y, s.attitude.z, s.omega.x, s.omega.y,
              s.omega.z, s.omega_rw.x, s.omega_rw.y, s.omega_rw.z, u.x, u.y, u.z, r.costs[k], r.iterations[k]);
  }
}

}  // namespace satflow::mpc
