#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "satflow/mpc.hpp"

using namespace satflow;
using namespace satflow::mpc;
using ad::Shape;
using ad::Tensor;

namespace {

const SpacecraftParams kRef = SpacecraftParams::reference();
constexpr double kDt = 0.1;

// dw = A u, a stand-in with a nonzero torque sensitivity.
class LinearPredictor final : public PredictionModel {
 public:
  explicit LinearPredictor(const Mat3& a) : a_(a) {}
  Var increment(Tape& t, const TapeState&, Var u) override {
    Tensor at(Shape{3, 3});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) at.data[i * 3 + j] = a_(j, i);
    return ad::matmul(u, t.constant(at));
  }
  const Mat3& a() const { return a_; }

 private:
  Mat3 a_;
};

Mat3 test_matrix() { return Mat3{{-0.5, 0.1, 0.0, 0.05, 0.3, -0.02, 0.0, 0.04, 0.2}}; }

double naive_cost(const Mat3& a, MpcState x, const Quat& q_ref, const std::vector<Vec3>& us, Vec3 u_prev,
                  const MpcConfig& cfg) {
  auto stage = [&](const MpcState& s) {
    const auto e = error_state(s, q_ref);
    double c = 0.0;
    for (int i = 0; i < 13; ++i) c += cfg.q[i] * e[i] * e[i];
    return c;
  };
  double cost = stage(x);
  for (const auto& u : us) {
    for (int i = 0; i < 3; ++i) {
      cost += cfg.c[i] * u[i] * u[i] + cfg.r[i] * (u[i] - u_prev[i]) * (u[i] - u_prev[i]);
    }
    const Vec3 wdot = (a * u) * (1.0 / kDt);
    const Vec3 rw_rate = kRef.inertia_wheels_inv() * u - wdot;
    const Quat qdot = 0.5 * (x.q * Quat{0.0, x.omega.x, x.omega.y, x.omega.z});
    x.q = (x.q + kDt * qdot).normalized();
    x.omega = x.omega + wdot * kDt;
    x.omega_rw = x.omega_rw + rw_rate * kDt;
    x.omega_dot = wdot;
    cost += stage(x);
    u_prev = u;
  }
  return cost;
}

MpcState moving_state() {
  MpcState x;
  x.q = Quat::from_axis_angle({0.3, -0.5, 0.8}, 0.7);
  x.omega = {0.01, -0.02, 0.015};
  x.omega_rw = {30.0, -12.0, 5.0};
  x.omega_dot = {1e-3, -2e-3, 5e-4};
  return x;
}

double quat_dist(const Quat& a, const Quat& b) {
  const Quat d = dot(a, b) < 0.0 ? -a : a;
  return std::sqrt(std::pow(d.w - b.w, 2) + std::pow(d.x - b.x, 2) + std::pow(d.y - b.y, 2) +
                   std::pow(d.z - b.z, 2));
}

}  // namespace

TEST(ErrorState, Examples) {
  const Quat q_ref = Quat::from_axis_angle({0, 0, 1}, M_PI / 2);
  MpcState at;
  at.q = q_ref;
  for (double v : error_state(at, q_ref)) EXPECT_EQ(v, 0.0);
  at.q = -q_ref;
  for (double v : error_state(at, q_ref)) EXPECT_EQ(v, 0.0);
  MpcState start;
  const auto e = error_state(start, q_ref);
  EXPECT_NEAR(e[0], 1.0 - std::sqrt(2.0) / 2.0, 1e-15);
  EXPECT_EQ(e[1], 0.0);
  EXPECT_EQ(e[2], 0.0);
  EXPECT_NEAR(e[3], -std::sqrt(2.0) / 2.0, 1e-15);
  const auto m = moving_state();
  const auto em = error_state(m, Quat::identity());
  EXPECT_EQ(em[4], m.omega.x);
  EXPECT_EQ(em[9], m.omega_rw.z);
  EXPECT_EQ(em[12], m.omega_dot.z);
}

TEST(LearnedStep, ZeroModelPropagatesAttitudeOnly) {
  ZeroPredictor zero;
  MpcState x = moving_state();
  x.omega_dot = {};
  const auto y = learned_step(zero, x, {}, kRef, kDt);
  EXPECT_EQ(y.omega, x.omega);
  EXPECT_EQ(y.omega_dot, Vec3{});
  EXPECT_EQ(y.omega_rw, x.omega_rw);
  const Quat expect = (x.q + kDt * (0.5 * (x.q * Quat{0.0, x.omega.x, x.omega.y, x.omega.z}))).normalized();
  EXPECT_LT(quat_dist(y.q, expect), 1e-15);
  EXPECT_NEAR(y.q.norm(), 1.0, 1e-12);
}

TEST(LearnedStep, ExactIncrementMatchesSimulatorToFirstOrder) {
  DynamicsPredictor exact(kRef, kDt, 4);
  dynamics::BodyState s;
  s.attitude = Quat::from_axis_angle({1, 2, 3}, 0.4);
  s.omega = {0.02, -0.01, 0.03};
  s.omega_rw = {50.0, -30.0, 20.0};
  const Vec3 u{0.01, -0.02, 0.015};
  const auto truth = sim::advance(kRef, s, u, dynamics::no_disturbance(), 0.0, 0.001, 100);
  const auto y = learned_step(exact, MpcState{s.attitude, s.omega, s.omega_rw, {}}, u, kRef, kDt);
  for (int a = 0; a < 3; ++a) {
    EXPECT_NEAR(y.omega[a], truth.omega[a], 1e-9);
    EXPECT_NEAR(y.omega_rw[a], truth.omega_rw[a], 1e-7);
  }
  // Euler attitude update with the start-of-step rate: error O(dt^2 |w_dot|).
  EXPECT_LT(quat_dist(y.q, truth.attitude), 1e-4);
  EXPECT_GT(quat_dist(y.q, truth.attitude), 0.0);
  EXPECT_NEAR(y.q.norm(), 1.0, 1e-12);
}

TEST(PlanCost, ZeroAtTarget) {
  ZeroPredictor zero;
  MpcConfig cfg;
  MpcState x;
  EXPECT_EQ(plan_cost(zero, x, Quat::identity(), std::vector<Vec3>(10), {}, cfg, kRef), 0.0);
}

TEST(PlanCost, SingleTorquePulseHandRolled) {
  // u_0 = (0.01, 0, 0) from rest at target with a zero model: the body stays
  // put and only wheel 1 spins up, to I_rw^-1 u dt = 1 rad/s.
  ZeroPredictor zero;
  MpcConfig cfg;
  std::vector<Vec3> plan(10);
  plan[0] = {0.01, 0.0, 0.0};
  const double wrw = 0.01 / 0.001 * kDt;
  const double expect = 100.0 * 1e-4 + 1.0 * 1e-4  // C and R on u_0
                        + 1.0 * 1e-4                // R on u_1 - u_0
                        + 10 * 1e-4 * wrw * wrw;    // wheel term for x_1 .. x_10
  EXPECT_NEAR(plan_cost(zero, MpcState{}, Quat::identity(), plan, {}, cfg, kRef), expect, 1e-15);
}

TEST(PlanCost, MatchesNaiveLoop) {
  LinearPredictor lin(test_matrix());
  MpcConfig cfg;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> d(-0.05, 0.05);
  const Quat q_ref = Quat::from_axis_angle({0, 1, 0}, 1.2);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Vec3> plan(10);
    for (auto& u : plan) u = {d(rng), d(rng), d(rng)};
    const Vec3 prev{d(rng), d(rng), d(rng)};
    const double ref = naive_cost(lin.a(), moving_state(), q_ref, plan, prev, cfg);
    EXPECT_NEAR(plan_cost(lin, moving_state(), q_ref, plan, prev, cfg, kRef), ref, 1e-10 * ref);
  }
}

TEST(PlanCost, IncreasesWithStateError) {
  ZeroPredictor zero;
  MpcConfig cfg;
  MpcState x = moving_state();
  const std::vector<Vec3> plan(10);
  const double base = plan_cost(zero, x, x.q, plan, {}, cfg, kRef);
  x.omega_rw.x += 1.0;
  EXPECT_GT(plan_cost(zero, x, x.q, plan, {}, cfg, kRef), base);
}

TEST(Solve, StaysAtOriginWhenAtTarget) {
  DynamicsPredictor exact(kRef, kDt);
  MpcConfig cfg;
  const auto plan = solve(exact, MpcState{}, Quat::identity(), {}, std::vector<Vec3>(10), cfg, kRef);
  for (const auto& u : plan.torques)
    for (int a = 0; a < 3; ++a) EXPECT_LT(std::abs(u[a]), 1e-4);
  EXPECT_EQ(plan.states.size(), 11u);
}

TEST(Solve, DescendsAndRespectsBounds) {
  DynamicsPredictor exact(kRef, kDt);
  MpcConfig cfg;
  const Quat q_ref = Quat::from_axis_angle({0.2, 1, 0.1}, 0.1);
  std::vector<Vec3> warm(10, Vec3{0.2, -0.2, 0.01});  // outside the box, clamped first
  const auto plan = solve(exact, moving_state(), q_ref, {}, warm, cfg, kRef);
  EXPECT_LE(plan.cost, plan.warm_cost);
  EXPECT_LT(plan.cost, plan.warm_cost);
  EXPECT_EQ(plan.iterations, cfg.iterations);
  for (const auto& u : plan.torques)
    for (int a = 0; a < 3; ++a) EXPECT_LE(std::abs(u[a]), cfg.torque_bound);
  EXPECT_DOUBLE_EQ(plan.cost, plan_cost(exact, moving_state(), q_ref, plan.torques, {}, cfg, kRef));
}

TEST(Solve, Deterministic) {
  LinearPredictor lin(test_matrix());
  MpcConfig cfg;
  const Quat q_ref = Quat::from_axis_angle({1, 0, 0}, 0.5);
  const auto a = solve(lin, moving_state(), q_ref, {}, std::vector<Vec3>(10), cfg, kRef);
  const auto b = solve(lin, moving_state(), q_ref, {}, std::vector<Vec3>(10), cfg, kRef);
  EXPECT_EQ(a.torques, b.torques);
  EXPECT_EQ(a.cost, b.cost);
}

TEST(Solve, ShiftRepeatsLast) {
  const std::vector<Vec3> p{{1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  const auto s = shift(p);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].x, 2.0);
  EXPECT_EQ(s[2].x, 3.0);
}

TEST(ClosedLoop, ShortRunShapeBoundsAndDoubleCover) {
  DynamicsPredictor exact(kRef, kDt);
  sim::SimConfig plant;
  MpcConfig cfg;
  cfg.iterations = 10;
  const Quat q_ref = Quat::from_axis_angle({0, 1, 0}, M_PI / 2);
  const auto r = closed_loop(exact, plant, cfg, {}, q_ref, 2.0);
  ASSERT_EQ(r.torques.size(), 20u);
  ASSERT_EQ(r.states.size(), 21u);
  EXPECT_DOUBLE_EQ(r.times.back(), 2.0);
  for (const auto& u : r.torques)
    for (int a = 0; a < 3; ++a) EXPECT_LE(std::abs(u[a]), 0.05);
  const auto flipped = closed_loop(exact, plant, cfg, {}, -q_ref, 2.0);
  EXPECT_EQ(flipped.torques, r.torques);
  EXPECT_EQ(flipped.states, r.states);
  // The maneuver has started toward the target.
  EXPECT_LT(quat_dist(r.states.back().attitude, q_ref), quat_dist(r.states.front().attitude, q_ref));

  const auto path = std::filesystem::temp_directory_path() / "satflow_test_cl.csv";
  write_closed_loop_csv(r, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "time,q0,q1,q2,q3,w1,w2,w3,wrw1,wrw2,wrw3,u1,u2,u3,cost,iterations");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 20u);
  std::filesystem::remove(path);
}

TEST(ClosedLoop, ObserverFeedsController) {
  ZeroPredictor zero;
  sim::SimConfig plant;
  MpcConfig cfg;
  cfg.iterations = 3;
  std::size_t calls = 0;
  const auto r = closed_loop(zero, plant, cfg, {}, Quat::identity(), 0.5,
                             [&](const dynamics::BodyState& s, std::size_t k) {
                               EXPECT_EQ(k, calls);
                               ++calls;
                               return s;
                             });
  EXPECT_EQ(calls, 5u);
  EXPECT_EQ(r.torques.size(), 5u);
}

TEST(MpcConfig, Validation) {
  MpcConfig c;
  EXPECT_NO_THROW(c.validate());
  c.horizon = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.q[3] = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.torque_bound = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
