#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <fmt/format.h>

#include "checks.hpp"
#include "satflow/dynamics.hpp"
#include "satflow/flow.hpp"
#include "satflow/gradcheck.hpp"
#include "satflow/sim.hpp"
#include "satflow/training.hpp"

namespace satflow::acceptance {

using ad::Parameter;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using dynamics::BodyState;
using dynamics::SpacecraftParams;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(s);
  for (auto& v : t.data) v = d(rng);
  return t;
}

Vec3 random_vec(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> d(-scale, scale);
  return {d(rng), d(rng), d(rng)};
}

}  // namespace

Outcome physics_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto ref = SpacecraftParams::reference();
  const double dt = 0.001;

  BodyState s;
  s.attitude = Quat::from_axis_angle({1, 2, 3}, 0.7);
  s.omega = {0.05, -0.03, 0.02};
  s.omega_rw = {120.0, -80.0, 30.0};
  const double h0 = dynamics::total_angular_momentum(ref, s.omega, s.omega_rw).norm();
  for (int i = 0; i < 180000; ++i) s = dynamics::rk4_step(ref, s, {}, {}, dt);
  const double tumble = std::abs(dynamics::total_angular_momentum(ref, s.omega, s.omega_rw).norm() - h0) / h0;

  // Wheels counter-rotating at -w cancel the wheel momentum term, leaving the
  // free symmetric top with J = I_s - I_rw.
  const double a = 4.0, c = 6.0, irw = 0.001;
  const SpacecraftParams top(Mat3::diag(a + irw, a + irw, c + irw), Mat3::diag(irw, irw, irw), 10.0, 0.05, 628.0,
                             0.1);
  BodyState spin;
  const Vec3 w0{0.05, -0.02, 0.3};
  spin.omega = w0;
  spin.omega_rw = -w0;
  const double lambda = (c - a) / a * w0.z;
  double spinner = 0.0;
  for (int i = 1; i <= 60000; ++i) {
    spin = dynamics::rk4_step(top, spin, {}, {}, dt);
    const double t = i * dt;
    const Vec3 expect{w0.x * std::cos(lambda * t) - w0.y * std::sin(lambda * t),
                      w0.x * std::sin(lambda * t) + w0.y * std::cos(lambda * t), w0.z};
    spinner = std::max(spinner, (spin.omega - expect).norm());
  }

  std::mt19937_64 rng(16);
  BodyState wt;
  wt.omega = {0.01, 0.02, -0.01};
  wt.omega_rw = {50.0, 20.0, -30.0};
  const double hw0 = dynamics::total_angular_momentum(ref, wt.omega, wt.omega_rw).norm();
  for (int k = 0; k < 600; ++k) {
    const Vec3 u = random_vec(rng, 0.05);
    for (int i = 0; i < 100; ++i) wt = dynamics::rk4_step(ref, wt, u, {}, dt);
  }
  const double wheel = std::abs(dynamics::total_angular_momentum(ref, wt.omega, wt.omega_rw).norm() - hw0) / hw0;

  const double secs = seconds_since(t0);
  const bool ok = tumble < 1e-9 && spinner < 1e-6 && wheel < 1e-8 && secs < 60.0;
  return {ok, fmt::format("torque-free |h| drift {:.2e} (< 1e-9), spinner error {:.2e} rad/s (< 1e-6), "
                          "wheel-torque |h| drift {:.2e} (< 1e-8), {:.1f} s",
                          tumble, spinner, wheel, secs)};
}

namespace {

struct GradSuite {
  double worst = 0.0;
  std::string worst_name;
  bool passed = true;
  std::size_t cases = 0;

  void add(const std::string& name, const ad::GradcheckReport& r) {
    ++cases;
    passed = passed && r.passed;
    if (r.worst_error >= worst) {
      worst = r.worst_error;
      worst_name = name;
    }
  }
};

// Contract an arbitrary node with fixed random weights into a scalar.
Var project(Tape& t, Var y) {
  std::mt19937_64 rng(7);
  return ad::sum(y * t.constant(random_tensor(t.shape(y), rng, -2.0, 2.0)));
}

using Op = std::function<Var(Tape&, Var, Var, Var)>;

ad::GradcheckReport check_op(Shape sa, Shape sb, Shape sc, const Op& f, double lo = -2.0, double hi = 2.0) {
  std::mt19937_64 rng(42);
  Parameter a("a", random_tensor(sa, rng, lo, hi));
  Parameter b("b", random_tensor(sb, rng, lo, hi));
  Parameter c("c", random_tensor(sc, rng, lo, hi));
  return ad::gradcheck([&](Tape& t) { return project(t, f(t, t.param(a), t.param(b), t.param(c))); },
                       {&a, &b, &c});
}

data::Normalization synthetic_normalization() {
  data::Normalization n;
  for (std::size_t j = 0; j < data::kInputDim; ++j) {
    n.input_mean[j] = 0.01 * static_cast<double>(j);
    n.input_std[j] = 0.5 + 0.1 * static_cast<double>(j);
  }
  n.sigma_dw = {1e-3, 2e-3, 1.5e-3};
  n.sigma_wdot = {1e-2, 2e-2, 1.5e-2};
  return n;
}

flow::ModelConfig small_model(flow::Head head, std::uint32_t couplings = 4) {
  flow::ModelConfig c;
  c.head = head;
  c.n_coupling_layers = couplings;
  c.hidden_units = 8;
  c.steps = 3;
  c.token_dim = 4;
  return c;
}

void randomize(flow::FlowModel& m, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-scale, scale);
  for (auto* p : m.parameters())
    for (auto& v : p->value.data) v = d(rng);
}

}  // namespace

Outcome autodiff_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuite g;
  g.add("matmul", check_op(Shape{3, 4}, Shape{4, 5}, Shape{1}, [](Tape&, Var a, Var b, Var) { return ad::matmul(a, b); }));
  g.add("affine", check_op(Shape{5, 4}, Shape{4, 6}, Shape{6},
                           [](Tape&, Var a, Var b, Var c) { return ad::affine(a, b, c); }));
  g.add("elementwise", check_op(Shape{3, 4}, Shape{3, 4}, Shape{4},
                                [](Tape&, Var a, Var b, Var c) { return (a + b) * (b - c) + a * c; }));
  g.add("scalar", check_op(Shape{2, 5}, Shape{1}, Shape{1},
                           [](Tape&, Var a, Var, Var) { return (a * 3.5 + 0.25) * a; }));
  g.add("concat/slice/select", check_op(Shape{3, 4}, Shape{3, 3}, Shape{1}, [](Tape&, Var a, Var b, Var) {
          static const std::vector<std::size_t> idx{4, 0, 2, 2, 6};
          Var c = ad::concat(a, b);
          return ad::concat(ad::slice_cols(c, 1, 4), ad::select_cols(c, idx));
        }));
  g.add("activations", check_op(Shape{4, 4}, Shape{4, 4}, Shape{1}, [](Tape&, Var a, Var b, Var) {
          return ad::tanh(a) + ad::relu(b) + ad::exp(a * b);
        }));
  g.add("sqrt/square/reciprocal", check_op(Shape{3, 3}, Shape{3, 3}, Shape{1}, [](Tape&, Var a, Var b, Var) {
          return ad::sqrt(a) + ad::square(b) + ad::reciprocal(ad::add_scalar(a, 3.0));
        }, 0.2, 2.0));
  g.add("softmax", check_op(Shape{2, 3, 5}, Shape{1}, Shape{1}, [](Tape&, Var a, Var, Var) { return ad::softmax(a); }));
  g.add("reductions", check_op(Shape{4, 3}, Shape{5, 3}, Shape{1}, [](Tape&, Var a, Var b, Var) {
          return ad::concat(ad::concat(ad::sum_rows(a), ad::sum_rows(b)),
                            ad::concat(ad::mean(a), ad::sum(b)));
        }));
  g.add("row norm", check_op(Shape{4, 3}, Shape{1}, Shape{1}, [](Tape&, Var a, Var, Var) { return ad::row_norm(a); }));
  g.add("bmm", check_op(Shape{2, 3, 4}, Shape{2, 4, 5}, Shape{1}, [](Tape&, Var a, Var b, Var) { return ad::bmm(a, b); }));
  g.add("bmm transposed", check_op(Shape{6, 4}, Shape{2, 5, 4}, Shape{1}, [](Tape&, Var a, Var b, Var) {
          return ad::bmm(ad::reshape(a, Shape{2, 3, 4}), b, true);
        }));
  g.add("cross", check_op(Shape{4, 3}, Shape{4, 3}, Shape{1}, [](Tape&, Var a, Var b, Var) { return ad::cross(a, b); }));

  const auto cond_ref = data::conditioning(SpacecraftParams::reference());
  {
    flow::FlowModel m(small_model(flow::Head::plain, 1), synthetic_normalization(), cond_ref);
    randomize(m, 11, 0.5);
    std::mt19937_64 rng(12);
    Parameter x("x", random_tensor(Shape{3, flow::kFeatureDim}, rng, -2.0, 2.0));
    const Tensor w = random_tensor(Shape{3, flow::kFeatureDim}, rng, -2.0, 2.0);
    auto params = m.parameters();
    params.resize(params.size() - 2);  // the head is not on this path
    params.push_back(&x);
    g.add("coupling layer",
          ad::gradcheck([&](Tape& t) { return ad::sum(m.couplings(t, t.param(x)) * t.constant(w)); }, params));
  }
  for (flow::Head h : {flow::Head::sa1, flow::Head::sa2}) {
    flow::FlowModel m(small_model(h), synthetic_normalization(), cond_ref);
    randomize(m, 14, 0.5);
    std::mt19937_64 rng(15);
    Parameter in("input", random_tensor(Shape{3, data::kInputDim}, rng, -2.0, 2.0));
    Parameter cond("cond", random_tensor(Shape{3, data::kCondDim}, rng, 0.5, 1.5));
    const Tensor w = random_tensor(Shape{3, 9}, rng, -2.0, 2.0);
    auto params = m.parameters();
    params.push_back(&in);
    params.push_back(&cond);
    g.add("model " + flow::head_name(h),
          ad::gradcheck([&](Tape& t) { return ad::sum(m.forward(t, t.param(in), t.param(cond)) * t.constant(w)); },
                        params));
  }
  {
    const auto ref = SpacecraftParams::reference();
    flow::FlowModel m(small_model(flow::Head::sa2), synthetic_normalization(), cond_ref);
    randomize(m, 4, 0.5);
    std::mt19937_64 rng(5);
    // Slow wheels keep the rolled-out wheel rate above the rounding floor of
    // a 1e-6 perturbation.
    Tensor input(Shape{4, 12});
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double scale[4] = {0.05, 0.5, 0.05, 2e-3};
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 12; ++j) input.data[i * 12 + j] = scale[j / 3] * u(rng);
    train::Batch b{input, random_tensor(Shape{4, 9}, rng, -2e-3, 2e-3), Tensor(Shape{4, data::kCondDim})};
    for (std::size_t i = 0; i < 4; ++i) std::copy(cond_ref.begin(), cond_ref.end(), b.cond.data.begin() + i * 21);
    auto w = train::LossWeights::dual();
    w.p = 1e4;
    g.add("full loss", ad::gradcheck([&](Tape& t) { return train::batch_losses(t, m, b, ref, w, 0.1).total; },
                                     m.parameters()));
  }
  const double secs = seconds_since(t0);
  const bool ok = g.passed && g.worst < 1e-5 && secs < 60.0;
  return {ok, fmt::format("{} gradchecks, worst relative error {:.2e} ({}) (< 1e-5), {:.1f} s", g.cases, g.worst,
                          g.worst_name, secs)};
}

Outcome flow_invertibility() {
  flow::ModelConfig c;
  c.n_coupling_layers = 4;
  flow::FlowModel m(c, synthetic_normalization(), data::conditioning(SpacecraftParams::reference()));
  randomize(m, 4, 0.3);
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(Shape{256, flow::kFeatureDim}, rng, -2.0, 2.0);
  const Tensor y = m.coupling_stack(x, false);
  const Tensor back = m.coupling_stack(y, true);
  double worst = 0.0, moved = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    worst = std::max(worst, std::abs(back.data[i] - x.data[i]));
    moved = std::max(moved, std::abs(y.data[i] - x.data[i]));
  }
  return {worst < 1e-10 && moved > 1e-2,
          fmt::format("256 random 24-d rows, round-trip error {:.2e} (< 1e-10), forward moved inputs by {:.2f}",
                      worst, moved)};
}

namespace {

using M3 = std::array<std::array<double, 3>, 3>;
using V3 = std::array<double, 3>;

M3 load(const Mat3& m) {
  M3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i][j] = m(i, j);
  return r;
}

V3 mul(const M3& m, const V3& v) {
  V3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[i] += m[i][j] * v[j];
  return r;
}

M3 inverse(const M3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  M3 r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const int r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
      r[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
    }
  return r;
}

double norm(const V3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

double naive_ldd(const Tensor& p, const Tensor& q, const V3& sigma) {
  const std::size_t rows = p.numel() / 3;
  double out = 0.0;
  for (int a = 0; a < 3; ++a) {
    double ss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) ss += std::pow(p.data[r * 3 + a] - q.data[r * 3 + a], 2);
    out += std::sqrt(ss / static_cast<double>(rows)) / sigma[a];
  }
  return out / 3.0;
}

struct NaivePhysics {
  double l_wdot = 0.0, l_h = 0.0;
};

NaivePhysics naive_physics(const SpacecraftParams& p, const Tensor& input, const Tensor& pred, const Tensor& target,
                           const V3& sigma_wdot, double dt) {
  const M3 is = load(p.inertia_body()), irw = load(p.inertia_wheels());
  M3 diff;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) diff[i][j] = is[i][j] - irw[i][j];
  const M3 coupled_inv = inverse(diff), irw_inv = inverse(irw);
  const std::size_t n = input.shape[0], steps = pred.shape[1] / 3;
  auto at = [](const Tensor& t, std::size_t row, std::size_t col) {
    const std::size_t w = t.shape[1];
    return V3{t.data[row * w + col], t.data[row * w + col + 1], t.data[row * w + col + 2]};
  };
  auto momentum = [&](const V3& w, const V3& wrw) {
    const V3 a = mul(is, w), b = mul(irw, wrw);
    return norm(V3{a[0] + b[0], a[1] + b[1], a[2] + b[2]});
  };
  V3 ss{};
  double lh = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const V3 u = at(input, b, 6), drive = mul(irw_inv, u);
    V3 w = at(input, b, 0), wrw = at(input, b, 3);
    V3 wt = w, wrwt = wrw;
    for (std::size_t k = 0; k < steps; ++k) {
      const V3 d = at(pred, b, 3 * k), dt_true = at(target, b, 3 * k);
      const V3 h = [&] {
        const V3 a = mul(is, w), c = mul(irw, wrw);
        return V3{a[0] + c[0], a[1] + c[1], a[2] + c[2]};
      }();
      const V3 gyro{w[1] * h[2] - w[2] * h[1], w[2] * h[0] - w[0] * h[2], w[0] * h[1] - w[1] * h[0]};
      const V3 f = mul(coupled_inv, V3{-gyro[0] - u[0], -gyro[1] - u[1], -gyro[2] - u[2]});
      for (int a = 0; a < 3; ++a) {
        ss[a] += std::pow(d[a] / dt - f[a], 2);
        w[a] += d[a];
        wrw[a] += (drive[a] - d[a] / dt) * dt;
        wt[a] += dt_true[a];
        wrwt[a] += (drive[a] - dt_true[a] / dt) * dt;
      }
      lh += std::pow(momentum(w, wrw) - momentum(wt, wrwt), 2);
    }
  }
  NaivePhysics r;
  for (int a = 0; a < 3; ++a) r.l_wdot += std::sqrt(ss[a] / static_cast<double>(n * steps)) / sigma_wdot[a];
  r.l_wdot /= 3.0;
  r.l_h = lh / static_cast<double>(n * steps);
  return r;
}

double relative(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

Outcome loss_oracles() {
  const auto ref = SpacecraftParams::reference();
  const double dt = 0.1;
  std::mt19937_64 rng(3);
  double worst_dd = 0.0, worst_wdot = 0.0, worst_h = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 5 + static_cast<std::size_t>(trial);
    Tensor in(Shape{n, 12});
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double scale[4] = {0.05, 40.0, 0.05, 2e-3};
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 12; ++j) in.data[i * 12 + j] = scale[j / 3] * u(rng);
    const Tensor p = random_tensor(Shape{n, 30}, rng, -2e-3, 2e-3);
    const Tensor q = random_tensor(Shape{n, 30}, rng, -2e-3, 2e-3);
    const V3 sigma_dw{1e-3, 2e-3, 4e-3}, sigma_wdot{1e-2, 2e-2, 4e-3};
    Tape t;
    worst_dd = std::max(worst_dd, relative(t.scalar(train::loss_data_driven(t.constant(p), t.constant(q), sigma_dw)),
                                           naive_ldd(p, q, sigma_dw)));
    const auto l = train::loss_physics(t, ref, t.constant(in), t.constant(p), t.constant(q), sigma_wdot, 1e-2, dt);
    const auto naive = naive_physics(ref, in, p, q, sigma_wdot, dt);
    worst_wdot = std::max(worst_wdot, relative(t.scalar(l.l_wdot), naive.l_wdot));
    worst_h = std::max(worst_h, relative(t.scalar(l.l_h), naive.l_h));
  }

  // Constant-torque, disturbance-free windows with increments from the Euler
  // rollout of the rigid-body acceleration itself.
  double generated = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    data::TrainingSample s;
    const Vec3 w0 = random_vec(rng, 0.05), wrw0 = random_vec(rng, 100.0), u = random_vec(rng, 0.05);
    for (int a = 0; a < 3; ++a) {
      s.input[a] = w0[a];
      s.input[3 + a] = wrw0[a];
      s.input[6 + a] = u[a];
    }
    s.cond = data::conditioning(ref);
    Vec3 w = w0, wrw = wrw0;
    std::vector<double> pred;
    for (int k = 0; k < 10; ++k) {
      const Vec3 d = dynamics::angular_acceleration(ref, w, wrw, u, {}) * dt;
      for (int a = 0; a < 3; ++a) pred.push_back(d[a]);
      w = w + d;
      wrw = wrw + (ref.inertia_wheels_inv() * u - d / dt) * dt;
    }
    s.multi_targets = pred;
    data::Normalization norm;
    norm.sigma_dw = {1e-3, 1e-3, 1e-3};
    norm.sigma_wdot = {1e-2, 1e-2, 1e-2};
    const std::vector<data::TrainingSample> one{s};
    generated = std::max(generated, train::evaluate_losses(ref, norm, one, pred, 10, dt, 1e-2).l_wdot);
  }

  const bool ok = worst_dd < 1e-12 && worst_wdot < 1e-12 && worst_h < 1e-12 && generated < 1e-6;
  return {ok, fmt::format("vs scalar loops on 20 random batches: L_DD {:.1e}, L_wdot {:.1e}, L_h {:.1e} (< 1e-12); "
                          "L_wdot on dynamics-generated increments {:.1e} (< 1e-6)",
                          worst_dd, worst_wdot, worst_h, generated)};
}

}  // namespace satflow::acceptance
