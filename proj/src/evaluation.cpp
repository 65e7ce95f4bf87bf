#include "satflow/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/os.h>
#include <json.hpp>

#include "satflow/training.hpp"

namespace satflow::eval {

using ad::Shape;
using ad::Var;

double mre(std::span<const double> pred, std::span<const double> truth, MreMode mode) {
  if (pred.size() != truth.size()) throw std::invalid_argument("mre: size mismatch");
  if (pred.empty() || pred.size() % 3 != 0) throw std::invalid_argument("mre: expected a non-empty N x 3 array");
  double sum = 0.0;
  if (mode == MreMode::elementwise) {
    for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - truth[i]) / (std::abs(truth[i]) + kMreEpsilon);
    return 100.0 * sum / static_cast<double>(pred.size());
  }
  const std::size_t rows = pred.size() / 3;
  for (std::size_t r = 0; r < rows; ++r) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 3 * r; j < 3 * r + 3; ++j) {
      num += (pred[j] - truth[j]) * (pred[j] - truth[j]);
      den += truth[j] * truth[j];
    }
    sum += std::sqrt(num) / (std::sqrt(den) + kMreEpsilon);
  }
  return 100.0 * sum / static_cast<double>(rows);
}

Tensor FlowStepModel::predict(const Tensor& input, const Tensor& cond) {
  ad::Tape t;
  t.set_param_grads(false);
  Var x = model_->normalize_input(t, t.constant(input));
  Var c = model_->normalize_cond(t, t.constant(cond));
  Var pred = ad::slice_cols(model_->denormalize(t, model_->forward(t, x, c)), 0, 3);
  const auto v = t.value(pred);
  return Tensor(t.shape(pred), std::vector<double>(v.begin(), v.end()));
}

DynamicsStepModel::DynamicsStepModel(const SpacecraftParams& p, double dt, int substeps)
    : p_(p), dt_(dt), substeps_(substeps) {
  if (!(dt > 0.0) || substeps < 1) throw std::invalid_argument("DynamicsStepModel: bad step");
}

Tensor DynamicsStepModel::predict(const Tensor& input, const Tensor&) {
  const std::size_t n = input.shape.rows();
  Tensor out(Shape{n, 3});
  const double h = dt_ / substeps_;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = input.data.data() + i * data::kInputDim;
    BodyState s;
    s.omega = {row[0], row[1], row[2]};
    s.omega_rw = {row[3], row[4], row[5]};
    const Vec3 u{row[6], row[7], row[8]};
    const Vec3 w0 = s.omega;
    for (int k = 0; k < substeps_; ++k) s = dynamics::rk4_step(p_, s, u, Vec3{}, h);
    const Vec3 d = s.omega - w0;
    for (std::size_t j = 0; j < 3; ++j) out.data[3 * i + j] = d[j];
  }
  return out;
}

Tensor ZeroStepModel::predict(const Tensor& input, const Tensor&) { return Tensor(Shape{input.shape.rows(), 3}); }

namespace {

struct LoopState {
  std::vector<Vec3> omega, omega_rw, torque, omega_dot;
};

LoopState initial_state(const data::Dataset& d) {
  LoopState s;
  for (const auto& x : d.samples) {
    s.omega.push_back(x.omega());
    s.omega_rw.push_back(x.omega_rw());
    s.torque.push_back(x.torque());
    s.omega_dot.push_back(x.omega_dot());
  }
  return s;
}

// Increments for every sample of `s`, predicted in chunks.
std::vector<Vec3> predict_all(StepModel& m, const data::Dataset& d, const LoopState& s, std::size_t batch) {
  const std::size_t n = d.samples.size();
  std::vector<Vec3> out(n);
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t b = std::min(batch, n - start);
    Tensor input(Shape{b, data::kInputDim});
    Tensor cond(Shape{b, data::kCondDim});
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t k = start + i;
      double* row = input.data.data() + i * data::kInputDim;
      for (std::size_t j = 0; j < 3; ++j) {
        row[j] = s.omega[k][j];
        row[3 + j] = s.omega_rw[k][j];
        row[6 + j] = s.torque[k][j];
        row[9 + j] = s.omega_dot[k][j];
      }
      std::copy(d.samples[k].cond.begin(), d.samples[k].cond.end(), cond.data.begin() + i * data::kCondDim);
    }
    const Tensor pred = m.predict(input, cond);
    if (pred.shape != Shape{b, 3}) throw std::runtime_error("StepModel returned " + pred.shape.str());
    for (std::size_t i = 0; i < b; ++i) out[start + i] = {pred.data[3 * i], pred.data[3 * i + 1], pred.data[3 * i + 2]};
  }
  return out;
}

void require_dataset(const data::Dataset& d, std::size_t steps) {
  if (d.samples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  if (steps < 1 || steps > d.steps) {
    throw std::invalid_argument(fmt::format("evaluate: self-loop length {} outside [1, {}]", steps, d.steps));
  }
}

}  // namespace

std::vector<double> selfloop_increments(StepModel& m, const data::Dataset& d, std::size_t steps,
                                        std::size_t batch_size) {
  require_dataset(d, steps);
  const std::size_t n = d.samples.size();
  LoopState s = initial_state(d);
  std::vector<double> out(n * steps * 3);
  for (std::size_t k = 0; k < steps; ++k) {
    const auto inc = predict_all(m, d, s, batch_size);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < 3; ++j) out[(i * steps + k) * 3 + j] = inc[i][j];
      s.omega[i] += inc[i];
      s.omega_dot[i] = inc[i] / d.control_dt;
      s.omega_rw[i] += dynamics::wheel_acceleration(d.params, s.torque[i], s.omega_dot[i]) * d.control_dt;
    }
  }
  return out;
}

RegressionMetrics evaluate_regression(StepModel& m, const data::Dataset& test, const RegressionOptions& opts) {
  const std::size_t steps = opts.selfloop_steps;
  require_dataset(test, steps);
  const std::size_t n = test.samples.size();
  const bool state = opts.basis == MreBasis::state;
  RegressionMetrics r;

  const auto single = predict_all(m, test, initial_state(test), opts.batch_size);
  std::vector<double> flat(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& x = test.samples[i];
    const Vec3 base = state ? x.omega() : Vec3{};
    const Vec3 p = base + single[i];
    const Vec3 tr = base + x.target();
    const double pv[3] = {p.x, p.y, p.z};
    const double tv[3] = {tr.x, tr.y, tr.z};
    r.single_errors.push_back(mre(pv, tv, opts.mode));
    for (std::size_t j = 0; j < 3; ++j) flat[3 * i + j] = single[i][j];
  }
  const auto losses1 = train::evaluate_losses(test.params, test.normalization, test.samples, flat, 1, test.control_dt,
                                              opts.p_factor);
  r.physics_single = losses1.l_pi;

  const auto inc = selfloop_increments(m, test, steps, opts.batch_size);
  std::vector<double> pw(3 * steps), tw(3 * steps);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& x = test.samples[i];
    Vec3 p = state ? x.omega() : Vec3{};
    Vec3 tr = p;
    for (std::size_t k = 0; k < steps; ++k) {
      const double* d = inc.data() + (i * steps + k) * 3;
      const double* g = x.multi_targets.data() + 3 * k;
      if (state) {
        p += Vec3{d[0], d[1], d[2]};
        tr += Vec3{g[0], g[1], g[2]};
      } else {
        p = {d[0], d[1], d[2]};
        tr = {g[0], g[1], g[2]};
      }
      for (std::size_t j = 0; j < 3; ++j) {
        pw[3 * k + j] = p[j];
        tw[3 * k + j] = tr[j];
      }
    }
    r.selfloop_errors.push_back(mre(pw, tw, opts.mode));
  }
  const auto lossesk = train::evaluate_losses(test.params, test.normalization, test.samples, inc, steps,
                                              test.control_dt, opts.p_factor);
  r.physics_selfloop = lossesk.l_pi;

  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  r.mre_single = mean(r.single_errors);
  r.mre_selfloop = mean(r.selfloop_errors);
  return r;
}

namespace {

std::array<double, 4> attitude_error(const Quat& q, const Quat& q_ref) {
  const Quat a = dot(q, q_ref) < 0.0 ? -q : q;
  return {a.w - q_ref.w, a.x - q_ref.x, a.y - q_ref.y, a.z - q_ref.z};
}

}  // namespace

ApeSeries ape(const mpc::ClosedLoopResult& r, const Quat& q_ref) {
  if (r.times.size() != r.states.size()) throw std::invalid_argument("ape: times and states differ in length");
  ApeSeries a;
  a.times = r.times;
  for (const auto& s : r.states) {
    const auto e = attitude_error(s.attitude, q_ref);
    a.q_err.push_back(e);
    a.q_norm.push_back(std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2] + e[3] * e[3]));
    a.omega.push_back(s.omega);
    a.omega_rw.push_back(s.omega_rw);
  }
  return a;
}

double settling_time(const ApeSeries& a, double threshold) {
  if (a.q_norm.empty()) throw std::invalid_argument("settling_time: empty series");
  std::size_t k = a.q_norm.size();
  while (k > 0 && a.q_norm[k - 1] < threshold) --k;
  if (k == a.q_norm.size()) return std::numeric_limits<double>::infinity();
  return a.times[k];
}

SpeResult spe(std::span<const double> times, std::span<const Vec3> axes, const SpeOptions& opts) {
  if (times.size() != axes.size()) throw std::invalid_argument("spe: times and samples differ in length");
  if (times.size() < 2) throw std::invalid_argument("spe: need at least two samples");
  const double dt = times[1] - times[0];
  if (!(dt > 0.0)) throw std::invalid_argument("spe: times must increase");
  const long lag = std::lround(opts.delta_in_steps ? opts.delta : opts.delta / dt);
  if (lag < 1) throw std::invalid_argument("spe: window shorter than one sample");
  SpeResult r;
  double sum = 0.0;
  for (std::size_t i = static_cast<std::size_t>(lag); i < times.size(); ++i) {
    if (!(times[i] > opts.settle_time)) continue;
    const Vec3& now = axes[i];
    const Vec3& before = axes[i - static_cast<std::size_t>(lag)];
    double v = 0.0;
    for (std::size_t j = 0; j < 3; ++j) v += std::abs(now[j]) - std::abs(before[j]);
    v /= 3.0;
    r.times.push_back(times[i]);
    r.values.push_back(v);
    sum += std::abs(v);
  }
  if (r.values.empty()) throw std::invalid_argument("spe: no samples after the settling time");
  r.mean_abs = sum / static_cast<double>(r.values.size());
  return r;
}

SpeResult spe(const ApeSeries& a, const SpeOptions& opts) {
  std::vector<Vec3> axes;
  for (const auto& e : a.q_err) axes.push_back({e[1], e[2], e[3]});
  return spe(a.times, axes, opts);
}

Scenario default_scenario() {
  Scenario sc;
  sc.q_ref = Quat::from_axis_angle({0.0, 1.0, 0.0}, std::numbers::pi / 2.0);
  return sc;
}

double truncated_normal(std::mt19937_64& rng, double level) {
  if (!(level >= 0.0)) throw std::invalid_argument("noise level must be non-negative");
  if (level == 0.0) return 0.0;
  std::normal_distribution<double> dist(0.0, level / 3.0);
  for (;;) {
    const double d = dist(rng);
    if (std::abs(d) <= level) return d;
  }
}

BodyState observe_noisy(const BodyState& truth, std::mt19937_64& rng, const NoiseOptions& opts) {
  auto perturb = [&](double x, double scale) {
    const double d = truncated_normal(rng, opts.level);
    return opts.additive ? x + d * scale : x * (1.0 + d);
  };
  BodyState s = truth;
  const double sq = opts.additive_scale[0];
  s.attitude = Quat{perturb(s.attitude.w, sq), perturb(s.attitude.x, sq), perturb(s.attitude.y, sq),
                    perturb(s.attitude.z, sq)}
                   .normalized();
  for (std::size_t j = 0; j < 3; ++j) s.omega[j] = perturb(s.omega[j], opts.additive_scale[1]);
  for (std::size_t j = 0; j < 3; ++j) s.omega_rw[j] = perturb(s.omega_rw[j], opts.additive_scale[2]);
  return s;
}

namespace {

constexpr std::array<const char*, 4> kVariables{"attitude", "angular_velocity", "wheel_speed", "wheel_torque"};

// Error components of variable v at sample k.
std::vector<double> components(const mpc::ClosedLoopResult& r, std::size_t v, std::size_t k, const Quat& q_ref) {
  switch (v) {
    case 0: {
      const auto e = attitude_error(r.states[k].attitude, q_ref);
      return {e.begin(), e.end()};
    }
    case 1: return {r.states[k].omega.x, r.states[k].omega.y, r.states[k].omega.z};
    case 2: return {r.states[k].omega_rw.x, r.states[k].omega_rw.y, r.states[k].omega_rw.z};
    default: return {r.torques[k].x, r.torques[k].y, r.torques[k].z};
  }
}

std::size_t samples_of(const mpc::ClosedLoopResult& r, std::size_t v) {
  return v == 3 ? r.torques.size() : r.states.size();
}

// Population standard deviation; exactly zero when every value is equal.
double population_std(const std::vector<double>& x) {
  if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); })) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(x.size()));
}

}  // namespace

std::vector<VariableStats> run_statistics(const std::vector<mpc::ClosedLoopResult>& runs, const Quat& q_ref) {
  if (runs.empty()) throw std::invalid_argument("run_statistics: no runs");
  for (const auto& r : runs) {
    if (r.states.size() != runs[0].states.size() || r.torques.size() != runs[0].torques.size()) {
      throw std::invalid_argument("run_statistics: runs differ in length");
    }
  }
  std::vector<VariableStats> out;
  const double n_runs = static_cast<double>(runs.size());
  for (std::size_t v = 0; v < kVariables.size(); ++v) {
    VariableStats st;
    st.variable = kVariables[v];
    const std::size_t n = samples_of(runs[0], v);
    if (n == 0) throw std::invalid_argument("run_statistics: empty run");
    const std::size_t dim = components(runs[0], v, 0, q_ref).size();
    double abs_sum = 0.0, final_sum = 0.0, spread_sum = 0.0;
    std::vector<std::vector<double>> across(dim, std::vector<double>(runs.size()));
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t r = 0; r < runs.size(); ++r) {
        const auto c = components(runs[r], v, k, q_ref);
        for (std::size_t j = 0; j < dim; ++j) {
          abs_sum += std::abs(c[j]);
          if (k + 1 == n) final_sum += std::abs(c[j]);
          across[j][r] = c[j];
        }
      }
      for (std::size_t j = 0; j < dim; ++j) spread_sum += population_std(across[j]);
    }
    const double d = static_cast<double>(dim);
    st.mae = abs_sum / (n_runs * static_cast<double>(n) * d);
    st.final_error = final_sum / (n_runs * d);
    st.spread = spread_sum / (static_cast<double>(n) * d);
    out.push_back(st);
  }
  return out;
}

RobustnessResult robustness_experiment(mpc::PredictionModel& m, const Scenario& sc, std::size_t n_runs,
                                       const NoiseOptions& noise, std::uint64_t seed) {
  if (n_runs < 1) throw std::invalid_argument("robustness: need at least one run");
  RobustnessResult res;
  for (std::size_t i = 0; i < n_runs; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    const mpc::Observer observe = [&](const BodyState& truth, std::size_t) { return observe_noisy(truth, rng, noise); };
    res.runs.push_back(mpc::closed_loop(m, sc.plant, sc.mpc, sc.initial, sc.q_ref, sc.duration, observe));
  }
  res.stats = run_statistics(res.runs, sc.q_ref);
  return res;
}

void write_regression_table(const std::vector<RegressionRow>& rows, const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("experiment,mre,physics,mre_selfloop,physics_selfloop\n");
  for (const auto& r : rows) {
    out.print("{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.experiment, r.metrics.mre_single, r.metrics.physics_single,
              r.metrics.mre_selfloop, r.metrics.physics_selfloop);
  }
}

void write_robustness_table(const std::vector<std::pair<std::string, std::vector<VariableStats>>>& rows,
                            const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("experiment_variable,mae,final_error,spread\n");
  for (const auto& [name, stats] : rows) {
    for (const auto& s : stats) {
      out.print("{}_{},{:.17g},{:.17g},{:.17g}\n", name, s.variable, s.mae, s.final_error, s.spread);
    }
  }
}

void write_ape_csv(const ApeSeries& a, const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("time,q_err0,q_err1,q_err2,q_err3,q_norm,w1,w2,w3,wrw1,wrw2,wrw3\n");
  for (std::size_t k = 0; k < a.times.size(); ++k) {
    const auto& e = a.q_err[k];
    out.print("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n",
              a.times[k], e[0], e[1], e[2], e[3], a.q_norm[k], a.omega[k].x, a.omega[k].y, a.omega[k].z,
              a.omega_rw[k].x, a.omega_rw[k].y, a.omega_rw[k].z);
  }
}

void write_spe_csv(const SpeResult& s, const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("time,spe\n");
  for (std::size_t k = 0; k < s.times.size(); ++k) out.print("{:.17g},{:.17g}\n", s.times[k], s.values[k]);
}

void write_envelope_csv(const std::vector<mpc::ClosedLoopResult>& runs, const Quat& q_ref,
                        const std::filesystem::path& path) {
  if (runs.empty()) throw std::invalid_argument("write_envelope_csv: no runs");
  static constexpr std::array<std::array<const char*, 4>, 4> names{{{"q_err0", "q_err1", "q_err2", "q_err3"},
                                                                     {"w1", "w2", "w3", ""},
                                                                     {"wrw1", "wrw2", "wrw3", ""},
                                                                     {"u1", "u2", "u3", ""}}};
  auto out = fmt::output_file(path.string());
  out.print("time");
  for (std::size_t v = 0; v < 4; ++v) {
    for (std::size_t j = 0; j < (v == 0 ? 4u : 3u); ++j) out.print(",{0}_mean,{0}_std", names[v][j]);
  }
  out.print("\n");
  std::vector<double> across(runs.size());
  for (std::size_t k = 0; k < runs[0].states.size(); ++k) {
    out.print("{:.17g}", runs[0].times[k]);
    for (std::size_t v = 0; v < 4; ++v) {
      const std::size_t dim = v == 0 ? 4 : 3;
      for (std::size_t j = 0; j < dim; ++j) {
        if (k >= samples_of(runs[0], v)) {
          out.print(",,");
          continue;
        }
        double mean = 0.0;
        for (std::size_t r = 0; r < runs.size(); ++r) {
          across[r] = components(runs[r], v, k, q_ref)[j];
          mean += across[r];
        }
        out.print(",{:.17g},{:.17g}", mean / static_cast<double>(runs.size()), population_std(across));
      }
    }
    out.print("\n");
  }
}

void write_manifest(const std::map<std::string, std::vector<std::string>>& files, const std::filesystem::path& path) {
  nlohmann::json j = files;
  auto out = fmt::output_file(path.string());
  out.print("{}\n", j.dump(2));
}

}  // namespace satflow::eval
