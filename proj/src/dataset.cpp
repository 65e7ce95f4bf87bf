#include "satflow/dataset.hpp"

#include <fmt/os.h>

#include <cmath>
#include <cstring>

#include "binary_io.hpp"

namespace satflow::data {
namespace {

constexpr char kMagic[4] = {'S', 'F', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kMaxSteps = 1000;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void put_params(io::BinaryWriter& w, const SpacecraftParams& p) {
  w.put_doubles(p.inertia_body().m);
  w.put_doubles(p.inertia_wheels().m);
  w.put(p.mass());
  w.put(p.max_wheel_torque());
  w.put(p.max_wheel_speed());
  w.put(p.control_dt());
}

SpacecraftParams get_params(io::BinaryReader<FormatError>& r) {
  Mat3 is;
  Mat3 irw;
  r.get_doubles(is.m);
  r.get_doubles(irw.m);
  const double mass = r.get<double>();
  const double torque = r.get<double>();
  const double speed = r.get<double>();
  const double dt = r.get<double>();
  try {
    return SpacecraftParams(is, irw, mass, torque, speed, dt);
  } catch (const dynamics::InvalidParameters& e) {
    throw FormatError(std::string("dataset header: ") + e.what());
  }
}

}  // namespace

ConditioningVector conditioning(const SpacecraftParams& p) {
  ConditioningVector c{};
  for (std::size_t i = 0; i < 9; ++i) c[i] = p.inertia_body().m[i];
  for (std::size_t i = 0; i < 3; ++i) c[9 + i] = p.inertia_wheels()(i, i);
  for (std::size_t i = 0; i < 9; ++i) c[12 + i] = p.inertia_body_inv().m[i];
  return c;
}

Normalization compute_normalization(const std::vector<TrainingSample>& samples) {
  Normalization n;
  if (samples.empty()) {
    n.input_std.fill(1.0);
    n.sigma_dw.fill(1.0);
    n.sigma_wdot.fill(1.0);
    return n;
  }
  const double count = static_cast<double>(samples.size());
  std::array<double, kInputDim> sum{};
  std::array<double, 3> dw_sum{};
  for (const auto& s : samples) {
    for (std::size_t j = 0; j < kInputDim; ++j) sum[j] += s.input[j];
    for (std::size_t a = 0; a < 3; ++a) dw_sum[a] += s.multi_targets[a];
  }
  std::array<double, 3> dw_mean{};
  for (std::size_t j = 0; j < kInputDim; ++j) n.input_mean[j] = sum[j] / count;
  for (std::size_t a = 0; a < 3; ++a) dw_mean[a] = dw_sum[a] / count;

  std::array<double, kInputDim> sq{};
  std::array<double, 3> dw_sq{};
  for (const auto& s : samples) {
    for (std::size_t j = 0; j < kInputDim; ++j) {
      const double d = s.input[j] - n.input_mean[j];
      sq[j] += d * d;
    }
    for (std::size_t a = 0; a < 3; ++a) {
      const double d = s.multi_targets[a] - dw_mean[a];
      dw_sq[a] += d * d;
    }
  }
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v) ? v : 1.0; };
  for (std::size_t j = 0; j < kInputDim; ++j) n.input_std[j] = positive(std::sqrt(sq[j] / count));
  for (std::size_t a = 0; a < 3; ++a) {
    n.sigma_dw[a] = positive(std::sqrt(dw_sq[a] / count));
    n.sigma_wdot[a] = n.input_std[9 + a];
  }
  return n;
}

std::vector<TrainingSample> extract_samples(const sim::Trajectory& traj, std::size_t steps,
                                            double control_dt, const SpacecraftParams& p,
                                            std::uint32_t run) {
  if (steps < 1) throw std::invalid_argument("extract_samples: steps must be >= 1");
  const std::size_t n = traj.size();
  if (n <= steps + 1) throw std::invalid_argument("extract_samples: trajectory too short");
  if (traj.torques.size() != n || traj.times.size() != n) {
    throw std::invalid_argument("extract_samples: trajectory field lengths differ");
  }
  const ConditioningVector cond = conditioning(p);
  std::vector<TrainingSample> out;
  out.reserve(n - 1 - steps);
  for (std::size_t t = 1; t + steps < n; ++t) {
    const auto& s = traj.states[t];
    const Vec3 wdot = (s.omega - traj.states[t - 1].omega) / control_dt;
    TrainingSample smp;
    const Vec3 parts[4] = {s.omega, s.omega_rw, traj.torques[t], wdot};
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t a = 0; a < 3; ++a) smp.input[b * 3 + a] = parts[b][a];
    smp.multi_targets.resize(steps * 3);
    for (std::size_t k = 0; k < steps; ++k) {
      const Vec3 d = traj.states[t + k + 1].omega - traj.states[t + k].omega;
      for (std::size_t a = 0; a < 3; ++a) smp.multi_targets[k * 3 + a] = d[a];
    }
    smp.cond = cond;
    smp.run = run;
    out.push_back(std::move(smp));
  }
  return out;
}

Dataset generate_dataset(const sim::SimConfig& cfg, std::size_t n_runs, const GenerateOptions& opts) {
  if (n_runs < 1) throw std::invalid_argument("generate_dataset: n_runs must be >= 1");
  cfg.validate();
  Dataset d;
  d.params = cfg.effective_params();
  d.steps = static_cast<std::uint32_t>(opts.steps);
  d.control_dt = cfg.control_dt;
  d.n_runs = static_cast<std::uint32_t>(n_runs);
  for (std::size_t i = 0; i < n_runs; ++i) {
    sim::SimConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + i;
    std::mt19937_64 target_rng(splitmix64(run_cfg.seed));
    const Quat q_ref = sim::random_quaternion(target_rng);
    const auto traj = sim::run_maneuver(run_cfg, q_ref);
    auto samples = extract_samples(traj, opts.steps, cfg.control_dt, d.params,
                                   static_cast<std::uint32_t>(i));
    d.samples.insert(d.samples.end(), std::make_move_iterator(samples.begin()),
                     std::make_move_iterator(samples.end()));
  }
  d.normalization = compute_normalization(d.samples);
  return d;
}

void write_dataset(const Dataset& d, const std::filesystem::path& path) {
  io::BinaryWriter w(path);
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put(kVersion);
  w.put(static_cast<std::uint64_t>(d.samples.size()));
  w.put(d.steps);
  w.put(d.n_runs);
  w.put(d.control_dt);
  put_params(w, d.params);
  const auto& n = d.normalization;
  w.put_doubles(n.input_mean);
  w.put_doubles(n.input_std);
  w.put_doubles(n.sigma_dw);
  w.put_doubles(n.sigma_wdot);
  for (const auto& s : d.samples) {
    if (s.multi_targets.size() != static_cast<std::size_t>(d.steps) * 3) {
      throw std::invalid_argument("write_dataset: sample target length does not match steps");
    }
    w.put_doubles(s.input);
    w.put_doubles(s.multi_targets);
    w.put_doubles(s.cond);
    w.put(s.run);
  }
  w.finish();
}

Dataset read_dataset(const std::filesystem::path& path) {
  io::BinaryReader<FormatError> r(path);
  char magic[4];
  r.get_bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw FormatError("not a dataset file (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version));
  }
  Dataset d;
  const auto count = r.get<std::uint64_t>();
  d.steps = r.get<std::uint32_t>();
  if (d.steps < 1 || d.steps > kMaxSteps) throw FormatError("dataset header: invalid step count");
  d.n_runs = r.get<std::uint32_t>();
  d.control_dt = r.get<double>();
  d.params = get_params(r);
  auto& n = d.normalization;
  r.get_doubles(n.input_mean);
  r.get_doubles(n.input_std);
  r.get_doubles(n.sigma_dw);
  r.get_doubles(n.sigma_wdot);
  const std::size_t record = (kInputDim + d.steps * 3 + kCondDim) * sizeof(double) + sizeof(std::uint32_t);
  if (r.remaining() % record != 0 || r.remaining() / record != count) throw FormatError("truncated or oversized dataset payload");
  d.samples.resize(count);
  for (auto& s : d.samples) {
    r.get_doubles(s.input);
    s.multi_targets.resize(d.steps * 3);
    r.get_doubles(s.multi_targets);
    r.get_doubles(s.cond);
    s.run = r.get<std::uint32_t>();
  }
  return d;
}

void write_dataset_csv(const Dataset& d, const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("w1,w2,w3,wrw1,wrw2,wrw3,u1,u2,u3,wdot1,wdot2,wdot3,dw1,dw2,dw3\n");
  for (const auto& s : d.samples) {
    for (double v : s.input) out.print("{:.17g},", v);
    out.print("{:.17g},{:.17g},{:.17g}\n", s.multi_targets[0], s.multi_targets[1], s.multi_targets[2]);
  }
}

}  // namespace satflow::data
