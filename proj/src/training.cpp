#include "satflow/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <fmt/os.h>

#include "satflow/optim.hpp"

namespace satflow::train {

using ad::Shape;

namespace {

// Row-vector form of y = M x on [B,3]: x M^T.
Var apply(Tape& t, const Mat3& m, Var x) {
  Tensor mt(Shape{3, 3});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) mt.data[i * 3 + j] = m(j, i);
  return ad::matmul(x, t.constant(mt));
}

Var momentum_norm(Tape& t, const SpacecraftParams& p, Var omega, Var omega_rw) {
  return ad::row_norm(apply(t, p.inertia_body(), omega) + apply(t, p.inertia_wheels(), omega_rw));
}

Var concat_all(const std::vector<Var>& xs) {
  Var out = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) out = ad::concat(out, xs[i]);
  return out;
}

void check_sigma(const std::array<double, 3>& s, const char* what) {
  for (double v : s) {
    if (!(v > 0.0)) throw std::invalid_argument(fmt::format("{} must be positive", what));
  }
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

LossWeights LossWeights::fixed(double alpha, double beta) {
  LossWeights w;
  w.alpha = alpha;
  w.beta = beta;
  w.mode = WeightMode::fixed;
  return w;
}

LossWeights LossWeights::dual() { return LossWeights{}; }

void LossWeights::validate() const {
  if (!(p > 0.0)) throw std::invalid_argument("loss weights: p must be positive");
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("loss weights: alpha, beta must be >= 0");
  if (mode == WeightMode::lagrangian_dual) {
    if (beta > 0.5) throw std::invalid_argument("loss weights: beta must lie in [0, 0.5] in dual mode");
    if (std::abs(alpha + beta - 1.0) > 1e-12) {
      throw std::invalid_argument("loss weights: alpha must equal 1 - beta in dual mode");
    }
    if (!(eta > 0.0)) throw std::invalid_argument("loss weights: eta must be positive");
  }
}

Var loss_data_driven(Var pred, Var target, const std::array<double, 3>& sigma_dw) {
  check_sigma(sigma_dw, "sigma_dw");
  Tape& t = *pred.tape;
  const Shape s = t.shape(pred);
  if (s != t.shape(target)) {
    throw ad::ShapeError("loss_data_driven: " + s.str() + " vs " + t.shape(target).str());
  }
  if (s.rank != 2 || s[1] % 3 != 0) throw ad::ShapeError("loss_data_driven: expected [B, S*3], got " + s.str());
  const std::size_t rows = s[0] * (s[1] / 3);
  Var per_axis = ad::sum_rows(ad::reshape(ad::square(pred - target), Shape{rows, 3}));
  Var rmse = ad::sqrt(ad::scale(per_axis, 1.0 / static_cast<double>(rows)));
  Tensor inv(Shape{3});
  for (std::size_t a = 0; a < 3; ++a) inv.data[a] = 1.0 / sigma_dw[a];
  return ad::mean(rmse * t.constant(inv));
}

Rollout rollout(Tape& t, const SpacecraftParams& p, Var input, Var increments, double dt) {
  const std::size_t cols = t.shape(increments)[1];
  if (t.shape(increments).rank != 2 || cols % 3 != 0) {
    throw ad::ShapeError("rollout: expected [B, S*3], got " + t.shape(increments).str());
  }
  Var omega = ad::slice_cols(input, 0, 3);
  Var omega_rw = ad::slice_cols(input, 3, 3);
  Var drive = apply(t, p.inertia_wheels_inv(), ad::slice_cols(input, 6, 3));
  Rollout r;
  for (std::size_t k = 0; k < cols / 3; ++k) {
    Var d = ad::slice_cols(increments, 3 * k, 3);
    Var wdot = ad::scale(d, 1.0 / dt);
    omega = omega + d;
    omega_rw = omega_rw + ad::scale(drive - wdot, dt);
    r.omega.push_back(omega);
    r.omega_rw.push_back(omega_rw);
    r.omega_dot.push_back(wdot);
  }
  return r;
}

Var angular_acceleration(Tape& t, const SpacecraftParams& p, Var omega, Var omega_rw, Var torque) {
  Var h = apply(t, p.inertia_body(), omega) + apply(t, p.inertia_wheels(), omega_rw);
  return apply(t, p.coupled_inv(), -ad::cross(omega, h) - torque);
}

PhysicsLoss loss_physics(Tape& t, const SpacecraftParams& p, Var input, Var pred, Var target,
                         const std::array<double, 3>& sigma_wdot, double p_factor, double dt) {
  check_sigma(sigma_wdot, "sigma_wdot");
  if (t.shape(pred) != t.shape(target)) {
    throw ad::ShapeError("loss_physics: " + t.shape(pred).str() + " vs " + t.shape(target).str());
  }
  const Rollout hat = rollout(t, p, input, pred, dt);
  const Rollout truth = rollout(t, p, input, target, dt);
  Var torque = ad::slice_cols(input, 6, 3);

  std::vector<Var> model;
  Var omega = ad::slice_cols(input, 0, 3);
  Var omega_rw = ad::slice_cols(input, 3, 3);
  for (std::size_t k = 0; k < hat.omega.size(); ++k) {
    model.push_back(angular_acceleration(t, p, omega, omega_rw, torque));
    omega = hat.omega[k];
    omega_rw = hat.omega_rw[k];
  }
  PhysicsLoss out;
  out.l_wdot = loss_data_driven(concat_all(hat.omega_dot), concat_all(model), sigma_wdot);

  Var acc;
  for (std::size_t k = 0; k < hat.omega.size(); ++k) {
    Var diff = momentum_norm(t, p, hat.omega[k], hat.omega_rw[k]) -
               momentum_norm(t, p, truth.omega[k], truth.omega_rw[k]);
    Var term = ad::mean(ad::square(diff));
    acc = k == 0 ? term : acc + term;
  }
  out.l_h = ad::scale(acc, 1.0 / static_cast<double>(hat.omega.size()));
  out.total = out.l_wdot + ad::scale(out.l_h, p_factor);
  return out;
}

double total_loss(double ldd, double lpi, const LossWeights& w) { return w.alpha * ldd + w.beta * lpi; }

Var total_loss(Var ldd, Var lpi, const LossWeights& w) {
  return ad::scale(ldd, w.alpha) + ad::scale(lpi, w.beta);
}

LossWeights lagrangian_update(const LossWeights& w, double ldd_val, double lpi_val) {
  if (w.mode != WeightMode::lagrangian_dual) {
    throw std::logic_error("lagrangian_update: weights are in fixed mode");
  }
  LossWeights out = w;
  out.beta = std::clamp(w.beta + w.eta * (lpi_val - ldd_val), 0.0, 0.5);
  out.alpha = 1.0 - out.beta;
  return out;
}

std::vector<RolledState> rollout(const SpacecraftParams& p, const data::TrainingSample& s,
                                 std::span<const double> increments, double dt) {
  if (increments.size() % 3 != 0) throw std::invalid_argument("rollout: increments not a multiple of 3");
  const Vec3 drive = p.inertia_wheels_inv() * s.torque();
  Vec3 omega = s.omega();
  Vec3 omega_rw = s.omega_rw();
  std::vector<RolledState> out;
  for (std::size_t k = 0; k < increments.size() / 3; ++k) {
    const Vec3 d{increments[3 * k], increments[3 * k + 1], increments[3 * k + 2]};
    const Vec3 wdot = d * (1.0 / dt);
    omega = omega + d;
    omega_rw = omega_rw + (drive - wdot) * dt;
    out.push_back({omega, omega_rw, wdot});
  }
  return out;
}

Batch make_batch(const std::vector<data::TrainingSample>& samples,
                 std::span<const std::size_t> index, std::size_t steps) {
  const std::size_t n = index.size();
  Batch b{Tensor(Shape{n, data::kInputDim}), Tensor(Shape{n, steps * 3}),
          Tensor(Shape{n, data::kCondDim})};
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples.at(index[i]);
    if (s.multi_targets.size() != steps * 3) {
      throw std::invalid_argument("make_batch: sample target length does not match S");
    }
    std::copy(s.input.begin(), s.input.end(), b.input.data.begin() + i * data::kInputDim);
    std::copy(s.multi_targets.begin(), s.multi_targets.end(), b.target.data.begin() + i * steps * 3);
    std::copy(s.cond.begin(), s.cond.end(), b.cond.data.begin() + i * data::kCondDim);
  }
  return b;
}

LossValues evaluate_losses(const SpacecraftParams& p, const data::Normalization& norm,
                           std::span<const data::TrainingSample> samples,
                           std::span<const double> pred, std::size_t steps, double dt,
                           double p_factor) {
  const std::size_t n = samples.size();
  if (n == 0) throw std::invalid_argument("evaluate_losses: no samples");
  if (pred.size() != n * steps * 3) throw std::invalid_argument("evaluate_losses: prediction size mismatch");
  Tensor input(Shape{n, data::kInputDim});
  Tensor target(Shape{n, steps * 3});
  for (std::size_t i = 0; i < n; ++i) {
    if (samples[i].multi_targets.size() < steps * 3) {
      throw std::invalid_argument("evaluate_losses: sample shorter than S");
    }
    std::copy(samples[i].input.begin(), samples[i].input.end(), input.data.begin() + i * data::kInputDim);
    std::copy_n(samples[i].multi_targets.begin(), steps * 3, target.data.begin() + i * steps * 3);
  }
  Tape t;
  t.set_param_grads(false);
  Var in = t.constant(input);
  Var tg = t.constant(target);
  Var pr = t.input(Shape{n, steps * 3}, pred);
  const PhysicsLoss phys = loss_physics(t, p, in, pr, tg, norm.sigma_wdot, p_factor, dt);
  return {t.scalar(loss_data_driven(pr, tg, norm.sigma_dw)), t.scalar(phys.l_wdot), t.scalar(phys.l_h),
          t.scalar(phys.total)};
}

BatchLosses batch_losses(Tape& t, flow::FlowModel& m, const Batch& b, const SpacecraftParams& p,
                         const LossWeights& w, double dt) {
  Var input = t.constant(b.input);
  Var target = t.constant(b.target);
  Var out_n = m.forward(t, m.normalize_input(t, input), m.normalize_cond(t, t.constant(b.cond)));
  BatchLosses l;
  l.pred = m.denormalize(t, out_n);
  const auto& norm = m.normalization();
  l.l_dd = loss_data_driven(l.pred, target, norm.sigma_dw);
  l.physics = loss_physics(t, p, input, l.pred, target, norm.sigma_wdot, w.p, dt);
  l.total = total_loss(l.l_dd, l.physics.total, w);
  return l;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("train: max_epochs must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw std::invalid_argument("train: validation_fraction must lie in [0, 1)");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (lr_schedule == LrSchedule::cosine && !(final_learning_rate > 0.0)) {
    throw std::invalid_argument("train: final_learning_rate must be positive");
  }
  weights.validate();
}

double TrainConfig::learning_rate_at(std::size_t epoch) const {
  if (lr_schedule == LrSchedule::constant || max_epochs < 2) return learning_rate;
  const double x = static_cast<double>(std::min(epoch, max_epochs - 1)) / static_cast<double>(max_epochs - 1);
  return final_learning_rate + 0.5 * (learning_rate - final_learning_rate) * (1.0 + std::cos(std::numbers::pi * x));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_run(
    const data::Dataset& d, double validation_fraction) {
  std::size_t n_val = 0;
  if (validation_fraction > 0.0 && d.n_runs >= 2) {
    n_val = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(validation_fraction * d.n_runs)), 1, d.n_runs - 1);
  }
  const std::size_t first_val = d.n_runs - n_val;
  std::vector<std::size_t> train, val;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    (d.samples[i].run >= first_val && n_val > 0 ? val : train).push_back(i);
  }
  return {std::move(train), std::move(val)};
}

LossValues evaluate(flow::FlowModel& m, const data::Dataset& d, std::span<const std::size_t> index,
                    const LossWeights& w, std::size_t batch_size) {
  if (index.empty()) throw std::invalid_argument("evaluate: no samples");
  Tape t;
  t.set_param_grads(false);
  LossValues sum;
  for (std::size_t start = 0; start < index.size(); start += batch_size) {
    const auto chunk = index.subspan(start, std::min(batch_size, index.size() - start));
    t.clear();
    const auto l = batch_losses(t, m, make_batch(d.samples, chunk, d.steps), d.params, w, d.control_dt);
    const double f = static_cast<double>(chunk.size());
    sum.l_dd += f * t.scalar(l.l_dd);
    sum.l_wdot += f * t.scalar(l.physics.l_wdot);
    sum.l_h += f * t.scalar(l.physics.l_h);
    sum.l_pi += f * t.scalar(l.physics.total);
  }
  const double n = static_cast<double>(index.size());
  return {sum.l_dd / n, sum.l_wdot / n, sum.l_h / n, sum.l_pi / n};
}

FitResult fit(const flow::FlowModel& initial, const data::Dataset& d, const TrainConfig& cfg,
              const EpochCallback& on_epoch) {
  cfg.validate();
  if (d.samples.empty()) throw TrainingError("fit: empty dataset");
  if (initial.config().steps != d.steps) {
    throw TrainingError(fmt::format("fit: model predicts {} steps, dataset has {}", initial.config().steps,
                                    d.steps));
  }
  const auto clock_start = std::chrono::steady_clock::now();
  auto [train_idx, val_idx] = split_by_run(d, cfg.validation_fraction);
  if (train_idx.empty()) throw TrainingError("fit: no training samples after the validation split");

  flow::FlowModel model = initial;
  flow::FlowModel best = initial;
  ad::Adam opt(model.parameters(), ad::AdamConfig{.lr = cfg.learning_rate});
  std::mt19937_64 rng(cfg.seed);
  LossWeights w = cfg.weights;
  TrainReport report;
  report.train_samples = train_idx.size();
  report.val_samples = val_idx.size();
  double best_total = std::numeric_limits<double>::infinity();

  Tape t;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.alpha = w.alpha;
    rec.beta = w.beta;
    rec.learning_rate = cfg.learning_rate_at(epoch);
    opt.set_lr(rec.learning_rate);
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size, ++batch_no) {
      const auto chunk = std::span<const std::size_t>(train_idx).subspan(
          start, std::min(cfg.batch_size, train_idx.size() - start));
      t.clear();
      opt.zero_grad();
      const auto l = batch_losses(t, model, make_batch(d.samples, chunk, d.steps), d.params, w, d.control_dt);
      const double total = t.scalar(l.total);
      if (!finite(total) || !finite(t.scalar(l.l_dd)) || !finite(t.scalar(l.physics.total))) {
        throw TrainingError(fmt::format("fit: non-finite loss at epoch {} batch {} (L_DD {}, L_PI {})", epoch,
                                        batch_no, t.scalar(l.l_dd), t.scalar(l.physics.total)));
      }
      t.backward(l.total);
      opt.step();
      const double f = static_cast<double>(chunk.size());
      rec.train_ldd += f * t.scalar(l.l_dd);
      rec.train_lpi += f * t.scalar(l.physics.total);
      rec.train_total += f * total;
    }
    const double n = static_cast<double>(train_idx.size());
    rec.train_ldd /= n;
    rec.train_lpi /= n;
    rec.train_total /= n;

    if (val_idx.empty()) {
      rec.val_ldd = rec.train_ldd;
      rec.val_lpi = rec.train_lpi;
    } else {
      const auto v = evaluate(model, d, val_idx, w, cfg.batch_size);
      rec.val_ldd = v.l_dd;
      rec.val_lpi = v.l_pi;
    }
    rec.val_total = total_loss(rec.val_ldd, rec.val_lpi, w);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.val_total < best_total) {
      best_total = rec.val_total;
      best = model;
      report.best_epoch = epoch;
    } else if (epoch - report.best_epoch >= cfg.patience) {
      break;
    }
    if (w.mode == WeightMode::lagrangian_dual) w = lagrangian_update(w, rec.val_ldd, rec.val_lpi);
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - clock_start).count();
  return {std::move(best), std::move(report)};
}

void write_report_csv(const TrainReport& r, const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("epoch,train_l_dd,train_l_pi,train_total,val_l_dd,val_l_pi,val_total,alpha,beta,learning_rate\n");
  for (const auto& e : r.epochs) {
    out.print("{},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", e.epoch, e.train_ldd,
              e.train_lpi, e.train_total, e.val_ldd, e.val_lpi, e.val_total, e.alpha, e.beta, e.learning_rate);
  }
}

}  // namespace satflow::train
