#pragma once
// Training samples cut from simulated maneuvers, their normalization
// statistics, and the on-disk dataset format.

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "satflow/sim.hpp"

namespace satflow::data {

using dynamics::SpacecraftParams;

inline constexpr std::size_t kInputDim = 12;
inline constexpr std::size_t kCondDim = 21;

/// Flattened I_s (9), diagonal of I_rw (3), flattened I_s^-1 (9).
using ConditioningVector = std::array<double, kCondDim>;

ConditioningVector conditioning(const SpacecraftParams& p);

struct TrainingSample {
  /// (w, w_rw, u_rw, w_dot) with w_dot the backward difference of w.
  std::array<double, kInputDim> input{};
  /// S rows of future w increments, row-major S x 3. Row 0 is the one-step target.
  std::vector<double> multi_targets;
  ConditioningVector cond{};
  /// Index of the maneuver the sample was cut from.
  std::uint32_t run = 0;

  Vec3 target() const { return {multi_targets[0], multi_targets[1], multi_targets[2]}; }
  Vec3 omega() const { return {input[0], input[1], input[2]}; }
  Vec3 omega_rw() const { return {input[3], input[4], input[5]}; }
  Vec3 torque() const { return {input[6], input[7], input[8]}; }
  Vec3 omega_dot() const { return {input[9], input[10], input[11]}; }

  friend bool operator==(const TrainingSample&, const TrainingSample&) = default;
};

struct Normalization {
  std::array<double, kInputDim> input_mean{};
  std::array<double, kInputDim> input_std{};
  /// Per-axis standard deviation of the one-step increment.
  std::array<double, 3> sigma_dw{};
  /// Per-axis standard deviation of the angular acceleration.
  std::array<double, 3> sigma_wdot{};

  friend bool operator==(const Normalization&, const Normalization&) = default;
};

/// Population statistics over `samples`. Zero deviations are replaced by 1 so
/// that constant columns normalize to zero.
Normalization compute_normalization(const std::vector<TrainingSample>& samples);

struct Dataset {
  SpacecraftParams params = SpacecraftParams::reference();
  std::uint32_t steps = 10;
  double control_dt = 0.1;
  std::uint32_t n_runs = 0;
  std::vector<TrainingSample> samples;
  Normalization normalization;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cut (input, S-step target) windows from a recorded trajectory. The first
/// state has no backward difference and is skipped, so a trajectory of N
/// states yields N - 1 - S samples.
std::vector<TrainingSample> extract_samples(const sim::Trajectory& traj, std::size_t steps,
                                            double control_dt, const SpacecraftParams& p,
                                            std::uint32_t run = 0);

struct GenerateOptions {
  std::size_t steps = 10;
};

/// Simulate `n_runs` maneuvers (run i seeded with cfg.seed + i, random target
/// attitude per run) and collect their samples in run order.
Dataset generate_dataset(const sim::SimConfig& cfg, std::size_t n_runs,
                         const GenerateOptions& opts = {});

void write_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);

/// One row per sample: w1..w3, wrw1..wrw3, u1..u3, wdot1..wdot3, dw1..dw3.
void write_dataset_csv(const Dataset& d, const std::filesystem::path& path);

}  // namespace satflow::data
