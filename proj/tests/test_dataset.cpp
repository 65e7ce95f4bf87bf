#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "satflow/dataset.hpp"

using namespace satflow;
using namespace satflow::data;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("satflow_test_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

sim::Trajectory ramp_trajectory(std::size_t n, const Vec3& w0, const Vec3& step) {
  sim::Trajectory t;
  for (std::size_t i = 0; i < n; ++i) {
    dynamics::BodyState s;
    s.omega = w0 + static_cast<double>(i) * step;
    t.times.push_back(0.1 * static_cast<double>(i));
    t.states.push_back(s);
    t.torques.push_back({});
  }
  return t;
}

Dataset small_dataset() {
  sim::SimConfig cfg;
  cfg.duration = 5.0;
  cfg.seed = 3;
  return generate_dataset(cfg, 2, {.steps = 4});
}

}  // namespace

TEST(Conditioning, LayoutAndValues) {
  const auto p = SpacecraftParams::reference();
  const auto c = conditioning(p);
  EXPECT_DOUBLE_EQ(c[0], 5.7);
  EXPECT_DOUBLE_EQ(c[1], 0.045);
  EXPECT_DOUBLE_EQ(c[8], 6.1);
  EXPECT_DOUBLE_EQ(c[9], 0.001);
  EXPECT_DOUBLE_EQ(c[11], 0.001);
  EXPECT_DOUBLE_EQ(c[12], p.inertia_body_inv()(0, 0));
  EXPECT_DOUBLE_EQ(c[20], p.inertia_body_inv()(2, 2));
}

TEST(ExtractSamples, ConstantRateGivesZeroTargets) {
  const auto traj = ramp_trajectory(30, {0.1, 0.2, 0.3}, {});
  const auto samples = extract_samples(traj, 5, 0.1, SpacecraftParams::reference());
  ASSERT_EQ(samples.size(), 30u - 1 - 5);
  for (const auto& s : samples) {
    ASSERT_EQ(s.multi_targets.size(), 15u);
    for (double v : s.multi_targets) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(s.omega_dot(), Vec3{});
  }
}

TEST(ExtractSamples, RampHasExactIncrements) {
  const Vec3 step{0.25, -0.5, 0.125};
  const auto traj = ramp_trajectory(20, {1.0, 2.0, -1.0}, step);
  const auto samples = extract_samples(traj, 3, 0.5, SpacecraftParams::reference(), 7);
  ASSERT_EQ(samples.size(), 16u);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    EXPECT_EQ(s.run, 7u);
    EXPECT_EQ(s.omega(), traj.states[i + 1].omega);
    EXPECT_EQ(s.omega_dot(), step / 0.5);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(s.multi_targets[k * 3 + 0], step.x);
      EXPECT_EQ(s.multi_targets[k * 3 + 1], step.y);
      EXPECT_EQ(s.multi_targets[k * 3 + 2], step.z);
    }
  }
}

TEST(ExtractSamples, TargetsSumToFutureRate) {
  sim::SimConfig cfg;
  cfg.duration = 10.0;
  const auto traj = sim::run_maneuver(cfg, Quat::identity());
  const std::size_t steps = 6;
  const auto samples = extract_samples(traj, steps, cfg.control_dt, cfg.effective_params());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Vec3 acc = samples[i].omega();
    for (std::size_t k = 0; k < steps; ++k) {
      acc = acc + Vec3{samples[i].multi_targets[k * 3], samples[i].multi_targets[k * 3 + 1],
                       samples[i].multi_targets[k * 3 + 2]};
    }
    EXPECT_LT((acc - traj.states[i + 1 + steps].omega).norm(), 1e-15);
  }
}

TEST(ExtractSamples, FullManeuverSampleCount) {
  sim::SimConfig cfg;
  cfg.disturbance = sim::DisturbanceKind::none;
  const auto traj = sim::run_maneuver(cfg, Quat::identity());
  EXPECT_EQ(extract_samples(traj, 10, 0.1, cfg.params).size(), 1790u);
}

TEST(ExtractSamples, RejectsShortTrajectory) {
  const auto traj = ramp_trajectory(5, {}, {});
  EXPECT_THROW(extract_samples(traj, 4, 0.1, SpacecraftParams::reference()), std::invalid_argument);
  EXPECT_THROW(extract_samples(traj, 0, 0.1, SpacecraftParams::reference()), std::invalid_argument);
}

TEST(Normalization, PopulationStatistics) {
  std::vector<TrainingSample> samples(2);
  samples[0].input.fill(1.0);
  samples[1].input.fill(3.0);
  samples[0].input[4] = 5.0;
  samples[1].input[4] = 5.0;
  samples[0].multi_targets = {0.0, 1.0, 2.0};
  samples[1].multi_targets = {2.0, 1.0, 4.0};
  const auto n = compute_normalization(samples);
  EXPECT_DOUBLE_EQ(n.input_mean[0], 2.0);
  EXPECT_DOUBLE_EQ(n.input_std[0], 1.0);
  EXPECT_DOUBLE_EQ(n.input_std[4], 1.0);  // constant column
  EXPECT_DOUBLE_EQ(n.sigma_dw[0], 1.0);
  EXPECT_DOUBLE_EQ(n.sigma_dw[1], 1.0);
  EXPECT_DOUBLE_EQ(n.sigma_dw[2], 1.0);
  EXPECT_DOUBLE_EQ(n.sigma_wdot[0], n.input_std[9]);
}

TEST(DatasetIo, RoundTripIsExact) {
  const auto d = small_dataset();
  EXPECT_EQ(d.samples.size(), 2u * (51 - 1 - 4));
  EXPECT_EQ(d.samples.front().run, 0u);
  EXPECT_EQ(d.samples.back().run, 1u);
  const auto path = temp_path("roundtrip.bin");
  write_dataset(d, path);
  const auto back = read_dataset(path);
  EXPECT_EQ(back, d);
  std::filesystem::remove(path);
}

TEST(DatasetIo, GenerationIsByteDeterministic) {
  const auto a = temp_path("det_a.bin");
  const auto b = temp_path("det_b.bin");
  write_dataset(small_dataset(), a);
  write_dataset(small_dataset(), b);
  EXPECT_EQ(slurp(a), slurp(b));
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST(DatasetIo, RejectsCorruptFiles) {
  const auto d = small_dataset();
  const auto path = temp_path("corrupt.bin");
  write_dataset(d, path);
  std::string bytes = slurp(path);

  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::ofstream(path, std::ios::binary) << bad;
    EXPECT_THROW(read_dataset(path), FormatError);
  }
  {
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    EXPECT_THROW(read_dataset(path), FormatError);
  }
  {
    std::ofstream(path, std::ios::binary) << bytes.substr(0, 10);
    EXPECT_THROW(read_dataset(path), FormatError);
  }
  {
    std::string bad = bytes;
    bad[4] = 9;  // version
    std::ofstream(path, std::ios::binary) << bad;
    EXPECT_THROW(read_dataset(path), FormatError);
  }
  EXPECT_THROW(read_dataset(temp_path("does_not_exist.bin")), FormatError);
  std::filesystem::remove(path);
}

TEST(DatasetIo, CsvHasHeaderAndRows) {
  const auto d = small_dataset();
  const auto path = temp_path("dataset.csv");
  write_dataset_csv(d, path);
  std::ifstream in(path);
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("w1,w2,w3,", 0), 0u);
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, d.samples.size());
  std::filesystem::remove(path);
}
