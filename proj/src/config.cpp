#include "satflow/config.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <type_traits>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <fmt/os.h>
#include <json.hpp>

namespace satflow::config {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

template <class E>
using Names = std::vector<std::pair<E, const char*>>;

const Names<sim::DisturbanceKind> kDisturbance{{sim::DisturbanceKind::none, "none"},
                                               {sim::DisturbanceKind::gravity_gradient, "gravity_gradient"}};
const Names<train::LrSchedule> kLrSchedule{{train::LrSchedule::constant, "constant"},
                                           {train::LrSchedule::cosine, "cosine"}};
const Names<train::WeightMode> kWeightMode{{train::WeightMode::fixed, "fixed"},
                                           {train::WeightMode::lagrangian_dual, "lagrangian_dual"}};
const Names<eval::MreMode> kMreMode{{eval::MreMode::elementwise, "elementwise"}, {eval::MreMode::norm_ratio, "norm_ratio"}};
const Names<eval::MreBasis> kMreBasis{{eval::MreBasis::state, "state"}, {eval::MreBasis::increment, "increment"}};
const Names<Predictor> kPredictor{{Predictor::flow, "flow"}, {Predictor::dynamics, "dynamics"}, {Predictor::zero, "zero"}};
const Names<flow::Head> kHead{{flow::Head::plain, "plain"}, {flow::Head::sa1, "sa1"}, {flow::Head::sa2, "sa2"}};

template <class E>
const Names<E>& names();
template <> const Names<sim::DisturbanceKind>& names() { return kDisturbance; }
template <> const Names<train::WeightMode>& names() { return kWeightMode; }
template <> const Names<train::LrSchedule>& names() { return kLrSchedule; }
template <> const Names<eval::MreMode>& names() { return kMreMode; }
template <> const Names<eval::MreBasis>& names() { return kMreBasis; }
template <> const Names<Predictor>& names() { return kPredictor; }
template <> const Names<flow::Head>& names() { return kHead; }

[[noreturn]] void wrong_type(const std::string& key, const char* expected) {
  throw ConfigError(key, fmt::format("{}: expected {}", key, expected));
}

void from_value(const json& j, double& v, const std::string& key) {
  if (!j.is_number()) wrong_type(key, "a number");
  v = j.get<double>();
}

void from_value(const json& j, bool& v, const std::string& key) {
  if (!j.is_boolean()) wrong_type(key, "true or false");
  v = j.get<bool>();
}

void from_value(const json& j, std::string& v, const std::string& key) {
  if (!j.is_string()) wrong_type(key, "a string");
  v = j.get<std::string>();
}

template <class T>
  requires std::is_unsigned_v<T> && (!std::is_same_v<T, bool>)
void from_value(const json& j, T& v, const std::string& key) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
    wrong_type(key, "a non-negative integer");
  }
  const auto u = j.get<std::uint64_t>();
  if (u > std::numeric_limits<T>::max()) throw ConfigError(key, fmt::format("{}: value too large", key));
  v = static_cast<T>(u);
}

template <class E>
  requires std::is_enum_v<E>
void from_value(const json& j, E& v, const std::string& key) {
  std::string s;
  from_value(j, s, key);
  std::string options;
  for (const auto& [e, n] : names<E>()) {
    if (s == n) {
      v = e;
      return;
    }
    options += options.empty() ? n : std::string(", ") + n;
  }
  throw ConfigError(key, fmt::format("{}: '{}' is not one of {}", key, s, options));
}

template <std::size_t N>
void from_value(const json& j, std::array<double, N>& v, const std::string& key) {
  if (!j.is_array() || j.size() != N) wrong_type(key, fmt::format("an array of {} numbers", N).c_str());
  for (std::size_t i = 0; i < N; ++i) from_value(j[i], v[i], fmt::format("{}[{}]", key, i));
}

void from_value(const json& j, Vec3& v, const std::string& key) {
  std::array<double, 3> a{};
  from_value(j, a, key);
  v = {a[0], a[1], a[2]};
}

void from_value(const json& j, Mat3& v, const std::string& key) { from_value(j, v.m, key); }

void from_value(const json& j, std::pair<double, double>& v, const std::string& key) {
  std::array<double, 2> a{};
  from_value(j, a, key);
  v = {a[0], a[1]};
}

template <class T>
json to_value(const T& v) {
  if constexpr (std::is_enum_v<T>) {
    for (const auto& [e, n] : names<T>()) {
      if (e == v) return n;
    }
    throw std::logic_error("config: unnamed enum value");
  } else if constexpr (std::is_same_v<T, Vec3>) {
    return json::array({v.x, v.y, v.z});
  } else if constexpr (std::is_same_v<T, Mat3>) {
    return v.m;
  } else {
    return v;
  }
}

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_, fmt::format("{}: expected an object", path_.empty() ? "config" : path_));
  }
  static constexpr bool reading = true;

  template <class T>
  void field(const char* key, T& v) {
    used_.insert(key);
    const auto it = j_->find(key);
    if (it != j_->end()) from_value(*it, v, join(path_, key));
  }
  bool has(const char* key) const { return j_->contains(key); }
  Reader section(const char* key) {
    used_.insert(key);
    static const json empty = json::object();
    const auto it = j_->find(key);
    return Reader(it == j_->end() ? empty : *it, join(path_, key));
  }
  void finish() const {
    for (const auto& item : j_->items()) {
      if (!used_.count(item.key())) {
        const auto key = join(path_, item.key());
        throw ConfigError(key, fmt::format("unknown key '{}'", key));
      }
    }
  }

 private:
  const json* j_;
  std::string path_;
  std::set<std::string> used_;
};

class Writer {
 public:
  explicit Writer(json& j) : j_(&j) {}
  static constexpr bool reading = false;

  template <class T>
  void field(const char* key, T& v) {
    (*j_)[key] = to_value(v);
  }
  bool has(const char*) const { return true; }
  Writer section(const char* key) {
    (*j_)[key] = json::object();
    return Writer((*j_)[key]);
  }
  void finish() const {}

 private:
  json* j_;
};

template <class IO>
void visit(IO& io, RunConfig& c) {
  io.field("seed", c.seed);
  {
    auto s = io.section("sim");
    s.field("duration", c.sim.duration);
    s.field("sim_dt", c.sim.sim_dt);
    s.field("control_dt", c.sim.control_dt);
    s.field("initial_wheel_speed_rpm", c.sim.initial_wheel_speed_rpm);
    s.field("disturbance", c.sim.disturbance);
    s.field("orbital_rate", c.sim.orbital_rate);
    s.field("inertia_scale", c.sim.inertia_scale);
    {
      auto g = s.section("gains");
      g.field("k", c.sim.gains.k);
      g.field("p", c.sim.gains.p);
      g.finish();
    }
    {
      const auto& p = c.sim.params;
      Mat3 ib = p.inertia_body(), iw = p.inertia_wheels();
      double mass = p.mass(), torque = p.max_wheel_torque();
      double rpm = p.max_wheel_speed() / dynamics::kRpmToRadPerSec;
      // Rebuilt only when asked for, so the defaults stay bit-identical to the reference spacecraft.
      const bool rebuild = s.has("spacecraft") || p.control_dt() != c.sim.control_dt;
      auto sc = s.section("spacecraft");
      sc.field("inertia_body", ib);
      sc.field("inertia_wheels", iw);
      sc.field("mass", mass);
      sc.field("max_wheel_torque", torque);
      sc.field("max_wheel_speed_rpm", rpm);
      sc.finish();
      if (IO::reading && rebuild) {
        try {
          c.sim.params = dynamics::SpacecraftParams(ib, iw, mass, torque, rpm * dynamics::kRpmToRadPerSec, c.sim.control_dt);
        } catch (const std::invalid_argument& e) {
          throw ConfigError("sim.spacecraft", fmt::format("sim.spacecraft: {}", e.what()));
        }
      }
    }
    s.finish();
  }
  {
    auto s = io.section("dataset");
    s.field("train_runs", c.dataset.train_runs);
    s.field("test_runs", c.dataset.test_runs);
    s.field("test_inertia_scale", c.dataset.test_inertia_scale);
    s.field("test_seed_offset", c.dataset.test_seed_offset);
    s.field("steps", c.dataset.steps);
    s.finish();
  }
  {
    auto s = io.section("model");
    s.field("n_coupling_layers", c.model.n_coupling_layers);
    s.field("hidden_layers", c.model.hidden_layers);
    s.field("hidden_units", c.model.hidden_units);
    s.field("steps", c.model.steps);
    s.field("head", c.model.head);
    s.field("token_dim", c.model.token_dim);
    s.field("scale_clamp", c.model.scale_clamp);
    s.finish();
  }
  {
    auto s = io.section("train");
    s.field("batch_size", c.train.batch_size);
    s.field("max_epochs", c.train.max_epochs);
    s.field("patience", c.train.patience);
    s.field("validation_fraction", c.train.validation_fraction);
    s.field("learning_rate", c.train.learning_rate);
    s.field("lr_schedule", c.train.lr_schedule);
    s.field("final_learning_rate", c.train.final_learning_rate);
    auto w = s.section("weights");
    w.field("mode", c.train.weights.mode);
    w.field("alpha", c.train.weights.alpha);
    w.field("beta", c.train.weights.beta);
    w.field("p", c.train.weights.p);
    w.field("eta", c.train.weights.eta);
    w.finish();
    s.finish();
  }
  {
    auto s = io.section("mpc");
    s.field("horizon", c.mpc.horizon);
    s.field("q", c.mpc.q);
    s.field("c", c.mpc.c);
    s.field("r", c.mpc.r);
    s.field("torque_bound", c.mpc.torque_bound);
    s.field("iterations", c.mpc.iterations);
    s.field("step_size", c.mpc.step_size);
    s.field("control_dt", c.mpc.control_dt);
    s.finish();
  }
  {
    auto s = io.section("scenario");
    s.field("axis", c.scenario.axis);
    s.field("angle_deg", c.scenario.angle_deg);
    s.field("duration", c.scenario.duration);
    s.field("initial_wheel_speed_rpm", c.scenario.initial_wheel_speed_rpm);
    s.field("disturbance", c.scenario.disturbance);
    s.field("settle_threshold", c.scenario.settle_threshold);
    s.finish();
  }
  {
    auto& e = c.evaluation;
    auto s = io.section("evaluation");
    s.field("selfloop_steps", e.regression.selfloop_steps);
    s.field("mre_mode", e.regression.mode);
    s.field("mre_basis", e.regression.basis);
    s.field("p_factor", e.regression.p_factor);
    s.field("batch_size", e.regression.batch_size);
    s.field("spe_delta", e.spe.delta);
    s.field("spe_delta_in_steps", e.spe.delta_in_steps);
    s.field("spe_settle_time", e.spe.settle_time);
    s.field("robustness_runs", e.robustness_runs);
    s.field("noise_level", e.noise.level);
    s.field("noise_additive", e.noise.additive);
    s.field("noise_additive_scale", e.noise.additive_scale);
    s.field("predictor", e.predictor);
    s.finish();
  }
  {
    auto s = io.section("paths");
    s.field("train_dataset", c.paths.train_dataset);
    s.field("test_dataset", c.paths.test_dataset);
    s.field("weights", c.paths.weights);
    s.field("experiment", c.paths.experiment);
    s.finish();
  }
  io.finish();
}

template <class F>
void check(const char* section, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section, fmt::format("{}: {}", section, e.what()));
  }
}

void require(bool ok, const char* key, const char* message) {
  if (!ok) throw ConfigError(key, fmt::format("{}: {}", key, message));
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  sim.seed = s;
  model.seed = s;
  train.seed = s;
}

void RunConfig::validate() const {
  check("sim", [&] { sim.validate(); });
  check("model", [&] { model.validate(); });
  check("train", [&] { train.validate(); });
  check("mpc", [&] { mpc.validate(); });
  require(dataset.train_runs >= 1, "dataset.train_runs", "must be >= 1");
  require(dataset.test_runs >= 1, "dataset.test_runs", "must be >= 1");
  require(dataset.test_inertia_scale > 0.0, "dataset.test_inertia_scale", "must be positive");
  require(dataset.steps >= 1, "dataset.steps", "must be >= 1");
  require(model.steps == dataset.steps, "model.steps", "must equal dataset.steps");
  require(std::abs(mpc.control_dt - sim.control_dt) < 1e-12, "mpc.control_dt", "must equal sim.control_dt");
  require(scenario.axis.norm() > 0.0, "scenario.axis", "must be nonzero");
  require(scenario.duration > 0.0, "scenario.duration", "must be positive");
  require(scenario.settle_threshold > 0.0, "scenario.settle_threshold", "must be positive");
  const auto& e = evaluation;
  require(e.regression.selfloop_steps >= 1 && e.regression.selfloop_steps <= dataset.steps,
          "evaluation.selfloop_steps", "must lie in [1, dataset.steps]");
  require(e.regression.batch_size >= 1, "evaluation.batch_size", "must be >= 1");
  require(e.spe.delta > 0.0, "evaluation.spe_delta", "must be positive");
  require(e.robustness_runs >= 1, "evaluation.robustness_runs", "must be >= 1");
  require(e.noise.level >= 0.0, "evaluation.noise_level", "must be non-negative");
}

eval::Scenario RunConfig::closed_loop_scenario() const {
  eval::Scenario sc;
  sc.plant = sim;
  sc.plant.disturbance = scenario.disturbance;
  sc.plant.duration = scenario.duration;
  sc.mpc = mpc;
  sc.initial.omega_rw = scenario.initial_wheel_speed_rpm * dynamics::kRpmToRadPerSec;
  sc.q_ref = Quat::from_axis_angle(scenario.axis, scenario.angle_deg * std::numbers::pi / 180.0);
  sc.duration = scenario.duration;
  return sc;
}

RunConfig parse(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", fmt::format("config is not valid JSON: {}", e.what()));
  }
  RunConfig c;
  Reader r(j, "");
  visit(r, c);
  c.apply_seed(c.seed);
  c.validate();
  return c;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", fmt::format("cannot read config file '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string dump(const RunConfig& c) {
  json j = json::object();
  RunConfig copy = c;
  Writer w(j);
  visit(w, copy);
  return j.dump(2) + "\n";
}

void write_resolved(const RunConfig& c, const std::filesystem::path& dir) {
  auto out = fmt::output_file((dir / "config.json").string());
  out.print("{}", dump(c));
}

}  // namespace satflow::config
