#include "satflow/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/os.h>
#include <json.hpp>

#include "satflow/config.hpp"
#include "satflow/evaluation.hpp"
#include "satflow/wilcoxon.hpp"

namespace satflow::cli {

namespace fs = std::filesystem;
using config::ConfigError;
using config::RunConfig;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
};

struct NamedModel {
  std::string name;
  std::string path;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration (defaults apply when omitted)");
  cmd->add_option("--out", c.out, "Output directory")->required();
  cmd->add_option("--seed", c.seed, "Override the run seed");
  cmd->add_option("--duration", c.duration, "Override the simulation and scenario duration, s");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? config::parse("{}") : config::load(c.config);
  if (c.seed) cfg.apply_seed(*c.seed);
  if (c.duration) {
    cfg.sim.duration = *c.duration;
    cfg.scenario.duration = *c.duration;
  }
  cfg.validate();
  return cfg;
}

fs::path prepare(const Common& c, const RunConfig& cfg) {
  const fs::path dir(c.out);
  fs::create_directories(dir);
  config::write_resolved(cfg, dir);
  return dir;
}

std::vector<NamedModel> parse_models(const std::vector<std::string>& specs, const RunConfig& cfg) {
  std::vector<NamedModel> out;
  for (const auto& s : specs) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
      throw CLI::ValidationError("--model", "expected NAME=PATH, got '" + s + "'");
    }
    out.push_back({s.substr(0, eq), s.substr(eq + 1)});
  }
  if (out.empty()) out.push_back({cfg.paths.experiment, cfg.paths.weights});
  return out;
}

class Log {
 public:
  explicit Log(std::ostream& os) : os_(&os) {}
  template <class... Args>
  void operator()(fmt::format_string<Args...> f, Args&&... args) {
    *os_ << fmt::format(f, std::forward<Args>(args)...) << '\n';
    os_->flush();
  }

 private:
  std::ostream* os_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_json(const json& j, const fs::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("{}\n", j.dump(2));
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

int cmd_simulate(const Common& c, Log& log) {
  const RunConfig cfg = resolve(c);
  const auto dir = prepare(c, cfg);
  const auto sc = cfg.closed_loop_scenario();
  log("simulate: {:.0f} s maneuver, seed {}", cfg.sim.duration, cfg.sim.seed);
  const auto traj = sim::run_maneuver(cfg.sim, sc.q_ref);
  sim::write_trajectory_csv(traj, dir / "trajectory.csv");
  log("simulate: wrote {} states", traj.size());
  return 0;
}

int cmd_gen_dataset(const Common& c, bool csv, Log& log) {
  const RunConfig cfg = resolve(c);
  const auto dir = prepare(c, cfg);
  const data::GenerateOptions opts{cfg.dataset.steps};
  log("gen-dataset: {} training runs", cfg.dataset.train_runs);
  const auto train = data::generate_dataset(cfg.sim, cfg.dataset.train_runs, opts);
  data::write_dataset(train, dir / "train.bin");
  sim::SimConfig test_sim = cfg.sim;
  test_sim.seed = cfg.sim.seed + cfg.dataset.test_seed_offset;
  test_sim.inertia_scale = cfg.sim.inertia_scale * cfg.dataset.test_inertia_scale;
  log("gen-dataset: {} test runs at inertia x{}", cfg.dataset.test_runs, test_sim.inertia_scale);
  const auto test = data::generate_dataset(test_sim, cfg.dataset.test_runs, opts);
  data::write_dataset(test, dir / "test.bin");
  if (csv) {
    data::write_dataset_csv(train, dir / "train.csv");
    data::write_dataset_csv(test, dir / "test.csv");
  }
  log("gen-dataset: {} training and {} test samples", train.samples.size(), test.samples.size());
  return 0;
}

int cmd_train(const Common& c, const std::string& data_path, Log& log) {
  const RunConfig cfg = resolve(c);
  const auto dir = prepare(c, cfg);
  const auto ds = data::read_dataset(data_path.empty() ? cfg.paths.train_dataset : data_path);
  flow::FlowModel init(cfg.model, ds.normalization, data::conditioning(ds.params));
  log("train: {} samples, {} parameters, head {}", ds.samples.size(), init.parameter_count(),
      flow::head_name(cfg.model.head));
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train::fit(init, ds, cfg.train, [&](const train::EpochRecord& e) {
    log("epoch {:4d}  train {:.6g}  val {:.6g}  l_dd {:.4g}  l_pi {:.4g}  beta {:.4f}  lr {:.3g}  {:.1f} s", e.epoch,
        e.train_total, e.val_total, e.val_ldd, e.val_lpi, e.beta, e.learning_rate, e.seconds);
  });
  flow::save_weights(result.model, dir / "model.bin");
  train::write_report_csv(result.report, dir / "train_report.csv");
  log("train: best epoch {} of {}, {:.1f} s", result.report.best_epoch, result.report.epochs.size(), seconds_since(t0));
  return 0;
}

int cmd_eval_model(const Common& c, const std::string& data_path, const std::vector<std::string>& specs, Log& log) {
  const RunConfig cfg = resolve(c);
  const auto models = parse_models(specs, cfg);
  const auto dir = prepare(c, cfg);
  const auto test = data::read_dataset(data_path.empty() ? cfg.paths.test_dataset : data_path);
  std::vector<eval::RegressionRow> rows;
  for (const auto& m : models) {
    auto model = flow::load_weights(m.path);
    eval::FlowStepModel step(model);
    const auto t0 = std::chrono::steady_clock::now();
    rows.push_back({m.name, eval::evaluate_regression(step, test, cfg.evaluation.regression)});
    const auto& r = rows.back().metrics;
    log("eval-model: {}  mre {:.4g}%  physics {:.4g}  self-loop mre {:.4g}%  physics {:.4g}  ({:.1f} s)", m.name,
        r.mre_single, r.physics_single, r.mre_selfloop, r.physics_selfloop, seconds_since(t0));
  }
  eval::write_regression_table(rows, dir / "table2.csv");

  auto out = fmt::output_file((dir / "selfloop_errors.csv").string());
  out.print("window");
  for (const auto& r : rows) out.print(",{}", r.experiment);
  out.print("\n");
  for (std::size_t i = 0; i < test.samples.size(); ++i) {
    out.print("{}", i);
    for (const auto& r : rows) out.print(",{:.17g}", r.metrics.selfloop_errors[i]);
    out.print("\n");
  }
  out.close();

  if (rows.size() >= 2) {
    auto w = fmt::output_file((dir / "wilcoxon.csv").string());
    w.print("model_a,model_b,metric,p,w_plus,w_minus,n,exact\n");
    for (std::size_t k = 1; k < rows.size(); ++k) {
      const auto& a = rows[0].metrics;
      const auto& b = rows[k].metrics;
      for (const auto& [metric, x, y] : {std::tuple{"mre_single", &a.single_errors, &b.single_errors},
                                         std::tuple{"mre_selfloop", &a.selfloop_errors, &b.selfloop_errors}}) {
        const auto t = eval::wilcoxon_signed_rank(*x, *y);
        w.print("{},{},{},{:.17g},{:.17g},{:.17g},{},{}\n", rows[0].experiment, rows[k].experiment, metric, t.p,
                t.w_plus, t.w_minus, t.n, t.exact ? 1 : 0);
      }
    }
  }
  return 0;
}

struct Controller {
  std::unique_ptr<flow::FlowModel> model;
  std::unique_ptr<mpc::PredictionModel> predictor;
};

Controller make_controller(const RunConfig& cfg, const eval::Scenario& sc, const NamedModel& m) {
  Controller ctl;
  const auto p = sc.plant.effective_params();
  switch (cfg.evaluation.predictor) {
    case config::Predictor::flow:
      ctl.model = std::make_unique<flow::FlowModel>(flow::load_weights(m.path));
      ctl.predictor = std::make_unique<mpc::FlowPredictor>(*ctl.model, p);
      break;
    case config::Predictor::dynamics:
      ctl.predictor = std::make_unique<mpc::DynamicsPredictor>(p, sc.mpc.control_dt);
      break;
    case config::Predictor::zero:
      ctl.predictor = std::make_unique<mpc::ZeroPredictor>();
      break;
  }
  return ctl;
}

int cmd_mpc_run(const Common& c, const std::vector<std::string>& specs, Log& log) {
  const RunConfig cfg = resolve(c);
  const auto models = parse_models(specs, cfg);
  if (models.size() != 1) throw CLI::ValidationError("--model", "mpc-run takes one model");
  const auto dir = prepare(c, cfg);
  const auto sc = cfg.closed_loop_scenario();
  auto ctl = make_controller(cfg, sc, models[0]);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = mpc::closed_loop(*ctl.predictor, sc.plant, sc.mpc, sc.initial, sc.q_ref, sc.duration);
  const double wall = seconds_since(t0);
  mpc::write_closed_loop_csv(r, dir / "trajectory.csv");
  const auto a = eval::ape(r, sc.q_ref);
  eval::write_ape_csv(a, dir / "ape.csv");

  json summary;
  summary["experiment"] = models[0].name;
  summary["settling_time"] = finite_or_null(eval::settling_time(a, cfg.scenario.settle_threshold));
  double max_u = 0.0;
  for (const auto& u : r.torques) max_u = std::max({max_u, std::abs(u.x), std::abs(u.y), std::abs(u.z)});
  summary["max_abs_torque"] = max_u;
  summary["final_q_err_norm"] = a.q_norm.back();
  if (a.times.back() > cfg.evaluation.spe.settle_time + cfg.evaluation.spe.delta) {
    const auto s = eval::spe(a, cfg.evaluation.spe);
    eval::write_spe_csv(s, dir / "spe.csv");
    summary["mean_abs_spe"] = s.mean_abs;
  } else {
    summary["mean_abs_spe"] = nullptr;
  }
  write_json(summary, dir / "summary.json");
  log("mpc-run: {} steps in {:.1f} s, settling {}", r.torques.size(), wall, summary["settling_time"].dump());
  return 0;
}

int cmd_robustness(const Common& c, const std::vector<std::string>& specs, Log& log) {
  const RunConfig cfg = resolve(c);
  const auto models = parse_models(specs, cfg);
  const auto dir = prepare(c, cfg);
  const auto sc = cfg.closed_loop_scenario();
  std::vector<std::pair<std::string, std::vector<eval::VariableStats>>> rows;
  for (const auto& m : models) {
    auto ctl = make_controller(cfg, sc, m);
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = eval::robustness_experiment(*ctl.predictor, sc, cfg.evaluation.robustness_runs,
                                                 cfg.evaluation.noise, cfg.seed);
    eval::write_envelope_csv(res.runs, sc.q_ref, dir / ("envelope_" + m.name + ".csv"));
    rows.emplace_back(m.name, res.stats);
    log("robustness: {} x{} runs in {:.1f} s, attitude spread {:.4g}", m.name, res.runs.size(), seconds_since(t0),
        res.stats[0].spread);
  }
  eval::write_robustness_table(rows, dir / "table3.csv");
  return 0;
}

std::vector<std::string> data_lines(const fs::path& csv) {
  std::ifstream in(csv);
  std::vector<std::string> lines;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

int cmd_report(const Common& c, const std::vector<std::string>& inputs, Log& log) {
  const RunConfig cfg = resolve(c);
  const auto dir = prepare(c, cfg);
  std::map<std::string, std::vector<std::string>> manifest;
  const std::array<std::pair<const char*, const char*>, 2> tables{
      {{"table2.csv", "experiment,mre,physics,mre_selfloop,physics_selfloop"},
       {"table3.csv", "experiment_variable,mae,final_error,spread"}}};
  std::map<std::string, std::vector<std::string>> merged;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (!fs::is_directory(p)) throw std::runtime_error(fmt::format("report: '{}' is not a directory", in));
    auto& files = manifest[p.filename().empty() ? p.parent_path().filename().string() : p.filename().string()];
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_regular_file()) files.push_back(e.path().filename().string());
    }
    std::sort(files.begin(), files.end());
    for (const auto& [name, header] : tables) {
      if (fs::exists(p / name)) {
        auto lines = data_lines(p / name);
        merged[name].insert(merged[name].end(), lines.begin(), lines.end());
      }
    }
  }
  auto& own = manifest["report"];
  own.push_back("config.json");
  for (const auto& [name, header] : tables) {
    auto out = fmt::output_file((dir / name).string());
    out.print("{}\n", header);
    for (const auto& l : merged[name]) out.print("{}\n", l);
    own.push_back(name);
  }
  own.push_back("manifest.json");
  std::sort(own.begin(), own.end());
  eval::write_manifest(manifest, dir / "manifest.json");
  log("report: {} inputs, {} table-2 rows, {} table-3 rows", inputs.size(), merged["table2.csv"].size(),
      merged["table3.csv"].size());
  return 0;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& key, const std::string& message) {
  json j;
  j["error"] = kind;
  j["key"] = key;
  j["message"] = message;
  err << j.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& log_stream, std::ostream& err) {
  CLI::App app{"Physics-informed flow models of spacecraft attitude dynamics and MPC", "satflow"};
  app.require_subcommand(1);
  Common common;
  bool csv = false;
  std::string data_path;
  std::vector<std::string> models, inputs;

  auto* simulate = app.add_subcommand("simulate", "Simulate one MRP-controlled maneuver to trajectory.csv");
  auto* gen = app.add_subcommand("gen-dataset", "Generate train.bin and test.bin");
  auto* train = app.add_subcommand("train", "Fit a flow model; writes model.bin and train_report.csv");
  auto* evalm = app.add_subcommand("eval-model", "Single-step and self-loop regression metrics (table2.csv)");
  auto* mpcr = app.add_subcommand("mpc-run", "Closed-loop MPC maneuver (trajectory.csv, ape.csv, spe.csv)");
  auto* rob = app.add_subcommand("robustness", "Monte Carlo runs under observation noise (table3.csv)");
  auto* rep = app.add_subcommand("report", "Merge tables from result directories and write manifest.json");
  for (auto* cmd : {simulate, gen, train, evalm, mpcr, rob, rep}) add_common(cmd, common);
  gen->add_flag("--csv", csv, "Also write the samples as CSV");
  train->add_option("--data", data_path, "Training dataset (default: paths.train_dataset)");
  evalm->add_option("--data", data_path, "Test dataset (default: paths.test_dataset)");
  for (auto* cmd : {evalm, mpcr, rob}) {
    cmd->add_option("--model", models, "NAME=PATH of a weights file; repeatable (default: paths.*)");
  }
  rep->add_option("--in", inputs, "Result directory; repeatable")->required();

  Log log(log_stream);
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (simulate->parsed()) return cmd_simulate(common, log);
    if (gen->parsed()) return cmd_gen_dataset(common, csv, log);
    if (train->parsed()) return cmd_train(common, data_path, log);
    if (evalm->parsed()) return cmd_eval_model(common, data_path, models, log);
    if (mpcr->parsed()) return cmd_mpc_run(common, models, log);
    if (rob->parsed()) return cmd_robustness(common, models, log);
    if (rep->parsed()) return cmd_report(common, inputs, log);
    return 0;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, log_stream, err);
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", "", e.what());
    return 2;
  } catch (const ConfigError& e) {
    report_error(err, "config", e.key(), e.what());
    return 2;
  } catch (const data::FormatError& e) {
    report_error(err, "format", "", e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error(err, "runtime", "", e.what());
    return 1;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cerr, std::cerr);
}

}  // namespace satflow::cli
