// Copyright 2026 The freqguard Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// freqguard: grid -> lyap -> dataset -> estimator -> train -> eval.
//
// Exit codes: 0 success, 1 usage/config error, 2 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "freqguard/pipeline.hpp"

namespace fs = std::filesystem;
using namespace freqguard;
using io::json;

namespace {

class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Cli {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::string grid;
  std::string controller;
  int scenarios = -1;
  std::string preset;
  bool error_json = false;
  bool boxed = false;
  std::string variant = "proposed";
  bool true_modes = false;
  bool no_trajectories = false;
};

RunConfig resolve(const Cli& cli) {
  RunConfig cfg = cli.config_path.empty() ? RunConfig{} : RunConfig::from_json(io::load_json(cli.config_path));
  if (cli.seed_set) cfg.seed = cli.seed;
  if (!cli.out.empty()) cfg.out_dir = cli.out;
  if (!cli.grid.empty()) cfg.grid = cli.grid;
  if (!cli.controller.empty()) cfg.controller = cli.controller;
  if (cli.scenarios >= 0) cfg.scenarios = cli.scenarios;
  if (!cli.preset.empty()) {
    const TrainConfig p = RunConfig::preset(cli.preset);
    cfg.train.n_epochs = p.n_epochs;
    cfg.train.n_batches = p.n_batches;
    cfg.train.adaptive = p.adaptive;
  }
  if (cli.true_modes) cfg.estimated_modes = false;
  if (cli.no_trajectories) cfg.write_trajectories = false;
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  return cfg;
}

ModeSet load_modes(const RunConfig& cfg) {
  if (!fs::exists(cfg.modes_file())) throw MissingArtifact("mode set " + cfg.modes_file(), "grid");
  return io::modeset_from_json(io::load_json(cfg.modes_file()));
}

LyapunovCertificate load_certificate(const RunConfig& cfg, const ModeSet& modes) {
  if (!fs::exists(cfg.certificate_file())) {
    throw MissingArtifact("certificate " + cfg.certificate_file(), "lyap");
  }
  return io::certificate_from_json(io::load_json(cfg.certificate_file()), modes);
}

ExpertDataset load_dataset(const RunConfig& cfg, bool boxed) {
  const std::string csv = cfg.dataset_file(boxed);
  if (!fs::exists(csv) || !fs::exists(csv + ".json")) {
    throw MissingArtifact(std::string(boxed ? "boxed " : "") + "dataset " + csv,
                          boxed ? "dataset --boxed" : "dataset");
  }
  return io::load_dataset(csv, csv + ".json");
}

json provenance(const RunConfig& cfg, const std::string& command) {
  return {{"command", command}, {"seed", cfg.seed}, {"config_hash", io::hash_hex(cfg.summary().dump())}};
}

int cmd_grid(const RunConfig& cfg) {
  const GridSpec spec = io::load_grid_spec(cfg.grid);
  const ModeSet modes = build_modes(spec, cfg.dt);
  json doc = io::modeset_to_json(modes, spec);
  doc["meta"] = provenance(cfg, "grid");
  io::save_json(cfg.modes_file(), doc);
  std::printf("grid: %d buses, %d modes, dt = %g -> %s\n", modes.bus_count(), modes.size(), modes.dt(),
              cfg.modes_file().c_str());
  return 0;
}

int cmd_lyap(const RunConfig& cfg) {
  const ModeSet modes = load_modes(cfg);
  LyapunovSolverOptions opt = cfg.lyap;
  opt.seed = stage_seed(cfg.seed, Stage::kLyap);
  LyapunovSolution sol;
  try {
    sol = solve_common_lyapunov(modes, opt);
  } catch (const LyapunovSolverError& e) {
    throw NumericalFailure(e.what());
  }
  const LyapunovCertificate cert = extract_certificate(sol.x, sol.y, modes);
  json meta = provenance(cfg, "lyap");
  meta["iterations"] = sol.iterations;
  meta["worst_lmi_margin"] = sol.worst_margin;
  meta["seconds"] = sol.seconds;
  meta["margin_target"] = opt.margin_target;
  meta["x_floor"] = opt.x_floor;
  io::save_json(cfg.certificate_file(), io::certificate_to_json(cert, meta));
  for (int q = 0; q < modes.size(); ++q) {
    std::printf("mode %d (h = %g s): margin %.6e  discrete %.6e\n", q + 1, modes[q].inertia_s,
                cert.margins[q], cert.discrete_margins[q]);
  }
  std::printf("certificate %s, %d iterations, %.2f s -> %s\n", cert.valid ? "VALID" : "INVALID",
              sol.iterations, sol.seconds, cfg.certificate_file().c_str());
  if (!cert.valid) throw NumericalFailure("lyap: extracted certificate is not valid");
  return 0;
}

int cmd_dataset(const RunConfig& cfg, bool boxed) {
  const ModeSet modes = load_modes(cfg);
  const CostSpec cost = cfg.cost(modes.bus_count());
  DatasetOptions opt;
  opt.n_traj = cfg.n_traj;
  opt.scenario = cfg.scenario;
  if (boxed) opt.u_bound = cfg.u_bound;
  const std::uint64_t seed = stage_seed(cfg.seed, boxed ? Stage::kDatasetBoxed : Stage::kDataset);
  const ExpertDataset ds = build_dataset(modes, cost, opt, seed);
  const std::string csv = cfg.dataset_file(boxed);
  io::save_dataset(csv, csv + ".json", ds, cost, provenance(cfg, boxed ? "dataset --boxed" : "dataset"));
  std::printf("dataset: %d trajectories, %d pairs -> %s\n", ds.trajectories(), ds.size(), csv.c_str());
  return 0;
}

int cmd_estimator(const RunConfig& cfg) {
  const ModeSet modes = load_modes(cfg);
  const ExpertDataset ds = load_dataset(cfg, false);
  EstimatorReport rep;
  const EstimatorParams est = train_estimator(ds, modes, cfg.estimator, stage_seed(cfg.seed, Stage::kEstimator), &rep);
  json meta = provenance(cfg, "estimator");
  meta["train_accuracy"] = rep.train_accuracy;
  meta["heldout_accuracy"] = rep.heldout_accuracy;
  meta["train_samples"] = rep.train_samples;
  meta["heldout_samples"] = rep.heldout_samples;
  meta["epoch_loss"] = rep.epoch_loss;
  io::save_json(cfg.estimator_file(), io::estimator_to_json(est, meta));
  std::printf("estimator: train accuracy %.4f, held-out accuracy %.4f -> %s\n", rep.train_accuracy,
              rep.heldout_accuracy, cfg.estimator_file().c_str());
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& variant) {
  if (variant != "proposed" && variant != "linear-opt" && variant != "proposed-boxed") {
    throw std::invalid_argument("train: --variant must be proposed|linear-opt|proposed-boxed");
  }
  const ModeSet modes = load_modes(cfg);
  const LyapunovCertificate cert = load_certificate(cfg, modes);
  if (!cert.valid) throw NumericalFailure("train: warm-start certificate is not valid");
  const bool boxed = variant == "proposed-boxed";
  const ExpertDataset ds = load_dataset(cfg, boxed);
  TrainConfig tc = cfg.train;
  tc.seed = stage_seed(cfg.seed, Stage::kTrain);
  tc.train_mlp = variant != "linear-opt";
  const std::string out = cfg.policy_file(variant);
  json meta = provenance(cfg, "train --variant " + variant);
  auto checkpoint = [&](int epoch, const PolicyParams& p) {
    io::save_json(out + ".epoch" + std::to_string(epoch) + ".json", io::policy_to_json(p, meta));
  };
  TrainReport rep;
  PolicyParams params = train(ds, modes, cert, tc, &rep, checkpoint, nullptr, cfg.epsilon);
  if (boxed) params.u_bound = cfg.u_bound;
  meta["status"] = rep.rejected ? "REJECTED" : "ACCEPTED";
  io::save_json(out, io::policy_to_json(params, meta));
  json report = io::train_report_to_json(rep);
  report["meta"] = meta;
  io::save_json(out + ".report.json", report);
  const double worst = *std::max_element(rep.margins.begin(), rep.margins.end());
  std::printf("train (%s): %d epochs, %.1f s, %s, worst margin %.6e -> %s\n", variant.c_str(), rep.epochs_run,
              rep.seconds, rep.rejected ? "REJECTED (warm-start certificate kept)" : "certificate VALID", worst,
              out.c_str());
  return 0;
}

int cmd_eval(const RunConfig& cfg) {
  const ModeSet modes = load_modes(cfg);
  ControllerArtifacts art;
  art.modes = &modes;
  art.cost = cfg.cost(modes.bus_count());
  art.u_bound = cfg.u_bound;
  art.estimated_modes = cfg.estimated_modes;
  const std::string& c = cfg.controller;
  if (c == "linear") art.certificate = load_certificate(cfg, modes);
  if (c == "linear-opt" || c == "proposed" || c == "proposed-boxed") {
    const std::string pf = cfg.policy_file(c);
    if (!fs::exists(pf)) {
      throw MissingArtifact("policy " + pf, "train --variant " + c);
    }
    PolicyParams p = io::policy_from_json(io::load_json(pf));
    if (c == "proposed-boxed" && !p.u_bound) p.u_bound = cfg.u_bound;
    art.policy = std::make_shared<const Policy>(std::move(p), modes);
    if (cfg.estimated_modes) {
      if (!fs::exists(cfg.estimator_file())) throw MissingArtifact("estimator " + cfg.estimator_file(), "estimator");
      art.estimator = std::make_shared<const EstimatorParams>(io::estimator_from_json(io::load_json(cfg.estimator_file())));
    }
  }
  const std::uint64_t eval_seed = stage_seed(cfg.seed, Stage::kEval);
  EvalResult res;
  try {
    res = evaluate(c, art, eval_seed, cfg.scenarios, cfg.scenario, cfg.settle_threshold_hz, 50.0, thread_count());
  } catch (const SimulationDiverged& e) {
    throw NumericalFailure(e.what());
  }
  const json doc = metrics_document(c, res, cfg, eval_seed);
  const std::string metrics_path = (fs::path(cfg.out_dir) / ("metrics_" + c + ".json")).string();
  io::save_json(metrics_path, doc);
  if (cfg.write_trajectories) {
    const fs::path dir = fs::path(cfg.out_dir) / ("trajectories_" + c);
    fs::create_directories(dir);
    const std::string hash = io::hash_hex(cfg.summary().dump());
    for (std::size_t i = 0; i < res.trajectories.size(); ++i) {
      io::save_trajectory_csv((dir / ("scenario_" + std::to_string(i + 1) + ".csv")).string(), res.trajectories[i],
                              50.0, hash);
    }
  }
  const Metrics& m = res.metrics;
  std::printf("%-15s settling %.1f ± %.1f ms  overshoot %.4f ± %.4f Hz  cost %.2f ± %.2f  unsettled %d/%zu -> %s\n",
              c.c_str(), m.settling_ms.mean, m.settling_ms.std, m.overshoot_hz.mean, m.overshoot_hz.std,
              m.avg_cost.mean, m.avg_cost.std, m.unsettled, m.per_trajectory.size(), metrics_path.c_str());
  return 0;
}

int cmd_pipeline(RunConfig cfg, bool boxed) {
  cmd_grid(cfg);
  cmd_lyap(cfg);
  cmd_dataset(cfg, false);
  cmd_estimator(cfg);
  cmd_train(cfg, "proposed");
  cmd_train(cfg, "linear-opt");
  std::vector<std::string> controllers{"lqr", "linear", "linear-opt", "proposed"};
  if (boxed) {
    cmd_dataset(cfg, true);
    cmd_train(cfg, "proposed-boxed");
    controllers.push_back("lqr-boxed");
    controllers.push_back("proposed-boxed");
  }
  json table = json::object();
  for (const std::string& c : controllers) {
    cfg.controller = c;
    cmd_eval(cfg);
    const json doc = io::load_json((fs::path(cfg.out_dir) / ("metrics_" + c + ".json")).string());
    table[c] = doc["controllers"][c];
  }
  io::save_json((fs::path(cfg.out_dir) / "metrics_table.json").string(),
                {{"format_version", io::kFormatVersion}, {"schema", "freqguard.metrics.v1"}, {"seed", cfg.seed},
                 {"controllers", table}});
  return 0;
}

int report_error(const Cli& cli, int code, const std::string& kind, const std::string& msg) {
  std::fprintf(stderr, "freqguard: error: %s\n", msg.c_str());
  if (cli.error_json) {
    std::cout << json{{"error", {{"code", code}, {"kind", kind}, {"message", msg}}}}.dump() << std::endl;
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"freqguard: stability-constrained learned frequency control for switched-inertia grids"};
  app.require_subcommand(1);
  Cli cli;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", cli.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { cli.seed = s; cli.seed_set = true; }, "base seed");
    sub->add_option("--out", cli.out, "output directory");
    sub->add_option("--grid", cli.grid, "grid spec JSON");
    sub->add_flag("--error-json", cli.error_json, "print a JSON error object on failure");
  };
  CLI::App* grid = app.add_subcommand("grid", "build and persist the mode set");
  CLI::App* lyap = app.add_subcommand("lyap", "synthesize the common Lyapunov certificate");
  CLI::App* dataset = app.add_subcommand("dataset", "generate expert LQR trajectories");
  CLI::App* trainc = app.add_subcommand("train", "train a policy");
  CLI::App* estimator = app.add_subcommand("estimator", "train the mode estimator");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a controller over the scenario batch");
  CLI::App* pipeline = app.add_subcommand("pipeline", "run every stage with one seed");
  for (CLI::App* s : {grid, lyap, dataset, trainc, estimator, eval, pipeline}) common(s);
  dataset->add_flag("--boxed", cli.boxed, "box-constrained expert (|u| <= u_bound)");
  trainc->add_option("--variant", cli.variant, "proposed | linear-opt | proposed-boxed")
      ->check(CLI::IsMember({"proposed", "linear-opt", "proposed-boxed"}));
  for (CLI::App* s : {trainc, pipeline}) {
    s->add_option("--preset", cli.preset, "desk | full")->check(CLI::IsMember({"desk", "full"}));
  }
  for (CLI::App* s : {eval, pipeline}) {
    s->add_option("--scenarios", cli.scenarios, "number of evaluation scenarios");
    s->add_flag("--true-modes", cli.true_modes, "project with the true mode instead of the estimate");
    s->add_flag("--no-trajectories", cli.no_trajectories, "skip per-scenario CSVs");
  }
  eval->add_option("--controller", cli.controller, "lqr | lqr-boxed | linear | linear-opt | proposed | proposed-boxed")
      ->check(CLI::IsMember(controller_names()));
  pipeline->add_flag("--boxed", cli.boxed, "also run the box-constrained controllers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return 0;
    return report_error(cli, 1, "usage", e.what());
  }

  try {
    const RunConfig cfg = resolve(cli);
    if (*grid) return cmd_grid(cfg);
    if (*lyap) return cmd_lyap(cfg);
    if (*dataset) return cmd_dataset(cfg, cli.boxed);
    if (*trainc) return cmd_train(cfg, cli.variant);
    if (*estimator) return cmd_estimator(cfg);
    if (*eval) return cmd_eval(cfg);
    if (*pipeline) return cmd_pipeline(cfg, cli.boxed);
  } catch (const MissingArtifact& e) {
    return report_error(cli, 1, "missing_artifact", e.what());
  } catch (const NumericalFailure& e) {
    return report_error(cli, 2, "numerical", e.what());
  } catch (const NumericError& e) {
    return report_error(cli, 2, "numerical", e.what());
  } catch (const LqrError& e) {
    return report_error(cli, 2, "numerical", e.what());
  } catch (const SimulationDiverged& e) {
    return report_error(cli, 2, "numerical", e.what());
  } catch (const std::exception& e) {
    return report_error(cli, 1, "config", e.what());
  }
  return 1;
}
