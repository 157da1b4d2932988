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

#pragma once

// Run configuration, stage seeds and batch evaluation of the controllers.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "freqguard/io.hpp"

#ifndef FREQGUARD_DATA_DIR
#define FREQGUARD_DATA_DIR "data"
#endif

namespace freqguard {

/// Raised when an upstream artifact is absent; names the producing stage.
class MissingArtifact : public std::runtime_error {
 public:
  MissingArtifact(const std::string& what, const std::string& stage)
      : std::runtime_error("missing " + what + "; run `freqguard " + stage + "` first"),
        stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

enum class Stage : std::uint64_t { kLyap = 1, kDataset, kDatasetBoxed, kTrain, kEstimator, kEval };

/// Every command derives its randomness from (seed, stage).
inline std::uint64_t stage_seed(std::uint64_t seed, Stage s) {
  return stream_seed(seed, static_cast<std::uint64_t>(s));
}

inline const std::vector<std::string>& controller_names() {
  static const std::vector<std::string> names{"lqr",      "lqr-boxed", "linear",
                                              "linear-opt", "proposed", "proposed-boxed"};
  return names;
}

struct RunConfig {
  std::string grid = std::string(FREQGUARD_DATA_DIR) + "/kundur12.json";
  std::string out_dir = "freqguard_out";
  std::uint64_t seed = 7;
  double dt = 1e-3;

  int scenarios = 100;
  ScenarioOptions scenario;
  double settle_threshold_hz = 0.01;

  double omega_weight = 5e4;
  double action_weight = 1.0;
  double u_bound = 0.5;
  double epsilon = kDefaultEpsilon;

  int n_traj = 100;
  LyapunovSolverOptions lyap;
  TrainConfig train = TrainConfig::desk();
  EstimatorOptions estimator;
  std::string controller = "proposed";
  bool estimated_modes = true;
  bool write_trajectories = true;

  // Artifact paths; empty means <out_dir>/<default name>.
  std::string modes_path, certificate_path, dataset_path, dataset_boxed_path, policy_path,
      policy_linear_opt_path, policy_boxed_path, estimator_path;

  std::string path(const std::string& explicit_path, const std::string& name) const {
    return explicit_path.empty() ? (std::filesystem::path(out_dir) / name).string() : explicit_path;
  }
  std::string modes_file() const { return path(modes_path, "modes.json"); }
  std::string certificate_file() const { return path(certificate_path, "certificate.json"); }
  std::string dataset_file(bool boxed) const {
    return boxed ? path(dataset_boxed_path, "dataset_boxed.csv") : path(dataset_path, "dataset.csv");
  }
  std::string policy_file(const std::string& controller_name) const {
    if (controller_name == "linear-opt") return path(policy_linear_opt_path, "policy_linear_opt.json");
    if (controller_name == "proposed-boxed") return path(policy_boxed_path, "policy_boxed.json");
    return path(policy_path, "policy.json");
  }
  std::string estimator_file() const { return path(estimator_path, "estimator.json"); }

  CostSpec cost(int n_bus) const { return CostSpec::frequency_weighted(n_bus, omega_weight, action_weight); }

  void validate() const {
    if (scenarios < 1) throw std::invalid_argument("config: scenarios must be >= 1");
    if (std::find(controller_names().begin(), controller_names().end(), controller) ==
        controller_names().end()) {
      throw std::invalid_argument("config: unknown controller '" + controller + "'");
    }
    if (!(dt > 0.0)) throw std::invalid_argument("config: dt must be > 0");
    if (!(u_bound > 0.0)) throw std::invalid_argument("config: u_bound must be > 0");
    if (!(epsilon > 0.0)) throw std::invalid_argument("config: epsilon must be > 0");
    if (n_traj < 1) throw std::invalid_argument("config: dataset.n_traj must be >= 1");
    if (!(settle_threshold_hz > 0.0)) throw std::invalid_argument("config: settle threshold must be > 0");
    train.validate();
  }

  /// Fields present in `j` override the defaults.
  static RunConfig from_json(const io::json& j) {
    RunConfig c;
    try {
      c.grid = j.value("grid", c.grid);
      c.out_dir = j.value("out_dir", c.out_dir);
      c.seed = j.value("seed", c.seed);
      c.dt = j.value("dt", c.dt);
      c.controller = j.value("controller", c.controller);
      c.u_bound = j.value("u_bound", c.u_bound);
      c.epsilon = j.value("epsilon", c.epsilon);
      if (j.contains("mode_source")) {
        const std::string src = j["mode_source"].get<std::string>();
        if (src != "estimated" && src != "true") throw std::invalid_argument("config: mode_source must be estimated|true");
        c.estimated_modes = src == "estimated";
      }
      c.write_trajectories = j.value("write_trajectories", c.write_trajectories);
      if (j.contains("scenario")) {
        const io::json& s = j["scenario"];
        c.scenarios = s.value("count", c.scenarios);
        c.scenario.horizon_steps = s.value("horizon_steps", c.scenario.horizon_steps);
        c.scenario.switch_period_steps = s.value("switch_period_steps", c.scenario.switch_period_steps);
        if (s.contains("init_dev_hz")) {
          c.scenario.init_dev_hz_lo = s["init_dev_hz"].at(0).get<double>();
          c.scenario.init_dev_hz_hi = s["init_dev_hz"].at(1).get<double>();
        }
        c.settle_threshold_hz = s.value("settle_threshold_hz", c.settle_threshold_hz);
      }
      if (j.contains("cost")) {
        c.omega_weight = j["cost"].value("omega_weight", c.omega_weight);
        c.action_weight = j["cost"].value("action_weight", c.action_weight);
      }
      if (j.contains("dataset")) c.n_traj = j["dataset"].value("n_traj", c.n_traj);
      if (j.contains("lyap")) {
        const io::json& l = j["lyap"];
        c.lyap.margin_target = l.value("margin_target", c.lyap.margin_target);
        c.lyap.x_floor = l.value("x_floor", c.lyap.x_floor);
        c.lyap.learning_rate = l.value("learning_rate", c.lyap.learning_rate);
        c.lyap.lr_decay = l.value("lr_decay", c.lyap.lr_decay);
        c.lyap.smoothing = l.value("smoothing", c.lyap.smoothing);
        c.lyap.max_iterations = l.value("max_iterations", c.lyap.max_iterations);
        c.lyap.discrete_guard = l.value("discrete_guard", c.lyap.discrete_guard);
      }
      if (j.contains("train")) {
        const io::json& t = j["train"];
        if (t.contains("preset")) c.train = preset(t["preset"].get<std::string>());
        c.train.c1 = t.value("c1", c.train.c1);
        c.train.c2 = t.value("c2", c.train.c2);
        c.train.c3 = t.value("c3", c.train.c3);
        c.train.eta1 = t.value("eta1", c.train.eta1);
        c.train.eta2 = t.value("eta2", c.train.eta2);
        c.train.n_epochs = t.value("n_epochs", c.train.n_epochs);
        c.train.n_batches = t.value("n_batches", c.train.n_batches);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.n_linear_steps = t.value("n_linear_steps", c.train.n_linear_steps);
        c.train.adaptive = t.value("adaptive", c.train.adaptive);
        c.train.checkpoint_every = t.value("checkpoint_every", c.train.checkpoint_every);
        if (t.contains("hidden")) c.train.hidden = t["hidden"].get<std::vector<int>>();
      }
      if (j.contains("estimator")) {
        const io::json& e = j["estimator"];
        c.estimator.epochs = e.value("epochs", c.estimator.epochs);
        c.estimator.learning_rate = e.value("learning_rate", c.estimator.learning_rate);
        c.estimator.batch_size = e.value("batch_size", c.estimator.batch_size);
        if (e.contains("hidden")) c.estimator.hidden = e["hidden"].get<std::vector<int>>();
      }
      if (j.contains("paths")) {
        const io::json& p = j["paths"];
        c.modes_path = p.value("modes", c.modes_path);
        c.certificate_path = p.value("certificate", c.certificate_path);
        c.dataset_path = p.value("dataset", c.dataset_path);
        c.dataset_boxed_path = p.value("dataset_boxed", c.dataset_boxed_path);
        c.policy_path = p.value("policy", c.policy_path);
        c.policy_linear_opt_path = p.value("policy_linear_opt", c.policy_linear_opt_path);
        c.policy_boxed_path = p.value("policy_boxed", c.policy_boxed_path);
        c.estimator_path = p.value("estimator", c.estimator_path);
      }
    } catch (const io::json::exception& e) {
      throw std::invalid_argument(std::string("config: ") + e.what());
    }
    return c;
  }

  static TrainConfig preset(const std::string& name) {
    if (name == "desk") return TrainConfig::desk();
    if (name == "full") return TrainConfig::full();
    throw std::invalid_argument("config: unknown preset '" + name + "' (desk|full)");
  }

  /// Canonical summary hashed into trajectory CSV headers.
  io::json summary() const {
    return {{"grid", grid},
            {"seed", seed},
            {"dt", dt},
            {"controller", controller},
            {"scenarios", scenarios},
            {"horizon_steps", scenario.horizon_steps},
            {"switch_period_steps", scenario.switch_period_steps},
            {"init_dev_hz", {scenario.init_dev_hz_lo, scenario.init_dev_hz_hi}},
            {"settle_threshold_hz", settle_threshold_hz},
            {"omega_weight", omega_weight},
            {"action_weight", action_weight},
            {"u_bound", u_bound},
            {"epsilon", epsilon},
            {"mode_source", estimated_modes ? "estimated" : "true"}};
  }
};

/// Worker count: FREQGUARD_THREADS if set, else the hardware concurrency.
inline int thread_count() {
  if (const char* env = std::getenv("FREQGUARD_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs f(i) for i in [0, count) on `threads` workers; results are written
/// by index so the outcome does not depend on scheduling.
template <typename F>
void parallel_for(int count, int threads, F&& f) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < count; i += threads) f(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

struct EvalResult {
  std::vector<Scenario> scenarios;
  std::vector<Trajectory> trajectories;
  Metrics metrics;
  PolicyTelemetry telemetry;
  int boxed_lqr_unconverged = 0;
};

/// Everything a controller may need; unused members stay empty.
struct ControllerArtifacts {
  const ModeSet* modes = nullptr;
  CostSpec cost;
  std::optional<LyapunovCertificate> certificate;
  std::shared_ptr<const Policy> policy;
  std::shared_ptr<const EstimatorParams> estimator;
  double u_bound = 0.5;
  bool estimated_modes = true;
};

/// Rolls out `controller` over `count` scenarios of the batch seeded with `base_seed`.
inline EvalResult evaluate(const std::string& controller, const ControllerArtifacts& art,
                           std::uint64_t base_seed, int count, const ScenarioOptions& sopt,
                           double settle_threshold_hz, double nominal_hz, int threads = 1) {
  if (count < 1) throw std::invalid_argument("evaluate: scenario count must be >= 1");
  const ModeSet& modes = *art.modes;
  EvalResult res;
  res.scenarios.resize(static_cast<std::size_t>(count));
  res.trajectories.resize(static_cast<std::size_t>(count));
  std::vector<PolicyTelemetry> tel(static_cast<std::size_t>(count));
  std::vector<char> unconverged(static_cast<std::size_t>(count), 0);
  const bool policy_based = controller == "linear-opt" || controller == "proposed" ||
                            controller == "proposed-boxed";
  if (policy_based && !art.policy) throw std::invalid_argument("evaluate: policy required");
  if (controller == "linear" && !art.certificate) throw std::invalid_argument("evaluate: certificate required");
  parallel_for(count, threads, [&](int i) {
    const Scenario sc = batch_scenario(base_seed, i, modes, sopt);
    res.scenarios[static_cast<std::size_t>(i)] = sc;
    Trajectory t;
    if (controller == "lqr") {
      t = lqr_solve(modes, sc, art.cost);
    } else if (controller == "lqr-boxed") {
      BoxedLqrResult b = lqr_solve_boxed(modes, sc, art.cost, art.u_bound);
      unconverged[static_cast<std::size_t>(i)] = b.converged ? 0 : 1;
      t = std::move(b.trajectory);
    } else if (controller == "linear") {
      t = simulate(modes, sc, linear_controller(art.certificate->k), art.cost);
    } else if (policy_based) {
      auto tp = std::make_shared<PolicyTelemetry>();
      const Controller c = make_policy_controller(
          art.policy, art.estimator, art.estimated_modes ? ModeSource::kEstimated : ModeSource::kTrue, tp);
      t = simulate(modes, sc, c, art.cost);
      tel[static_cast<std::size_t>(i)] = *tp;
    } else {
      throw std::invalid_argument("evaluate: unknown controller '" + controller + "'");
    }
    res.trajectories[static_cast<std::size_t>(i)] = std::move(t);
  });
  for (const PolicyTelemetry& t : tel) res.telemetry.merge(t);
  for (char u : unconverged) res.boxed_lqr_unconverged += u;
  res.metrics = compute_metrics(res.trajectories, settle_threshold_hz, nominal_hz);
  return res;
}

inline io::json metrics_document(const std::string& controller, const EvalResult& r,
                                  const RunConfig& cfg, std::uint64_t eval_seed) {
  io::json doc = {{"format_version", io::kFormatVersion},
                  {"schema", "freqguard.metrics.v1"},
                  {"kind", "metrics"},
                  {"seed", cfg.seed},
                  {"scenario_base_seed", eval_seed},
                  {"config_hash", io::hash_hex(cfg.summary().dump())},
                  {"settle_threshold_hz", cfg.settle_threshold_hz},
                  {"controllers", {{controller, io::metrics_to_json(r.metrics)}}}};
  const bool policy_based = controller == "linear-opt" || controller == "proposed" ||
                            controller == "proposed-boxed";
  if (policy_based) {
    doc["mode_source"] = cfg.estimated_modes ? "estimated" : "true";
    doc["telemetry"] = io::telemetry_to_json(r.telemetry);
  }
  if (controller == "lqr-boxed") doc["boxed_lqr_unconverged"] = r.boxed_lqr_unconverged;
  return doc;
}

}  // namespace freqguard
