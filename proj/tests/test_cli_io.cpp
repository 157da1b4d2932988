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

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>

#include "freqguard/pipeline.hpp"
#include "support.hpp"

namespace {

namespace fs = std::filesystem;
using freqguard::ExpertDataset;
using freqguard::LyapunovCertificate;
using freqguard::Matrix;
using freqguard::MlpParams;
using freqguard::ModeSet;
using freqguard::PolicyParams;
using freqguard::Rng;
using freqguard::io::FormatError;
using freqguard::io::json;
using namespace fgtest;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("freqguard_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---- io ------------------------------------------------------------------

TEST(Io, ParseErrorsCarryLineAndColumn) {
  try {
    freqguard::io::parse_json("{\n  \"a\": 1,\n  oops\n}", "cfg.json");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.json:3:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(freqguard::io::load_json("/nonexistent/x.json"), FormatError);
}

TEST(Io, GridAndModeSetRoundTrip) {
  const auto spec = bundled_grid();
  const auto again = freqguard::io::grid_spec_from_json(freqguard::io::grid_spec_to_json(spec));
  EXPECT_EQ(again.n, spec.n);
  EXPECT_EQ(again.inertia_s, spec.inertia_s);
  ASSERT_EQ(again.edges.size(), spec.edges.size());
  EXPECT_EQ(freqguard::build_laplacian(again).matrix(), freqguard::build_laplacian(spec).matrix());

  const ModeSet ms = freqguard::build_modes(spec, 1e-3);
  const json j = json::parse(freqguard::io::modeset_to_json(ms, spec).dump());
  const ModeSet back = freqguard::io::modeset_from_json(j);
  ASSERT_EQ(back.size(), ms.size());
  for (int q = 0; q < ms.size(); ++q) {
    EXPECT_EQ(back[q].a, ms[q].a);
    EXPECT_EQ(back[q].ad, ms[q].ad);
    EXPECT_EQ(back[q].bd, ms[q].bd);
  }
}

TEST(Io, CertificatePolicyEstimatorRoundTrip) {
  const ModeSet ms = freqguard::build_modes(two_bus({0.5, 3.0}, 0.1), 1e-3);
  const LyapunovCertificate cert = certify(ms);
  ASSERT_TRUE(cert.valid);
  const json cj = json::parse(freqguard::io::certificate_to_json(cert, {{"note", "t"}}).dump());
  const LyapunovCertificate c2 = freqguard::io::certificate_from_json(cj, ms);
  EXPECT_EQ(c2.k, cert.k);
  EXPECT_EQ(c2.p.matrix(), cert.p.matrix());
  EXPECT_TRUE(c2.valid);

  json broken = cj;
  broken.erase("format_version");
  EXPECT_THROW(freqguard::io::certificate_from_json(broken, ms), FormatError);

  Rng rng(1);
  PolicyParams p = PolicyParams::from_certificate(cert, MlpParams::init({4, 5, 2}, rng), 3e-7);
  p.mlp.input_scale = random_vector(rng, 4);
  p.u_bound = 0.25;
  const PolicyParams p2 =
      freqguard::io::policy_from_json(json::parse(freqguard::io::policy_to_json(p, {}).dump()));
  EXPECT_EQ(p2.k, p.k);
  EXPECT_EQ(p2.chol, p.chol);
  EXPECT_EQ(p2.epsilon, p.epsilon);
  ASSERT_TRUE(p2.u_bound.has_value());
  EXPECT_EQ(*p2.u_bound, 0.25);
  EXPECT_EQ(p2.mlp.input_scale, p.mlp.input_scale);
  for (std::size_t l = 0; l < p.mlp.layers.size(); ++l) {
    EXPECT_EQ(p2.mlp.layers[l].w, p.mlp.layers[l].w);
    EXPECT_EQ(p2.mlp.layers[l].b, p.mlp.layers[l].b);
  }

  freqguard::EstimatorParams est;
  est.net = MlpParams::init({freqguard::kEstimatorInputs, 4, 2}, rng);
  est.block_scale = random_vector(rng, freqguard::kEstimatorInputs).cwiseAbs();
  est.fallback_mode = 1;
  const auto e2 =
      freqguard::io::estimator_from_json(json::parse(freqguard::io::estimator_to_json(est, {}).dump()));
  EXPECT_EQ(e2.block_scale, est.block_scale);
  EXPECT_EQ(e2.fallback_mode, 1);
  EXPECT_EQ(e2.net.layers[0].w, est.net.layers[0].w);
}

TEST(Io, DatasetRoundTripIsBitExact) {
  const ModeSet ms = freqguard::build_modes(two_bus({0.5, 3.0}, 0.1), 1e-3);
  const auto cost = freqguard::CostSpec::frequency_weighted(2);
  freqguard::DatasetOptions opt;
  opt.n_traj = 3;
  opt.scenario.horizon_steps = 100;
  opt.scenario.switch_period_steps = 10;
  const ExpertDataset ds = freqguard::build_dataset(ms, cost, opt, 5);
  const fs::path dir = scratch("dataset");
  const std::string csv = (dir / "d.csv").string();
  freqguard::io::save_dataset(csv, csv + ".json", ds, cost, {});
  const ExpertDataset back = freqguard::io::load_dataset(csv, csv + ".json");
  EXPECT_EQ(back.states, ds.states);
  EXPECT_EQ(back.actions, ds.actions);
  EXPECT_EQ(back.modes, ds.modes);
  EXPECT_EQ(back.traj_id, ds.traj_id);
  EXPECT_EQ(back.step, ds.step);
  EXPECT_EQ(back.seeds, ds.seeds);

  // Drop the last rows: the sidecar count no longer matches.
  std::string text = freqguard::io::read_text(csv);
  text.resize(text.size() / 2);
  text.resize(text.rfind('\n') + 1);
  freqguard::io::write_text(csv, text);
  EXPECT_THROW(freqguard::io::load_dataset(csv, csv + ".json"), FormatError);
}

// ---- command line ----------------------------------------------------------

struct CliRun {
  int code = -1;
  std::string output;
};

CliRun run_cli(const std::string& args) {
  const std::string cmd = std::string(FREQGUARD_CLI) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class ToyPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch("toy2");
    const json cfg = {{"grid", std::string(FREQGUARD_DATA_DIR) + "/toy2.json"},
                      {"out_dir", dir_.string()},
                      {"seed", 3},
                      {"scenario", {{"count", 4}}},
                      {"dataset", {{"n_traj", 4}}},
                      {"estimator", {{"epochs", 2}}},
                      {"train", {{"preset", "desk"}, {"n_epochs", 2}, {"n_batches", 3}, {"hidden", {16}}}}};
    freqguard::io::save_json((dir_ / "run.json").string(), cfg);
  }
  static std::string config() { return "--config " + (dir_ / "run.json").string(); }
  static fs::path dir_;
};

fs::path ToyPipeline::dir_;

TEST_F(ToyPipeline, StagesRunInOrderAndEvalIsDeterministic) {
  for (const std::string stage : {"grid", "lyap", "dataset", "estimator", "train", "train --variant linear-opt"}) {
    const CliRun r = run_cli(stage + " " + config());
    ASSERT_EQ(r.code, 0) << stage << "\n" << r.output;
  }
  for (const char* f : {"modes.json", "certificate.json", "dataset.csv", "dataset.csv.json", "estimator.json",
                        "policy.json", "policy.json.report.json", "policy_linear_opt.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / f)) << f;
  }
  for (const std::string c : {"lqr", "linear", "linear-opt", "proposed"}) {
    const CliRun r = run_cli("eval --controller " + c + " " + config());
    ASSERT_EQ(r.code, 0) << c << "\n" << r.output;
    EXPECT_TRUE(fs::exists(dir_ / ("trajectories_" + c) / "scenario_4.csv"));
  }
  const std::string first = freqguard::io::read_text((dir_ / "metrics_proposed.json").string());
  ASSERT_EQ(run_cli("eval --controller proposed " + config()).code, 0);
  EXPECT_EQ(freqguard::io::read_text((dir_ / "metrics_proposed.json").string()), first);
  const json doc = json::parse(first);
  EXPECT_EQ(doc["controllers"]["proposed"]["scenarios"], 4);
  EXPECT_EQ(doc["mode_source"], "estimated");
}

TEST_F(ToyPipeline, ErrorsMapToExitCodes) {
  const fs::path empty = scratch("empty");
  CliRun r = run_cli("eval --controller linear --out " + empty.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("run `freqguard grid` first"), std::string::npos) << r.output;

  r = run_cli("eval --scenarios 0 --out " + empty.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("scenarios"), std::string::npos) << r.output;

  r = run_cli("eval --controller nonsense");
  EXPECT_EQ(r.code, 1);

  freqguard::io::write_text((empty / "bad.json").string(), "{\n  \"seed\": 1,\n  ]\n}");
  r = run_cli("grid --error-json --config " + (empty / "bad.json").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("bad.json:3:"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("{\"error\":"), std::string::npos) << r.output;

  const json tight = {{"grid", std::string(FREQGUARD_DATA_DIR) + "/toy2.json"},
                      {"out_dir", empty.string()},
                      {"lyap", {{"max_iterations", 1}}}};
  freqguard::io::save_json((empty / "tight.json").string(), tight);
  ASSERT_EQ(run_cli("grid --config " + (empty / "tight.json").string()).code, 0);
  r = run_cli("lyap --config " + (empty / "tight.json").string());
  EXPECT_EQ(r.code, 2) << r.output;
}

}  // namespace
