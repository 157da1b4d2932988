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

// File formats. Matrices are {"rows", "cols", "data"} with row-major data.
// Bus and mode ids are 1-based in every file.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "freqguard/policy.hpp"
#include "freqguard/trainloop.hpp"

namespace freqguard::io {

using json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- primitives -----------------------------------------------------------

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
  if (!out) throw FormatError("write failed: " + path);
}

/// Parses JSON text; syntax errors report the line and column.
inline json parse_json(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t stop = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < stop; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw FormatError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) +
                      ": JSON parse error: " + e.what());
  }
}

inline json load_json(const std::string& path) { return parse_json(read_text(path), path); }

inline void save_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json to_json(const Matrix& m) {
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline json vec_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Matrix matrix_from(const json& j, const std::string& what) {
  try {
    const auto r = j.at("rows").get<Eigen::Index>(), c = j.at("cols").get<Eigen::Index>();
    const json& d = j.at("data");
    if (r < 0 || c < 0 || static_cast<Eigen::Index>(d.size()) != r * c) {
      throw FormatError(what + ": data length does not match rows x cols");
    }
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index k = 0; k < c; ++k) m(i, k) = d[static_cast<std::size_t>(i * c + k)].get<double>();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(what + ": " + e.what());
  }
}

inline Vector vector_from(const json& j, const std::string& what) {
  try {
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    return v;
  } catch (const json::exception& e) {
    throw FormatError(what + ": " + e.what());
  }
}

inline void check_version(const json& j, const std::string& kind) {
  if (!j.contains("format_version") || j["format_version"] != kFormatVersion) {
    throw FormatError(kind + ": unsupported or missing format_version");
  }
}

/// Shortest decimal that round-trips.
inline std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

/// FNV-1a, printed as 16 hex digits.
inline std::string hash_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --- grid spec ------------------------------------------------------------

inline GridSpec grid_spec_from_json(const json& j) {
  try {
    GridSpec s;
    s.n = j.at("n").get<int>();
    s.nominal_freq_hz = j.value("nominal_freq_hz", 50.0);
    for (const json& b : j.at("buses")) {
      Bus bus;
      bus.damping = b.at("damping").get<double>();
      bus.rated_power = b.value("rated_power", 1.0);
      s.buses.push_back(bus);
    }
    for (const json& e : j.at("edges")) {
      Line l;
      l.from = e.at("from").get<int>() - 1;
      l.to = e.at("to").get<int>() - 1;
      l.reactance_pu = e.at("reactance_pu").get<double>();
      l.resistance_pu = e.value("resistance_pu", 0.0);
      s.edges.push_back(l);
    }
    const json& m = j.at("modes");
    s.inertia_s = m.at("inertia_s").get<std::vector<double>>();
    s.uniform_inertia = m.value("uniform", true);
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw GridSpecError(std::string("grid spec: ") + e.what());
  }
}

inline GridSpec load_grid_spec(const std::string& path) { return grid_spec_from_json(load_json(path)); }

inline json grid_spec_to_json(const GridSpec& s) {
  json buses = json::array(), edges = json::array();
  for (const Bus& b : s.buses) buses.push_back({{"damping", b.damping}, {"rated_power", b.rated_power}});
  for (const Line& l : s.edges) {
    edges.push_back({{"from", l.from + 1},
                     {"to", l.to + 1},
                     {"reactance_pu", l.reactance_pu},
                     {"resistance_pu", l.resistance_pu}});
  }
  return {{"n", s.n},
          {"nominal_freq_hz", s.nominal_freq_hz},
          {"buses", buses},
          {"edges", edges},
          {"modes", {{"inertia_s", s.inertia_s}, {"uniform", s.uniform_inertia}}}};
}

// --- mode set -------------------------------------------------------------

inline json modeset_to_json(const ModeSet& ms, const GridSpec& spec) {
  json modes = json::array();
  for (int q = 0; q < ms.size(); ++q) {
    const Mode& m = ms[q];
    modes.push_back({{"id", q + 1},
                     {"inertia_s", m.inertia_s},
                     {"inertia", vec_json(m.inertia)},
                     {"A", to_json(m.a)},
                     {"B", to_json(m.b)},
                     {"Ad", to_json(m.ad)},
                     {"Bd", to_json(m.bd)}});
  }
  return {{"format_version", kFormatVersion},
          {"kind", "modeset"},
          {"dt", ms.dt()},
          {"grid", grid_spec_to_json(spec)},
          {"laplacian", to_json(ms.laplacian().matrix())},
          {"damping", vec_json(ms.damping())},
          {"modes", modes}};
}

inline ModeSet modeset_from_json(const json& j) {
  check_version(j, "modeset");
  try {
    std::vector<Mode> modes;
    for (const json& mj : j.at("modes")) {
      Mode m;
      m.inertia_s = mj.at("inertia_s").get<double>();
      m.inertia = vector_from(mj.at("inertia"), "modeset inertia");
      m.a = matrix_from(mj.at("A"), "modeset A");
      m.b = matrix_from(mj.at("B"), "modeset B");
      m.ad = matrix_from(mj.at("Ad"), "modeset Ad");
      m.bd = matrix_from(mj.at("Bd"), "modeset Bd");
      modes.push_back(std::move(m));
    }
    if (modes.empty()) throw FormatError("modeset: no modes");
    return ModeSet(SymMatrix(matrix_from(j.at("laplacian"), "modeset laplacian")),
                   vector_from(j.at("damping"), "modeset damping"), j.at("dt").get<double>(),
                   std::move(modes));
  } catch (const json::exception& e) {
    throw FormatError(std::string("modeset: ") + e.what());
  }
}

// --- certificate ----------------------------------------------------------

inline json certificate_to_json(const LyapunovCertificate& c, const json& solver_meta) {
  return {{"format_version", kFormatVersion},
          {"kind", "certificate"},
          {"P", to_json(c.p.matrix())},
          {"K", to_json(c.k)},
          {"margins", c.margins},
          {"discrete_margins", c.discrete_margins},
          {"min_p_eigenvalue", c.min_p_eigenvalue},
          {"valid", c.valid},
          {"solver_meta", solver_meta}};
}

/// Margins and validity are recomputed, never trusted from the file.
inline LyapunovCertificate certificate_from_json(const json& j, const ModeSet& modes) {
  check_version(j, "certificate");
  LyapunovCertificate c;
  c.p = SymMatrix(matrix_from(j.at("P"), "certificate P"));
  c.k = matrix_from(j.at("K"), "certificate K");
  if (c.p.dim() != modes.state_dim() || c.k.rows() != modes.bus_count() ||
      c.k.cols() != modes.state_dim()) {
    throw FormatError("certificate: shape does not match the mode set");
  }
  const CertificateCheck chk = verify_certificate(c.k, c.p, modes);
  c.margins = chk.margins;
  c.discrete_margins = chk.discrete_margins;
  c.min_p_eigenvalue = chk.min_p_eigenvalue;
  c.valid = chk.valid;
  return c;
}

// --- networks and policies ------------------------------------------------

inline json mlp_to_json(const MlpParams& p) {
  json layers = json::array();
  for (const DenseLayer& l : p.layers) layers.push_back({{"w", to_json(l.w)}, {"b", vec_json(l.b)}});
  return {{"input_scale", vec_json(p.input_scale)}, {"layers", layers}};
}

inline MlpParams mlp_from_json(const json& j) {
  MlpParams p;
  p.input_scale = vector_from(j.at("input_scale"), "mlp input_scale");
  Eigen::Index prev = p.input_scale.size();
  for (const json& lj : j.at("layers")) {
    DenseLayer l{matrix_from(lj.at("w"), "mlp w"), vector_from(lj.at("b"), "mlp b")};
    if (l.w.cols() != prev || l.w.rows() != l.b.size()) throw FormatError("mlp: inconsistent layer shapes");
    prev = l.w.rows();
    p.layers.push_back(std::move(l));
  }
  if (p.layers.empty()) throw FormatError("mlp: no layers");
  return p;
}

inline json policy_to_json(const PolicyParams& p, const json& meta) {
  return {{"format_version", kFormatVersion},
          {"kind", "policy"},
          {"K", to_json(p.k)},
          {"chol_factor", to_json(p.chol)},
          {"epsilon", p.epsilon},
          {"u_bound", p.u_bound ? json(*p.u_bound) : json(nullptr)},
          {"mlp", mlp_to_json(p.mlp)},
          {"meta", meta}};
}

inline PolicyParams policy_from_json(const json& j) {
  check_version(j, "policy");
  try {
    PolicyParams p;
    p.k = matrix_from(j.at("K"), "policy K");
    p.chol = matrix_from(j.at("chol_factor"), "policy chol_factor");
    p.epsilon = j.at("epsilon").get<double>();
    if (!j.at("u_bound").is_null()) p.u_bound = j["u_bound"].get<double>();
    p.mlp = mlp_from_json(j.at("mlp"));
    return p;
  } catch (const json::exception& e) {
    throw FormatError(std::string("policy: ") + e.what());
  }
}

inline json estimator_to_json(const EstimatorParams& e, const json& meta) {
  return {{"format_version", kFormatVersion},
          {"kind", "estimator"},
          {"dt", e.dt},
          {"fallback_mode", e.fallback_mode + 1},
          {"block_scale", vec_json(e.block_scale)},
          {"net", mlp_to_json(e.net)},
          {"meta", meta}};
}

inline EstimatorParams estimator_from_json(const json& j) {
  check_version(j, "estimator");
  try {
    EstimatorParams e;
    e.dt = j.at("dt").get<double>();
    e.fallback_mode = j.at("fallback_mode").get<int>() - 1;
    e.block_scale = vector_from(j.at("block_scale"), "estimator block_scale");
    e.net = mlp_from_json(j.at("net"));
    if (e.block_scale.size() != 3 || e.net.input_dim() != kEstimatorInputs || e.fallback_mode < 0 ||
        e.fallback_mode >= e.net.output_dim()) {
      throw FormatError("estimator: inconsistent shapes");
    }
    return e;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("estimator: ") + ex.what());
  }
}

// --- dataset --------------------------------------------------------------

inline void save_dataset(const std::string& csv_path, const std::string& sidecar_path,
                         const ExpertDataset& ds, const CostSpec& cost, const json& meta) {
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + csv_path);
  const Eigen::Index nx = ds.states.rows(), nu = ds.actions.rows();
  for (Eigen::Index i = 0; i < nx; ++i) out << "x_" << (i + 1) << ',';
  for (Eigen::Index i = 0; i < nu; ++i) out << "u_" << (i + 1) << ',';
  out << "q,traj_id,step\n";
  std::string line;
  for (int c = 0; c < ds.size(); ++c) {
    line.clear();
    for (Eigen::Index i = 0; i < nx; ++i) line += fmt(ds.states(i, c)) + ',';
    for (Eigen::Index i = 0; i < nu; ++i) line += fmt(ds.actions(i, c)) + ',';
    line += std::to_string(ds.modes[c] + 1) + ',' + std::to_string(ds.traj_id[c]) + ',' +
            std::to_string(ds.step[c]) + '\n';
    out << line;
  }
  if (!out) throw FormatError("write failed: " + csv_path);
  json seeds = json::array();
  for (std::uint64_t s : ds.seeds) seeds.push_back(s);
  save_json(sidecar_path, {{"format_version", kFormatVersion},
                           {"kind", "dataset"},
                           {"rows", ds.size()},
                           {"n_traj", ds.trajectories()},
                           {"state_dim", nx},
                           {"bus_count", nu},
                           {"base_seed", ds.base_seed},
                           {"scenario_seeds", seeds},
                           {"u_bound", ds.u_bound ? json(*ds.u_bound) : json(nullptr)},
                           {"cost", {{"Q", to_json(cost.q.matrix())}, {"R", to_json(cost.r.matrix())}}},
                           {"meta", meta}});
}

inline ExpertDataset load_dataset(const std::string& csv_path, const std::string& sidecar_path) {
  const json side = load_json(sidecar_path);
  check_version(side, "dataset sidecar");
  const auto nx = side.at("state_dim").get<Eigen::Index>();
  const auto nu = side.at("bus_count").get<Eigen::Index>();
  const int rows = side.at("rows").get<int>();
  ExpertDataset ds;
  ds.base_seed = side.at("base_seed").get<std::uint64_t>();
  for (const json& s : side.at("scenario_seeds")) ds.seeds.push_back(s.get<std::uint64_t>());
  if (!side.at("u_bound").is_null()) ds.u_bound = side["u_bound"].get<double>();
  ds.states.resize(nx, rows);
  ds.actions.resize(nu, rows);

  const std::string text = read_text(csv_path);
  const char* p = text.data();
  const char* end = p + text.size();
  const char* nl = std::find(p, end, '\n');
  if (nl == end) throw FormatError(csv_path + ": missing header");
  p = nl + 1;
  int line_no = 2;
  auto number = [&](double& v) {
    const auto r = std::from_chars(p, end, v);
    if (r.ec != std::errc()) throw FormatError(csv_path + ":" + std::to_string(line_no) + ": bad number");
    p = r.ptr;
    if (p < end && *p == ',') ++p;
  };
  auto integer = [&](long long& v) {
    const auto r = std::from_chars(p, end, v);
    if (r.ec != std::errc()) throw FormatError(csv_path + ":" + std::to_string(line_no) + ": bad integer");
    p = r.ptr;
    if (p < end && (*p == ',' || *p == '\r')) ++p;
  };
  for (int c = 0; c < rows; ++c, ++line_no) {
    if (p >= end) throw FormatError(csv_path + ": fewer rows than the sidecar declares");
    for (Eigen::Index i = 0; i < nx; ++i) number(ds.states(i, c));
    for (Eigen::Index i = 0; i < nu; ++i) number(ds.actions(i, c));
    long long q, t, k;
    integer(q);
    integer(t);
    integer(k);
    ds.modes.push_back(static_cast<int>(q - 1));
    ds.traj_id.push_back(static_cast<int>(t));
    ds.step.push_back(static_cast<int>(k));
    if (p < end && *p == '\n') ++p;
  }
  return ds;
}

// --- trajectories and metrics ---------------------------------------------

inline void save_trajectory_csv(const std::string& path, const Trajectory& t, double nominal_hz,
                                const std::string& config_hash) {
  const Eigen::Index n = t.actions.rows();
  std::ostringstream out;
  out << "# config_hash=" << config_hash << '\n';
  out << "t_s,mode";
  for (Eigen::Index i = 0; i < n; ++i) out << ",theta_" << (i + 1);
  for (Eigen::Index i = 0; i < n; ++i) out << ",omega_hz_" << (i + 1);
  for (Eigen::Index i = 0; i < n; ++i) out << ",u_" << (i + 1);
  out << ",stage_cost\n";
  const int horizon = t.horizon();
  for (int k = 0; k <= horizon; ++k) {
    out << fmt(k * t.dt) << ',' << (t.modes[std::min(k, horizon - 1)] + 1);
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << fmt(t.states(i, k));
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << fmt(t.states(n + i, k) * nominal_hz);
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << (k < horizon ? fmt(t.actions(i, k)) : "");
    out << ',' << fmt(t.stage_costs[static_cast<std::size_t>(k)]) << '\n';
  }
  write_text(path, out.str());
}

inline json stat_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}}; }

inline json metrics_to_json(const Metrics& m) {
  return {{"settling_ms", stat_json(m.settling_ms)},
          {"overshoot_hz", stat_json(m.overshoot_hz)},
          {"avg_cost", stat_json(m.avg_cost)},
          {"unsettled", m.unsettled},
          {"scenarios", m.per_trajectory.size()}};
}

inline json telemetry_to_json(const PolicyTelemetry& t) {
  return {{"steps", t.steps},
          {"zero_state", t.zero_state},
          {"projection_active", t.active},
          {"degenerate_g", t.degenerate},
          {"degenerate_unstable", t.degenerate_unstable},
          {"boxed_alternations", t.boxed_alternations},
          {"boxed_violations", t.boxed_violations},
          {"boxed_unreachable", t.boxed_unreachable},
          {"estimated_steps", t.estimated},
          {"mode_mismatches", t.mode_mismatches},
          {"true_mode_violations", t.true_mode_violations}};
}

inline json train_report_to_json(const TrainReport& r) {
  return {{"format_version", kFormatVersion},
          {"kind", "train_report"},
          {"epochs_run", r.epochs_run},
          {"converged", r.converged},
          {"rejected", r.rejected},
          {"status", r.rejected ? "REJECTED" : "ACCEPTED"},
          {"residual_loss", r.residual_loss},
          {"linear_loss", r.linear_loss},
          {"penalty", r.penalty},
          {"trained_margins", r.trained_margins},
          {"margins", r.margins},
          {"seconds", r.seconds}};
}

}  // namespace freqguard::io
