#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "deter/geogrid.hpp"
#include "deter/model.hpp"
#include "deter/panel.hpp"
#include "deter/rng.hpp"

namespace deter {

enum class PatrolPolicy { Uniform, Random, Reactive, Surge };

inline const char* policy_name(PatrolPolicy p) {
  switch (p) {
    case PatrolPolicy::Uniform: return "uniform";
    case PatrolPolicy::Random: return "random";
    case PatrolPolicy::Reactive: return "reactive";
    case PatrolPolicy::Surge: return "surge";
  }
  return "?";
}

inline std::optional<PatrolPolicy> parse_policy(const std::string& s) {
  if (s == "uniform" || s == "UNIFORM") return PatrolPolicy::Uniform;
  if (s == "random" || s == "RANDOM") return PatrolPolicy::Random;
  if (s == "reactive" || s == "REACTIVE") return PatrolPolicy::Reactive;
  if (s == "surge" || s == "SURGE") return PatrolPolicy::Surge;
  return std::nullopt;
}

// Declared covariate moments. Generation standardizes covariates against
// these on the fly, so the generating coefficients live on a fixed, known
// scale regardless of the realized sample.
struct DeclaredStats {
  CovariateStats curr_effort{0.0, 1.0};
  CovariateStats past_effort{0.0, 1.0};
  CovariateStats past_illegal{0.0, 1.0};
  CovariateStats past_neighbors{0.0, 1.0};
};

struct SimConfig {
  int n_cols = 20;
  int n_rows = 20;
  int n_bins = 48;
  int bin_length_days = 91;

  double mean_a = -5.0;
  double std_a = 1.0;
  double beta = 1.0;
  double gamma = -0.2;
  double rho = 0.0;
  double eta = 0.0;
  ModelVariant variant = ModelVariant::PastEffort;

  PatrolPolicy policy = PatrolPolicy::Uniform;
  double effort_scale = 2.0;  // km per cell-bin
  // surge policy shape: episodes start from the base level with probability
  // surge_start_prob, spend one bin at zero effort, then run at
  // surge_mult * effort_scale with per-bin continuation probability surge_cont
  double surge_start_prob = 0.04;
  double surge_cont = 0.5;
  double surge_mult = 2.5;

  int lag_k = 1;
  int neighbor_window = 3;
  std::uint64_t seed = 1;

  // empty -> derived from the policy's stationary moments
  std::optional<DeclaredStats> declared;

  void validate() const {
    if (n_cols < 1 || n_rows < 1 || n_bins < 1)
      throw std::invalid_argument("grid dims and n_bins must be >= 1");
    if (std_a < 0) throw std::invalid_argument("std_a must be >= 0");
    if (effort_scale < 0) throw std::invalid_argument("effort_scale must be >= 0");
    if (lag_k < 1 || lag_k >= n_bins)
      throw std::invalid_argument("lag_k must be in [1, n_bins)");
    if (surge_start_prob < 0 || surge_start_prob > 1 || surge_cont < 0 ||
        surge_cont >= 1 || surge_mult < 0)
      throw std::invalid_argument("surge parameters out of range");
    if (variant == ModelVariant::PastEffort && (rho != 0.0 || eta != 0.0))
      throw std::invalid_argument("past_effort variant takes beta/gamma only");
    if (variant == ModelVariant::PastIllegal && (gamma != 0.0 || eta != 0.0))
      throw std::invalid_argument("past_illegal variant takes beta/rho only");
    if (variant == ModelVariant::PastIllegalNeighbors && gamma != 0.0)
      throw std::invalid_argument(
          "past_illegal_neighbors variant takes beta/rho/eta only");
  }
};

struct SimOutput {
  EffortRaster effort;
  ObservationRaster obs;
  std::vector<double> attractiveness;
  // the exact standardized covariates the generator used, rows with bin >= k
  std::vector<PanelRow> generating_rows;
  DeclaredStats declared;
};

// Stationary moments of one bin of effort under each policy. Degenerate
// policies (uniform) get stddev 1 so standardization stays well defined.
inline DeclaredStats default_declared_stats(const SimConfig& cfg) {
  DeclaredStats d;
  const double s = cfg.effort_scale;
  const double k = static_cast<double>(cfg.lag_k);
  double mean = s, var = 0.0;
  switch (cfg.policy) {
    case PatrolPolicy::Uniform:
    case PatrolPolicy::Reactive:
      // reactive is uniform up to rare detection-driven reallocations
      mean = s;
      var = 0.0;
      break;
    case PatrolPolicy::Random:
      mean = s;
      var = s * s;
      break;
    case PatrolPolicy::Surge: {
      const double q = cfg.surge_start_prob, c = cfg.surge_cont;
      const double pb = 1.0 / (1.0 + q + q / (1.0 - c));
      const double pr = q * pb;            // rest bins
      const double ps = q * pb / (1.0 - c);  // surge bins
      mean = pb * s + ps * cfg.surge_mult * s;
      var = pb * (s - mean) * (s - mean) + pr * mean * mean +
            ps * (cfg.surge_mult * s - mean) * (cfg.surge_mult * s - mean);
      break;
    }
  }
  d.curr_effort = {mean, var > 0 ? std::sqrt(var) : 1.0};
  // past window sums k bins; treat bins as independent for the declared scale
  d.past_effort = {k * mean, var > 0 ? std::sqrt(k * var) : 1.0};
  // counts enter on their raw scale by default
  d.past_illegal = {0.0, 1.0};
  d.past_neighbors = {0.0, 1.0};
  return d;
}

namespace detail {

// Per-cell surge policy state machine.
struct SurgeState {
  enum Phase { Base, Rest, Surging } phase = Base;
};

}  // namespace detail

// One bin of per-cell effort. `prev_detections` is the previous bin's count
// per cell (all zeros for bin 0). The surge variant keeps per-cell state.
inline std::vector<double> patrol_policy_effort(
    const std::vector<long>& prev_detections, const SimConfig& cfg,
    Rng& bin_rng, std::vector<detail::SurgeState>* surge_state = nullptr) {
  const int n = cfg.n_cols * cfg.n_rows;
  std::vector<double> effort(n, cfg.effort_scale);
  switch (cfg.policy) {
    case PatrolPolicy::Uniform:
      break;
    case PatrolPolicy::Random:
      for (int i = 0; i < n; ++i)
        effort[i] = bin_rng.substream(i).exponential(cfg.effort_scale);
      break;
    case PatrolPolicy::Reactive: {
      // budget N * effort_scale split by softmax of previous-bin counts
      double mx = 0.0;
      for (long c : prev_detections) mx = std::max(mx, double(c));
      double z = 0.0;
      std::vector<double> w(n);
      for (int i = 0; i < n; ++i) {
        w[i] = std::exp(double(prev_detections[i]) - mx);
        z += w[i];
      }
      const double budget = n * cfg.effort_scale;
      for (int i = 0; i < n; ++i) effort[i] = budget * w[i] / z;
      break;
    }
    case PatrolPolicy::Surge: {
      if (!surge_state || static_cast<int>(surge_state->size()) != n)
        throw std::invalid_argument("surge policy requires per-cell state");
      for (int i = 0; i < n; ++i) {
        auto& st = (*surge_state)[i];
        const double u = bin_rng.substream(i).uniform();
        switch (st.phase) {
          case detail::SurgeState::Base:
            if (u < cfg.surge_start_prob) st.phase = detail::SurgeState::Rest;
            break;
          case detail::SurgeState::Rest:
            st.phase = detail::SurgeState::Surging;
            break;
          case detail::SurgeState::Surging:
            if (u >= cfg.surge_cont) st.phase = detail::SurgeState::Base;
            break;
        }
        effort[i] = st.phase == detail::SurgeState::Rest ? 0.0
                    : st.phase == detail::SurgeState::Surging
                        ? cfg.surge_mult * cfg.effort_scale
                        : cfg.effort_scale;
      }
      break;
    }
  }
  return effort;
}

// Rolls bins forward: policy effort, standardized covariates against the
// declared moments, detection y ~ Bernoulli(logistic(linear predictor)).
// Fully deterministic given the seed. Bins earlier than lag_k truncate the
// past sums to the bins that exist; panels drop those rows anyway.
inline SimOutput simulate(const SimConfig& cfg) {
  cfg.validate();
  const int n = cfg.n_cols * cfg.n_rows;
  GridSpec grid;
  grid.n_cols = cfg.n_cols;
  grid.n_rows = cfg.n_rows;
  TimeBinning binning;
  binning.bin_length_days = cfg.bin_length_days;
  binning.n_bins = cfg.n_bins;
  binning.validate();

  SimOutput out;
  out.effort = EffortRaster(grid, binning);
  out.obs = ObservationRaster(grid, binning);
  out.declared = cfg.declared ? *cfg.declared : default_declared_stats(cfg);

  Rng root(cfg.seed);
  Rng a_rng = root.substream(0);
  out.attractiveness.resize(n);
  for (int i = 0; i < n; ++i)
    out.attractiveness[i] = a_rng.substream(i).normal(cfg.mean_a, cfg.std_a);

  const bool needs_neighbors = cfg.variant == ModelVariant::PastIllegalNeighbors;
  NeighborSpec nbr_spec{cfg.neighbor_window};
  if (needs_neighbors) nbr_spec.validate();

  std::vector<detail::SurgeState> surge_state(n);
  std::vector<long> prev_detections(n, 0);

  for (int t = 0; t < cfg.n_bins; ++t) {
    Rng policy_rng = root.substream(1, static_cast<std::uint64_t>(t));
    std::vector<double> effort =
        patrol_policy_effort(prev_detections, cfg, policy_rng, &surge_state);
    for (int i = 0; i < n; ++i) out.effort.at(i, t) = effort[i];

    Rng y_rng = root.substream(2, static_cast<std::uint64_t>(t));
    const int kk = std::min(cfg.lag_k, t);
    for (int i = 0; i < n; ++i) {
      PanelRow row;
      row.cell = i;
      row.bin = t;
      double past_eff = 0.0, past_ill = 0.0, past_nbr = 0.0;
      for (int j = 1; j <= kk; ++j) {
        past_eff += out.effort.at(i, t - j);
        past_ill += static_cast<double>(out.obs.at(i, t - j));
      }
      if (needs_neighbors) {
        const int col = i % cfg.n_cols, rrow = i / cfg.n_cols;
        const int h = cfg.neighbor_window / 2;
        for (int dr = -h; dr <= h; ++dr) {
          for (int dc = -h; dc <= h; ++dc) {
            if (dr == 0 && dc == 0) continue;
            int nc = col + dc, nr = rrow + dr;
            if (nc < 0 || nc >= cfg.n_cols || nr < 0 || nr >= cfg.n_rows)
              continue;
            const int ncell = grid.cell_index(nc, nr);
            for (int j = 1; j <= kk; ++j)
              past_nbr += static_cast<double>(out.obs.at(ncell, t - j));
          }
        }
      }
      row.curr_effort = (effort[i] - out.declared.curr_effort.mean) /
                        out.declared.curr_effort.stddev;
      row.past_effort = (past_eff - out.declared.past_effort.mean) /
                        out.declared.past_effort.stddev;
      row.past_illegal = (past_ill - out.declared.past_illegal.mean) /
                         out.declared.past_illegal.stddev;
      row.past_neighbors = (past_nbr - out.declared.past_neighbors.mean) /
                           out.declared.past_neighbors.stddev;

      double z = out.attractiveness[i] + cfg.beta * row.curr_effort;
      switch (cfg.variant) {
        case ModelVariant::PastEffort:
          z += cfg.gamma * row.past_effort;
          break;
        case ModelVariant::PastIllegal:
          z += cfg.rho * row.past_illegal;
          break;
        case ModelVariant::PastIllegalNeighbors:
          z += cfg.rho * row.past_illegal + cfg.eta * row.past_neighbors;
          break;
      }
      const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                              : std::exp(z) / (1.0 + std::exp(z));
      const bool y = y_rng.substream(i).bernoulli(p);
      out.obs.at(i, t) = y ? 1 : 0;
      row.y = y ? 1 : 0;
      if (t >= cfg.lag_k) out.generating_rows.push_back(row);
    }
    for (int i = 0; i < n; ++i) prev_detections[i] = out.obs.at(i, t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config file (key = value) and ground-truth sidecar
// ---------------------------------------------------------------------------

inline std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const char* ws = " \t\r";
      s.erase(0, s.find_first_not_of(ws));
      auto end = s.find_last_not_of(ws);
      s.erase(end == std::string::npos ? 0 : end + 1);
      return s;
    };
    std::string key = trim(line.substr(0, eq));
    if (!key.empty()) kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline void apply_sim_config(SimConfig& cfg,
                             const std::map<std::string, std::string>& kv) {
  auto geti = [&](const char* k, int& v) {
    if (auto it = kv.find(k); it != kv.end()) v = std::stoi(it->second);
  };
  auto getd = [&](const char* k, double& v) {
    if (auto it = kv.find(k); it != kv.end()) v = csv::parse_double(it->second);
  };
  geti("n_cols", cfg.n_cols);
  geti("n_rows", cfg.n_rows);
  geti("n_bins", cfg.n_bins);
  geti("bin_length_days", cfg.bin_length_days);
  getd("mean_a", cfg.mean_a);
  getd("std_a", cfg.std_a);
  getd("beta", cfg.beta);
  getd("gamma", cfg.gamma);
  getd("rho", cfg.rho);
  getd("eta", cfg.eta);
  getd("effort_scale", cfg.effort_scale);
  getd("surge_start_prob", cfg.surge_start_prob);
  getd("surge_cont", cfg.surge_cont);
  getd("surge_mult", cfg.surge_mult);
  geti("lag_k", cfg.lag_k);
  geti("neighbor_window", cfg.neighbor_window);
  if (auto it = kv.find("seed"); it != kv.end())
    cfg.seed = std::stoull(it->second);
  if (auto it = kv.find("variant"); it != kv.end()) {
    auto v = parse_variant(it->second);
    if (!v) throw std::runtime_error("unknown variant: " + it->second);
    cfg.variant = *v;
  }
  if (auto it = kv.find("policy"); it != kv.end()) {
    auto p = parse_policy(it->second);
    if (!p) throw std::runtime_error("unknown policy: " + it->second);
    cfg.policy = *p;
  }
  DeclaredStats d = cfg.declared ? *cfg.declared : DeclaredStats{};
  bool any = false;
  auto decl = [&](const char* k, double& v) {
    if (auto it = kv.find(k); it != kv.end()) {
      v = csv::parse_double(it->second);
      any = true;
    }
  };
  decl("declared_curr_mean", d.curr_effort.mean);
  decl("declared_curr_std", d.curr_effort.stddev);
  decl("declared_past_mean", d.past_effort.mean);
  decl("declared_past_std", d.past_effort.stddev);
  decl("declared_illegal_mean", d.past_illegal.mean);
  decl("declared_illegal_std", d.past_illegal.stddev);
  decl("declared_neighbors_mean", d.past_neighbors.mean);
  decl("declared_neighbors_std", d.past_neighbors.stddev);
  if (any || cfg.declared) cfg.declared = d;
}

inline nlohmann::json sim_config_to_json(const SimConfig& cfg) {
  nlohmann::json j;
  j["n_cols"] = cfg.n_cols;
  j["n_rows"] = cfg.n_rows;
  j["n_bins"] = cfg.n_bins;
  j["bin_length_days"] = cfg.bin_length_days;
  j["mean_a"] = cfg.mean_a;
  j["std_a"] = cfg.std_a;
  j["beta"] = cfg.beta;
  j["gamma"] = cfg.gamma;
  j["rho"] = cfg.rho;
  j["eta"] = cfg.eta;
  j["variant"] = variant_name(cfg.variant);
  j["policy"] = policy_name(cfg.policy);
  j["effort_scale"] = cfg.effort_scale;
  j["surge_start_prob"] = cfg.surge_start_prob;
  j["surge_cont"] = cfg.surge_cont;
  j["surge_mult"] = cfg.surge_mult;
  j["lag_k"] = cfg.lag_k;
  j["neighbor_window"] = cfg.neighbor_window;
  j["seed"] = cfg.seed;
  return j;
}

inline nlohmann::json ground_truth_json(const SimConfig& cfg,
                                        const SimOutput& out) {
  nlohmann::json j;
  j["config"] = sim_config_to_json(cfg);
  j["attractiveness"] = out.attractiveness;
  j["declared_stats"] = {
      {"curr_effort",
       {{"mean", out.declared.curr_effort.mean},
        {"stddev", out.declared.curr_effort.stddev}}},
      {"past_effort",
       {{"mean", out.declared.past_effort.mean},
        {"stddev", out.declared.past_effort.stddev}}},
      {"past_illegal",
       {{"mean", out.declared.past_illegal.mean},
        {"stddev", out.declared.past_illegal.stddev}}},
      {"past_neighbors",
       {{"mean", out.declared.past_neighbors.mean},
        {"stddev", out.declared.past_neighbors.stddev}}}};
  return j;
}

}  // namespace deter
