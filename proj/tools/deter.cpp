// deter: patrol-deterrence analysis pipeline.
// Subcommands: simulate, ingest, panel, fit, recover, gam, report.
// Data goes to files under --out-dir; logs go to stderr.
// Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 recovery failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "deter/gam.hpp"
#include "deter/geogrid.hpp"
#include "deter/model.hpp"
#include "deter/panel.hpp"
#include "deter/simulator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--config", c.config_path, "key = value config file");
  cmd->add_option("--out-dir", c.out_dir, "output directory (created if absent)");
  cmd->add_option("--seed", c.seed, "RNG seed override");
}

std::map<std::string, std::string> load_config(const CommonOpts& c) {
  std::map<std::string, std::string> kv;
  if (!c.config_path.empty()) kv = deter::read_kv_file(c.config_path);
  return kv;
}

// every run leaves a resolved-config echo beside its outputs
void write_resolved(const fs::path& out_dir, const std::string& name,
                    const std::map<std::string, std::string>& kv) {
  std::ofstream out(out_dir / (name + "_config.txt"));
  for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
}

fs::path ensure_out_dir(const CommonOpts& c) {
  fs::path p(c.out_dir);
  fs::create_directories(p);
  return p;
}

int geti(const std::map<std::string, std::string>& kv, const char* key,
         int dflt) {
  auto it = kv.find(key);
  return it == kv.end() ? dflt : std::stoi(it->second);
}

double getd(const std::map<std::string, std::string>& kv, const char* key,
            double dflt) {
  auto it = kv.find(key);
  return it == kv.end() ? dflt : deter::csv::parse_double(it->second);
}

std::string gets(const std::map<std::string, std::string>& kv, const char* key,
                 const std::string& dflt) {
  auto it = kv.find(key);
  return it == kv.end() ? dflt : it->second;
}

deter::GridSpec grid_from_kv(const std::map<std::string, std::string>& kv) {
  deter::GridSpec g;
  g.origin_x = getd(kv, "origin_x", 0.0);
  g.origin_y = getd(kv, "origin_y", 0.0);
  g.cell_size = getd(kv, "cell_size", 1000.0);
  g.n_cols = geti(kv, "n_cols", 20);
  g.n_rows = geti(kv, "n_rows", 20);
  g.validate();
  return g;
}

deter::TimeBinning binning_from_kv(const std::map<std::string, std::string>& kv) {
  deter::TimeBinning b;
  if (auto it = kv.find("epoch"); it != kv.end()) {
    auto ts = deter::parse_iso8601(it->second);
    if (!ts) throw std::runtime_error("bad epoch timestamp: " + it->second);
    b.epoch = *ts;
  }
  b.bin_length_days = geti(kv, "bin_length_days", 91);
  b.n_bins = geti(kv, "n_bins", 48);
  b.validate();
  return b;
}

deter::LagSpec lag_from_kv(const std::map<std::string, std::string>& kv,
                           int bin_length_days) {
  if (auto it = kv.find("pairing"); it != kv.end()) {
    auto lag = deter::lag_from_pairing(it->second, bin_length_days);
    if (!lag)
      throw std::runtime_error("unknown pairing '" + it->second +
                               "' for bin length " +
                               std::to_string(bin_length_days));
    return *lag;
  }
  deter::LagSpec lag{geti(kv, "lag_k", 1)};
  lag.validate();
  return lag;
}

deter::FitConfig fit_config_from_kv(const std::map<std::string, std::string>& kv) {
  deter::FitConfig fc;
  fc.adam.learning_rate = getd(kv, "learning_rate", fc.adam.learning_rate);
  fc.adam.beta1 = getd(kv, "beta1", fc.adam.beta1);
  fc.adam.beta2 = getd(kv, "beta2", fc.adam.beta2);
  fc.adam.epsilon = getd(kv, "epsilon", fc.adam.epsilon);
  fc.adam.max_iterations = geti(kv, "max_iterations", fc.adam.max_iterations);
  fc.adam.tolerance = getd(kv, "tolerance", fc.adam.tolerance);
  fc.l2_attractiveness = getd(kv, "l2_attractiveness", fc.l2_attractiveness);
  return fc;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const CommonOpts& common) {
  auto kv = load_config(common);
  deter::SimConfig cfg;
  deter::apply_sim_config(cfg, kv);
  if (common.seed) cfg.seed = *common.seed;
  cfg.validate();

  deter::SimOutput out = deter::simulate(cfg);
  fs::path dir = ensure_out_dir(common);
  deter::raster_to_csv(out.effort, (dir / "effort.csv").string());
  deter::raster_to_csv(out.obs, (dir / "observations.csv").string());
  std::ofstream truth(dir / "truth.json");
  truth << deter::ground_truth_json(cfg, out).dump(2) << "\n";

  auto resolved = kv;
  json j = deter::sim_config_to_json(cfg);
  for (auto& [k, v] : j.items())
    resolved[k] = v.is_string() ? v.get<std::string>() : v.dump();
  write_resolved(dir, "simulate", resolved);
  std::cerr << "simulate: wrote effort.csv, observations.csv, truth.json to "
            << dir << "\n";
  return 0;
}

int cmd_ingest(const CommonOpts& common, const std::string& waypoints_path,
               const std::string& observations_path) {
  auto kv = load_config(common);
  deter::GridSpec grid = grid_from_kv(kv);
  deter::TimeBinning binning = binning_from_kv(kv);
  const std::int64_t max_time_gap_s =
      60 * geti(kv, "max_time_gap_minutes", 30);
  const double max_dist_gap_m = getd(kv, "max_dist_gap_m", 5000.0);

  deter::IngestReport report;
  auto waypoints = deter::waypoints_from_csv(waypoints_path, &report);
  if (report.waypoints_kept == 0) {
    std::cerr << "ingest: no valid waypoints in " << waypoints_path << "\n";
    return 2;
  }
  auto tracks = deter::segment_tracks(std::move(waypoints), max_time_gap_s,
                                      max_dist_gap_m, &report);
  deter::EffortRaster effort =
      deter::rasterize_effort(tracks, grid, binning, &report);

  deter::ObservationRaster obs(grid, binning);
  if (!observations_path.empty()) {
    auto records = deter::observations_from_csv(observations_path, &report);
    obs = deter::bin_observations(records, grid, binning, &report);
  }

  fs::path dir = ensure_out_dir(common);
  deter::raster_to_csv(effort, (dir / "effort.csv").string());
  deter::raster_to_csv(obs, (dir / "observations.csv").string());
  std::ofstream rep(dir / "ingest_report.txt");
  rep << report.summary();
  write_resolved(dir, "ingest", kv);
  std::cerr << report.summary();
  std::cerr << "ingest: wrote effort.csv, observations.csv to " << dir << "\n";
  return 0;
}

int cmd_panel(const CommonOpts& common, const std::string& effort_path,
              const std::string& observations_path, int neighbor_window) {
  auto kv = load_config(common);
  deter::GridSpec grid = grid_from_kv(kv);
  deter::TimeBinning binning = binning_from_kv(kv);
  auto effort = deter::raster_from_csv<double>(effort_path, grid, binning);
  auto obs = deter::raster_from_csv<long>(observations_path, grid, binning);
  deter::LagSpec lag = lag_from_kv(kv, binning.bin_length_days);
  std::optional<deter::NeighborSpec> nbr;
  if (neighbor_window > 0) nbr = deter::NeighborSpec{neighbor_window};

  auto [panel, stats] = deter::assemble_panel(effort, obs, lag, nbr);
  fs::path dir = ensure_out_dir(common);
  deter::panel_to_csv(panel, grid, (dir / "panel.csv").string());
  deter::stats_to_csv(stats, panel.has_neighbors,
                      (dir / "normalization.csv").string());
  write_resolved(dir, "panel", kv);
  std::cerr << "panel: " << panel.rows.size() << " rows ("
            << panel.n_cells << " cells, lag k=" << lag.k << ")\n";
  return 0;
}

int cmd_fit(const CommonOpts& common, const std::string& effort_path,
            const std::string& observations_path,
            const std::string& variant_name, int neighbor_window) {
  auto kv = load_config(common);
  deter::GridSpec grid = grid_from_kv(kv);
  deter::TimeBinning binning = binning_from_kv(kv);
  auto effort = deter::raster_from_csv<double>(effort_path, grid, binning);
  auto obs = deter::raster_from_csv<long>(observations_path, grid, binning);
  deter::LagSpec lag = lag_from_kv(kv, binning.bin_length_days);
  auto variant = deter::parse_variant(
      variant_name.empty() ? gets(kv, "variant", "past_effort") : variant_name);
  if (!variant) throw CLI::ValidationError("unknown variant");

  std::optional<deter::NeighborSpec> nbr;
  if (*variant == deter::ModelVariant::PastIllegalNeighbors) {
    int w = neighbor_window > 0 ? neighbor_window : geti(kv, "neighbor_window", 3);
    nbr = deter::NeighborSpec{w};
  }
  auto [panel, stats] = deter::assemble_panel(effort, obs, lag, nbr);

  deter::FitConfig fc = fit_config_from_kv(kv);
  if (common.seed) fc.seed = *common.seed;
  deter::FitResult result = deter::fit(panel, *variant, fc);

  std::string label = gets(kv, "pairing", std::to_string(lag.k) + "x" +
                                              std::to_string(binning.bin_length_days) + "d");
  fs::path dir = ensure_out_dir(common);
  json j = deter::fit_result_to_json(result, *variant, fc);
  j["pairing"] = label;
  std::ofstream(dir / "fit.json") << j.dump(2) << "\n";
  std::string table = deter::summarize(result, *variant, label);
  std::ofstream(dir / "table.csv") << table;
  std::ofstream(dir / "table.txt") << deter::summarize_text(
      {deter::summarize_header(*variant),
       deter::summarize_row(result, *variant, label)});
  write_resolved(dir, "fit", kv);
  std::cerr << "fit: " << deter::variant_name(*variant) << ", "
            << result.iterations << " iterations, nll "
            << result.final_nll << "\n"
            << table;
  return 0;
}

int cmd_recover(const CommonOpts& common, int n_seeds, double tolerance) {
  if (n_seeds < 1) throw CLI::ValidationError("--seeds must be >= 1");
  auto kv = load_config(common);
  deter::SimConfig cfg;
  cfg.policy = deter::PatrolPolicy::Surge;  // identifiable effort variation
  deter::apply_sim_config(cfg, kv);
  if (common.seed) cfg.seed = *common.seed;
  cfg.validate();
  if (cfg.variant != deter::ModelVariant::PastEffort)
    throw CLI::ValidationError("recover checks the past-effort variant");

  deter::FitConfig fc = fit_config_from_kv(kv);
  // small fitting panels push mean-scale likelihood below the default
  // penalty weight, which would shrink beta; use a lighter default here
  if (kv.find("l2_attractiveness") == kv.end()) fc.l2_attractiveness = 1.2e-5;

  fs::path dir = ensure_out_dir(common);
  std::ofstream rep(dir / "recover_report.txt");
  bool all_ok = true;
  std::vector<double> betas, gammas;
  for (int s = 0; s < n_seeds; ++s) {
    deter::SimConfig run = cfg;
    run.seed = cfg.seed + static_cast<std::uint64_t>(s);
    deter::SimOutput out = deter::simulate(run);
    auto [panel, stats] =
        deter::assemble_panel(out.effort, out.obs, deter::LagSpec{run.lag_k});
    deter::FitResult r = deter::fit(panel, run.variant, fc);
    const double eb = r.params.beta - run.beta;
    const double eg = r.params.gamma - run.gamma;
    const bool ok = std::fabs(eb) <= tolerance && std::fabs(eg) <= tolerance &&
                    (run.beta == 0.0 || (r.params.beta > 0) == (run.beta > 0)) &&
                    (run.gamma == 0.0 || (r.params.gamma > 0) == (run.gamma > 0));
    all_ok = all_ok && ok;
    betas.push_back(r.params.beta);
    gammas.push_back(r.params.gamma);
    char line[256];
    std::snprintf(line, sizeof(line),
                  "seed %llu  beta %.4f (err %+.4f)  gamma %.4f (err %+.4f)  %s\n",
                  static_cast<unsigned long long>(run.seed), r.params.beta, eb,
                  r.params.gamma, eg, ok ? "ok" : "FAIL");
    rep << line;
    std::cerr << line;
  }
  auto spread = [](const std::vector<double>& v) {
    double m = 0, ss = 0;
    for (double x : v) m += x;
    m /= double(v.size());
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / double(v.size()));
  };
  const bool wide = n_seeds > 1 && (spread(betas) > tolerance ||
                                    spread(gammas) > tolerance);
  if (wide) {
    rep << "WIDE-VARIANCE: estimate spread across seeds exceeds the tolerance; "
           "panel is too small for recovery at this tolerance\n";
    std::cerr << "WIDE-VARIANCE\n";
  }
  rep << (all_ok && !wide ? "PASS\n" : "FAIL\n");
  std::cerr << (all_ok && !wide ? "recover: PASS\n" : "recover: FAIL\n");
  write_resolved(dir, "recover", kv);
  return all_ok && !wide ? 0 : 3;
}

int cmd_gam(const CommonOpts& common, const std::string& panel_path,
            const std::string& features_path,
            std::vector<std::string> features) {
  auto kv = load_config(common);
  deter::csv::Table panel_csv = deter::csv::read_file(panel_path);
  // joinable static features are optional; effort covariates come from the panel
  std::optional<deter::gam::FeatureTable> statics;
  std::map<std::pair<int, int>, std::size_t> static_row;
  if (!features_path.empty()) {
    if (!fs::exists(features_path))
      throw std::runtime_error("features file not found: " + features_path);
    statics = deter::gam::feature_table_from_csv(features_path);
    deter::csv::Table raw = deter::csv::read_file(features_path);
    for (std::size_t i = 0; i < raw.rows.size(); ++i)
      static_row[{std::stoi(raw.rows[i][0]), std::stoi(raw.rows[i][1])}] = i;
  }

  deter::gam::FeatureTable t;
  t.names = {"curr_effort", "past_effort"};
  if (statics)
    t.names.insert(t.names.end(), statics->names.begin(), statics->names.end());
  t.columns.resize(t.names.size());
  std::vector<std::uint8_t> y;

  auto col_of = [&](const char* name) {
    for (std::size_t i = 0; i < panel_csv.header.size(); ++i)
      if (panel_csv.header[i] == name) return static_cast<int>(i);
    throw std::runtime_error(std::string("panel is missing column ") + name);
  };
  const int c_col = col_of("cell_col"), c_row = col_of("cell_row"),
            c_y = col_of("y"), c_curr = col_of("curr_effort"),
            c_past = col_of("past_effort");
  for (const auto& row : panel_csv.rows) {
    y.push_back(row[c_y] == "1" ? 1 : 0);
    t.columns[0].push_back(deter::csv::parse_double(row[c_curr]));
    t.columns[1].push_back(deter::csv::parse_double(row[c_past]));
    if (statics) {
      auto it = static_row.find(
          {std::stoi(row[c_col]), std::stoi(row[c_row])});
      if (it == static_row.end())
        throw std::runtime_error("panel cell missing from features file");
      for (std::size_t j = 0; j < statics->names.size(); ++j)
        t.columns[2 + j].push_back(statics->columns[j][it->second]);
    }
  }
  t.n_rows = y.size();

  deter::gam::GamSpec spec;
  spec.features = features.empty() ? t.names : features;
  spec.default_lambda = getd(kv, "lambda", 1.0);
  for (const auto& f : spec.features) {
    std::string key = "lambda_" + f;
    if (auto it = kv.find(key); it != kv.end())
      spec.lambda[f] = deter::csv::parse_double(it->second);
  }

  deter::gam::GamFit fit = deter::gam::fit_gam(t, y, spec);
  fs::path dir = ensure_out_dir(common);
  std::vector<deter::gam::TermSignificance> sig;
  for (const auto& f : spec.features) {
    auto curve = deter::gam::component_curve(fit, f);
    deter::gam::curve_to_csv(curve, (dir / ("gam_" + f + ".csv")).string());
    sig.push_back(deter::gam::term_significance(fit, t, y, spec, f));
  }
  std::string sig_table = deter::gam::significance_table(sig);
  std::ofstream(dir / "gam_significance.txt") << sig_table;
  write_resolved(dir, "gam", kv);

  std::cerr << sig_table;
  for (const char* f : {"curr_effort", "past_effort"}) {
    if (std::find(spec.features.begin(), spec.features.end(), f) ==
        spec.features.end())
      continue;
    double slope = deter::gam::component_linear_slope(fit, t, f);
    std::cerr << "component slope of " << f << ": " << slope << " ("
              << (slope < 0 ? "negative" : "positive") << ")\n";
  }
  return 0;
}

int cmd_report(const CommonOpts& common, const std::vector<std::string>& fits) {
  if (fits.empty()) throw CLI::ValidationError("report needs at least one fit.json");
  std::vector<std::string> lines;
  std::optional<std::string> header;
  for (const auto& path : fits) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    json j = json::parse(in);
    auto variant = deter::parse_variant(j.at("variant").get<std::string>());
    if (!variant) throw std::runtime_error("bad variant in " + path);
    deter::FitResult r;
    r.params.beta = j["coefficients"]["beta"];
    r.params.gamma = j["coefficients"]["gamma"];
    r.params.rho = j["coefficients"]["rho"];
    r.params.eta = j["coefficients"]["eta"];
    r.mean_a = j["a_mean"];
    std::string h = deter::summarize_header(*variant);
    if (header && *header != h)
      throw std::runtime_error("cannot mix model variants in one report table");
    header = h;
    lines.push_back(deter::summarize_row(
        r, *variant, j.value("pairing", std::string("-"))));
  }
  std::vector<std::string> all{*header};
  all.insert(all.end(), lines.begin(), lines.end());
  fs::path dir = ensure_out_dir(common);
  std::ofstream csv_out(dir / "report.csv");
  for (const auto& l : all) csv_out << l << "\n";
  std::string text = deter::summarize_text(all);
  std::ofstream(dir / "report.txt") << text;
  std::cerr << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"patrol-deterrence analysis pipeline"};
  app.require_subcommand(1);

  CommonOpts c_sim, c_ing, c_pan, c_fit, c_rec, c_gam, c_rep;

  auto* sim = app.add_subcommand("simulate", "generate a synthetic park");
  add_common(sim, c_sim);

  auto* ing = app.add_subcommand("ingest", "rasterize waypoints and observations");
  add_common(ing, c_ing);
  std::string waypoints_path, observations_path;
  ing->add_option("--waypoints", waypoints_path, "waypoint CSV")
      ->required()
      ->check(CLI::ExistingFile);
  ing->add_option("--observations", observations_path, "observation CSV")
      ->check(CLI::ExistingFile);

  auto* pan = app.add_subcommand("panel", "build regression rows from rasters");
  add_common(pan, c_pan);
  std::string effort_path, obs_raster_path;
  int neighbor_window = 0;
  pan->add_option("--effort", effort_path, "effort raster CSV")
      ->required()
      ->check(CLI::ExistingFile);
  pan->add_option("--observations", obs_raster_path, "observation raster CSV")
      ->required()
      ->check(CLI::ExistingFile);
  pan->add_option("--neighbor-window", neighbor_window,
                  "odd window size; 0 disables the neighbor covariate");

  auto* fitc = app.add_subcommand("fit", "fit a deterrence model");
  add_common(fitc, c_fit);
  std::string fit_effort, fit_obs, fit_variant;
  int fit_neighbor_window = 0;
  fitc->add_option("--effort", fit_effort, "effort raster CSV")
      ->required()
      ->check(CLI::ExistingFile);
  fitc->add_option("--observations", fit_obs, "observation raster CSV")
      ->required()
      ->check(CLI::ExistingFile);
  fitc->add_option("--variant", fit_variant,
                   "past_effort | past_illegal | past_illegal_neighbors");
  fitc->add_option("--neighbor-window", fit_neighbor_window, "odd window size");

  auto* rec = app.add_subcommand("recover", "simulate-and-refit closure check");
  add_common(rec, c_rec);
  int n_seeds = 10;
  double tolerance = 0.05;
  rec->add_option("--seeds", n_seeds, "number of seeds");
  rec->add_option("--tolerance", tolerance, "coefficient error tolerance");

  auto* gamc = app.add_subcommand("gam", "fit smooth component curves");
  add_common(gamc, c_gam);
  std::string panel_path, features_path;
  std::vector<std::string> gam_features;
  gamc->add_option("--panel", panel_path, "panel CSV")
      ->required()
      ->check(CLI::ExistingFile);
  gamc->add_option("--features", features_path, "per-cell feature CSV");
  gamc->add_option("--feature", gam_features, "subset of features to smooth");

  auto* repc = app.add_subcommand("report", "combine fit results into a table");
  add_common(repc, c_rep);
  std::vector<std::string> fit_jsons;
  repc->add_option("--fit", fit_jsons, "fit.json files");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return cmd_simulate(c_sim);
    if (ing->parsed()) return cmd_ingest(c_ing, waypoints_path, observations_path);
    if (pan->parsed())
      return cmd_panel(c_pan, effort_path, obs_raster_path, neighbor_window);
    if (fitc->parsed())
      return cmd_fit(c_fit, fit_effort, fit_obs, fit_variant,
                     fit_neighbor_window);
    if (rec->parsed()) return cmd_recover(c_rec, n_seeds, tolerance);
    if (gamc->parsed())
      return cmd_gam(c_gam, panel_path, features_path, gam_features);
    if (repc->parsed()) return cmd_report(c_rep, fit_jsons);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
