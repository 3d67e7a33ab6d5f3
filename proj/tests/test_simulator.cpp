#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "deter/simulator.hpp"

using namespace deter;

TEST_CASE("uniform policy assigns the scale to every cell") {
  SimConfig cfg;
  cfg.n_cols = 5;
  cfg.n_rows = 4;
  cfg.effort_scale = 2.0;
  Rng rng(1);
  std::vector<long> history(20, 0);
  auto effort = patrol_policy_effort(history, cfg, rng);
  REQUIRE(effort.size() == 20);
  for (double e : effort) CHECK(e == 2.0);
}

TEST_CASE("reactive policy is uniform on an all-zero history") {
  SimConfig cfg;
  cfg.n_cols = 4;
  cfg.n_rows = 4;
  cfg.policy = PatrolPolicy::Reactive;
  cfg.effort_scale = 1.5;
  Rng rng(1);
  std::vector<long> history(16, 0);
  auto effort = patrol_policy_effort(history, cfg, rng);
  for (double e : effort) CHECK(e == Catch::Approx(1.5).margin(1e-12));
}

TEST_CASE("reactive policy conserves the budget and favors hot cells") {
  SimConfig cfg;
  cfg.n_cols = 4;
  cfg.n_rows = 4;
  cfg.policy = PatrolPolicy::Reactive;
  cfg.effort_scale = 2.0;
  Rng rng(1);
  std::vector<long> history(16, 0);
  history[3] = 4;
  history[7] = 1;
  auto effort = patrol_policy_effort(history, cfg, rng);
  double total = 0.0;
  for (double e : effort) total += e;
  CHECK(total == Catch::Approx(16 * 2.0).margin(1e-9));
  CHECK(effort[3] > effort[7]);
  CHECK(effort[7] > effort[0]);
}

TEST_CASE("random policy draws exponential effort with the right mean") {
  SimConfig cfg;
  cfg.n_cols = 40;
  cfg.n_rows = 40;
  cfg.policy = PatrolPolicy::Random;
  cfg.effort_scale = 2.0;
  Rng rng(123);
  std::vector<long> history(1600, 0);
  auto effort = patrol_policy_effort(history, cfg, rng);
  double sum = 0.0;
  for (double e : effort) {
    REQUIRE(e >= 0.0);
    sum += e;
  }
  CHECK(std::fabs(sum / 1600.0 - 2.0) < 3.0 * 2.0 / std::sqrt(1600.0));
}

TEST_CASE("surge policy visits the three documented effort levels") {
  SimConfig cfg;
  cfg.policy = PatrolPolicy::Surge;
  cfg.n_cols = 10;
  cfg.n_rows = 10;
  cfg.n_bins = 200;
  cfg.surge_start_prob = 0.2;
  cfg.seed = 3;
  SimOutput out = simulate(cfg);
  int base = 0, rest = 0, surge = 0;
  for (double e : out.effort.values) {
    if (e == cfg.effort_scale) ++base;
    else if (e == 0.0) ++rest;
    else if (e == cfg.surge_mult * cfg.effort_scale) ++surge;
    else FAIL("unexpected effort level " << e);
  }
  CHECK(base > 0);
  CHECK(rest > 0);
  CHECK(surge > 0);
  // every zero-effort bin is immediately followed by a surge bin
  for (int cell = 0; cell < 100; ++cell)
    for (int t = 0; t + 1 < cfg.n_bins; ++t)
      if (out.effort.at(cell, t) == 0.0)
        REQUIRE(out.effort.at(cell, t + 1) ==
                cfg.surge_mult * cfg.effort_scale);
}

TEST_CASE("surge stationary frequencies match the declared moments") {
  SimConfig cfg;
  cfg.policy = PatrolPolicy::Surge;
  cfg.n_cols = 20;
  cfg.n_rows = 20;
  cfg.n_bins = 400;
  cfg.seed = 9;
  SimOutput out = simulate(cfg);
  double sum = 0.0, ss = 0.0;
  const double n = double(out.effort.values.size());
  for (double e : out.effort.values) {
    sum += e;
    ss += e * e;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(ss / n - mean * mean);
  CHECK(mean == Catch::Approx(out.declared.curr_effort.mean).margin(0.02));
  CHECK(sd == Catch::Approx(out.declared.curr_effort.stddev).margin(0.03));
}

TEST_CASE("identical seeds reproduce identical outputs") {
  SimConfig cfg;
  cfg.policy = PatrolPolicy::Surge;
  cfg.n_cols = 8;
  cfg.n_rows = 8;
  cfg.n_bins = 24;
  cfg.seed = 77;
  SimOutput a = simulate(cfg);
  SimOutput b = simulate(cfg);
  CHECK(a.effort.values == b.effort.values);
  CHECK(a.obs.values == b.obs.values);
  CHECK(a.attractiveness == b.attractiveness);
  REQUIRE(a.generating_rows.size() == b.generating_rows.size());
  for (std::size_t i = 0; i < a.generating_rows.size(); ++i) {
    CHECK(a.generating_rows[i].curr_effort == b.generating_rows[i].curr_effort);
    CHECK(a.generating_rows[i].y == b.generating_rows[i].y);
  }
}

TEST_CASE("extreme deterrence lowers detections against a paired seed") {
  SimConfig off;
  off.n_cols = 15;
  off.n_rows = 15;
  off.n_bins = 40;
  off.gamma = 0.0;
  off.seed = 4;
  // raw-scale declared moments so the past-effort term is active even
  // under uniform patrols
  DeclaredStats d;
  off.declared = d;
  SimConfig on = off;
  on.gamma = -10.0;
  SimOutput a = simulate(off);
  SimOutput b = simulate(on);
  long detections_off = 0, detections_on = 0;
  for (int cell = 0; cell < 225; ++cell)
    for (int t = 1; t < off.n_bins; ++t) {
      detections_off += a.obs.at(cell, t);
      detections_on += b.obs.at(cell, t);
    }
  CHECK(detections_on < detections_off);
  CHECK(detections_off > 0);
}

TEST_CASE("detection rate concentrates at logistic(mean_a) without signal") {
  SimConfig cfg;
  cfg.beta = 0.0;
  cfg.gamma = 0.0;
  cfg.std_a = 0.0;
  cfg.mean_a = -3.0;
  cfg.n_cols = 20;
  cfg.n_rows = 20;
  cfg.n_bins = 48;
  cfg.seed = 12;
  SimOutput out = simulate(cfg);
  const double p = 1.0 / (1.0 + std::exp(3.0));
  const double n = double(out.obs.values.size());
  double rate = double(out.obs.total()) / n;
  CHECK(std::fabs(rate - p) < 3.0 * std::sqrt(p * (1.0 - p) / n));
}

TEST_CASE("default config keeps detections rare but present") {
  for (std::uint64_t seed : {1, 2, 3}) {
    SimConfig cfg;
    cfg.seed = seed;
    SimOutput out = simulate(cfg);
    double rate = double(out.obs.total()) / double(out.obs.values.size());
    CHECK(rate >= 0.001);
    CHECK(rate <= 0.05);
  }
}

TEST_CASE("generating rows agree with the rasters and declared moments") {
  SimConfig cfg;
  cfg.policy = PatrolPolicy::Surge;
  cfg.n_cols = 6;
  cfg.n_rows = 6;
  cfg.n_bins = 20;
  cfg.lag_k = 2;
  cfg.seed = 21;
  SimOutput out = simulate(cfg);
  REQUIRE(out.generating_rows.size() ==
          static_cast<std::size_t>(36 * (cfg.n_bins - cfg.lag_k)));
  for (const auto& row : out.generating_rows) {
    double curr = out.effort.at(row.cell, row.bin);
    double past = 0.0;
    for (int j = 1; j <= cfg.lag_k; ++j)
      past += out.effort.at(row.cell, row.bin - j);
    CHECK(row.curr_effort ==
          Catch::Approx((curr - out.declared.curr_effort.mean) /
                        out.declared.curr_effort.stddev));
    CHECK(row.past_effort ==
          Catch::Approx((past - out.declared.past_effort.mean) /
                        out.declared.past_effort.stddev));
    CHECK(int(row.y) == int(out.obs.at(row.cell, row.bin)));
  }
}

TEST_CASE("invalid variant and coefficient combinations are rejected") {
  SimConfig cfg;
  cfg.rho = -0.1;  // not a past-effort coefficient
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  SimConfig cfg2;
  cfg2.variant = ModelVariant::PastIllegal;
  cfg2.gamma = -0.2;
  CHECK_THROWS_AS(cfg2.validate(), std::invalid_argument);
  SimConfig cfg3;
  cfg3.std_a = -1.0;
  CHECK_THROWS_AS(cfg3.validate(), std::invalid_argument);
}

TEST_CASE("config files apply keys and reject unknown enums") {
  auto dir = std::filesystem::temp_directory_path();
  auto path = dir / "deter_sim_cfg.txt";
  {
    std::ofstream out(path);
    out << "# comment line\n";
    out << "n_cols = 7\n";
    out << "beta=1.5\n";
    out << "policy = surge   # trailing comment\n";
    out << "seed = 99\n";
  }
  SimConfig cfg;
  cfg.gamma = -0.1;
  apply_sim_config(cfg, read_kv_file(path.string()));
  CHECK(cfg.n_cols == 7);
  CHECK(cfg.beta == 1.5);
  CHECK(cfg.policy == PatrolPolicy::Surge);
  CHECK(cfg.seed == 99);
  std::filesystem::remove(path);

  std::map<std::string, std::string> bad{{"policy", "zigzag"}};
  SimConfig cfg2;
  CHECK_THROWS_AS(apply_sim_config(cfg2, bad), std::runtime_error);
}
