#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string cli() {
  const char* p = std::getenv("DETER_CLI");
  REQUIRE(p != nullptr);
  return p;
}

int run(const std::string& args) {
  std::string cmd = cli() + " " + args + " 2>/dev/null";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = fs::temp_directory_path() / ("deter_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write_sim_config(const fs::path& p) {
  std::ofstream out(p);
  out << "n_cols = 6\nn_rows = 6\nn_bins = 16\npolicy = surge\nseed = 5\n";
}

}  // namespace

TEST_CASE("simulate writes rasters and truth, byte-identical across runs") {
  fs::path d1 = fresh_dir("sim1"), d2 = fresh_dir("sim2");
  fs::path cfg = d1 / "cfg.txt";
  write_sim_config(cfg);
  REQUIRE(run("simulate --config " + cfg.string() + " --out-dir " +
              d1.string()) == 0);
  REQUIRE(run("simulate --config " + cfg.string() + " --out-dir " +
              d2.string()) == 0);
  for (const char* f : {"effort.csv", "observations.csv", "truth.json"}) {
    CHECK(fs::exists(d1 / f));
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  }
  CHECK(fs::exists(d1 / "simulate_config.txt"));
}

TEST_CASE("simulate, panel, fit, report pipeline is deterministic end to end") {
  fs::path da = fresh_dir("pipe_a"), db = fresh_dir("pipe_b");
  for (const fs::path& d : {da, db}) {
    fs::path cfg = d / "cfg.txt";
    write_sim_config(cfg);
    REQUIRE(run("simulate --config " + cfg.string() + " --out-dir " +
                d.string()) == 0);
    REQUIRE(run("panel --config " + cfg.string() + " --effort " +
                (d / "effort.csv").string() + " --observations " +
                (d / "observations.csv").string() + " --out-dir " +
                d.string()) == 0);
    REQUIRE(run("fit --config " + cfg.string() + " --effort " +
                (d / "effort.csv").string() + " --observations " +
                (d / "observations.csv").string() + " --out-dir " +
                d.string()) == 0);
    REQUIRE(run("report --fit " + (d / "fit.json").string() + " --out-dir " +
                d.string()) == 0);
  }
  for (const char* f :
       {"panel.csv", "normalization.csv", "fit.json", "table.csv",
        "report.csv", "report.txt"}) {
    CHECK(slurp(da / f) == slurp(db / f));
  }
  // the report table has a header plus one coefficient row
  std::string report = slurp(da / "report.csv");
  CHECK(report.rfind("pairing,a_mean,beta,gamma\n", 0) == 0);
}

TEST_CASE("ingest reports dropped rows and rasterizes the rest") {
  fs::path d = fresh_dir("ingest");
  fs::path wp = d / "waypoints.csv";
  {
    std::ofstream out(wp);
    out << "patrol_id,timestamp,x_m,y_m\n";
    // a straight 1-km walk within one bin, all inside cell (0, 0)
    out << "p1,2021-01-01T08:00:00Z,100,500\n";
    out << "p1,2021-01-01T08:10:00Z,600,500\n";
    out << "p1,2021-01-01T08:20:00Z,1100,500\n";  // crosses into cell (1, 0)
    out << "p1,bad-timestamp,700,500\n";
  }
  fs::path obs = d / "obs.csv";
  {
    std::ofstream out(obs);
    out << "timestamp,x_m,y_m,category\n";
    out << "2021-01-02T12:00:00Z,150,550,snare\n";
    out << "2021-01-02T12:30:00Z,1500,500,cartridge\n";
    out << "2021-01-02T12:45:00Z,99999,500,snare\n";  // off-grid
  }
  fs::path cfg = d / "cfg.txt";
  {
    std::ofstream out(cfg);
    out << "n_cols = 4\nn_rows = 4\nn_bins = 4\nbin_length_days = 30\n";
    out << "epoch = 2021-01-01T00:00:00Z\n";
  }
  REQUIRE(run("ingest --config " + cfg.string() + " --waypoints " +
              wp.string() + " --observations " + obs.string() + " --out-dir " +
              d.string()) == 0);
  std::string report = slurp(d / "ingest_report.txt");
  CHECK(report.find("waypoints read:        4") != std::string::npos);
  CHECK(report.find("waypoints malformed:   1") != std::string::npos);
  CHECK(report.find("waypoints kept:        3") != std::string::npos);
  // 1000 m of track: 900 m in cell (0,0), 100 m in cell (1,0), bin 0
  std::string effort = slurp(d / "effort.csv");
  std::map<std::string, double> cells;
  {
    std::istringstream in(effort);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      auto comma = line.rfind(',');
      cells[line.substr(0, comma)] = std::stod(line.substr(comma + 1));
    }
  }
  REQUIRE(cells.size() == 2);
  CHECK(cells["0,0,0"] == Catch::Approx(0.9).margin(1e-9));
  CHECK(cells["1,0,0"] == Catch::Approx(0.1).margin(1e-9));
  std::string obs_raster = slurp(d / "observations.csv");
  CHECK(obs_raster.find("0,0,0,1") != std::string::npos);
  CHECK(obs_raster.find("1,0,0,1") != std::string::npos);
  CHECK(report.find("observations off-grid: 1") != std::string::npos);
}

TEST_CASE("ingest with no valid waypoints exits with a data error") {
  fs::path d = fresh_dir("ingest_bad");
  fs::path wp = d / "waypoints.csv";
  {
    std::ofstream out(wp);
    out << "patrol_id,timestamp,x_m,y_m\n";
    out << "p1,nonsense,1,2\n";
  }
  CHECK(run("ingest --waypoints " + wp.string() + " --out-dir " +
            d.string()) == 2);
}

TEST_CASE("recover flags unstable estimates on tiny panels") {
  fs::path d = fresh_dir("recover_tiny");
  fs::path cfg = d / "cfg.txt";
  {
    std::ofstream out(cfg);
    out << "n_cols = 2\nn_rows = 2\nn_bins = 6\n";
    out << "mean_a = -2\nsurge_start_prob = 0.5\nseed = 1\n";
  }
  int code = run("recover --config " + cfg.string() + " --seeds 3 --out-dir " +
                 d.string());
  CHECK(code == 3);
  std::string report = slurp(d / "recover_report.txt");
  CHECK(report.find("WIDE-VARIANCE") != std::string::npos);
  CHECK(report.find("FAIL") != std::string::npos);
}

TEST_CASE("recover rejects a zero seed count as a usage error") {
  fs::path d = fresh_dir("recover_zero");
  CHECK(run("recover --seeds 0 --out-dir " + d.string()) == 1);
}

TEST_CASE("gam emits one curve per feature and a significance table") {
  fs::path d = fresh_dir("gam");
  fs::path cfg = d / "cfg.txt";
  {
    std::ofstream out(cfg);
    out << "n_cols = 8\nn_rows = 8\nn_bins = 24\npolicy = surge\n";
    out << "mean_a = -3\nseed = 2\n";
  }
  REQUIRE(run("simulate --config " + cfg.string() + " --out-dir " +
              d.string()) == 0);
  REQUIRE(run("panel --config " + cfg.string() + " --effort " +
              (d / "effort.csv").string() + " --observations " +
              (d / "observations.csv").string() + " --out-dir " +
              d.string()) == 0);
  REQUIRE(run("gam --panel " + (d / "panel.csv").string() + " --out-dir " +
              d.string()) == 0);
  for (const char* f : {"gam_curr_effort.csv", "gam_past_effort.csv",
                        "gam_significance.txt"}) {
    CHECK(fs::exists(d / f));
  }
  std::string curve = slurp(d / "gam_curr_effort.csv");
  CHECK(curve.rfind("feature,x,estimate,se\n", 0) == 0);
  CHECK(slurp(d / "gam_significance.txt").find("APPROXIMATE") !=
        std::string::npos);
}

TEST_CASE("gam names the missing features file in its error") {
  fs::path d = fresh_dir("gam_missing");
  fs::path panel = d / "panel.csv";
  {
    std::ofstream out(panel);
    out << "cell_col,cell_row,bin_index,y,curr_effort,past_effort,past_illegal,"
           "past_neighbors\n";
    out << "0,0,1,0,0.1,-0.2,0.0,0.0\n";
  }
  std::string cmd = cli() + " gam --panel " + panel.string() +
                    " --features /nonexistent/features.csv --out-dir " +
                    d.string() + " 2>" + (d / "err.txt").string();
  int code = WEXITSTATUS(std::system(cmd.c_str()));
  CHECK(code == 2);
  CHECK(slurp(d / "err.txt").find("/nonexistent/features.csv") !=
        std::string::npos);
}

TEST_CASE("unknown variants are a usage error") {
  fs::path d = fresh_dir("badvariant");
  fs::path cfg = d / "cfg.txt";
  write_sim_config(cfg);
  REQUIRE(run("simulate --config " + cfg.string() + " --out-dir " +
              d.string()) == 0);
  CHECK(run("fit --config " + cfg.string() + " --effort " +
            (d / "effort.csv").string() + " --observations " +
            (d / "observations.csv").string() + " --variant zigzag --out-dir " +
            d.string()) == 1);
}
