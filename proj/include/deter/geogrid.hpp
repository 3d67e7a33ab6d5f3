#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "deter/csv.hpp"
#include "deter/timeutil.hpp"

namespace deter {

// Spatial cell layout. Cell (c, r) covers the half-open square
// [origin_x + c*s, origin_x + (c+1)*s) x [origin_y + r*s, origin_y + (r+1)*s).
struct GridSpec {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double cell_size = 1000.0;  // meters
  int n_cols = 1;
  int n_rows = 1;

  void validate() const {
    if (cell_size <= 0) throw std::invalid_argument("cell_size must be > 0");
    if (n_cols < 1 || n_rows < 1)
      throw std::invalid_argument("grid dims must be >= 1");
  }

  int n_cells() const { return n_cols * n_rows; }

  int cell_index(int col, int row) const { return row * n_cols + col; }

  // Half-open convention on both axes.
  std::optional<int> locate(double x, double y) const {
    int c = static_cast<int>(std::floor((x - origin_x) / cell_size));
    int r = static_cast<int>(std::floor((y - origin_y) / cell_size));
    if (c < 0 || c >= n_cols || r < 0 || r >= n_rows) return std::nullopt;
    return cell_index(c, r);
  }
};

// Contiguous half-open time bins of fixed width in days.
struct TimeBinning {
  std::int64_t epoch = 0;       // Unix seconds, UTC
  int bin_length_days = 91;     // one of 30 / 91 / 365
  int n_bins = 1;

  void validate() const {
    if (bin_length_days != 30 && bin_length_days != 91 &&
        bin_length_days != 365)
      throw std::invalid_argument("bin_length_days must be 30, 91 or 365");
    if (n_bins < 1) throw std::invalid_argument("n_bins must be >= 1");
  }

  std::int64_t bin_seconds() const { return 86400LL * bin_length_days; }

  std::optional<int> bin_index(std::int64_t ts) const {
    std::int64_t d = ts - epoch;
    if (d < 0) return std::nullopt;
    std::int64_t b = d / bin_seconds();
    if (b >= n_bins) return std::nullopt;
    return static_cast<int>(b);
  }
};

struct Waypoint {
  std::string patrol_id;
  std::int64_t timestamp = 0;
  double x = 0.0;
  double y = 0.0;
};

struct PatrolTrack {
  std::string patrol_id;
  std::vector<Waypoint> points;  // >= 2, sorted by timestamp
};

enum class ObsCategory { Snare, Cartridge, TraditionalWeapon, PoacherEncounter, Other };

inline std::optional<ObsCategory> parse_category(const std::string& s) {
  if (s == "snare") return ObsCategory::Snare;
  if (s == "cartridge") return ObsCategory::Cartridge;
  if (s == "traditional_weapon") return ObsCategory::TraditionalWeapon;
  if (s == "poacher_encounter") return ObsCategory::PoacherEncounter;
  if (s == "other") return ObsCategory::Other;
  return std::nullopt;
}

struct ObservationRecord {
  std::int64_t timestamp = 0;
  double x = 0.0;
  double y = 0.0;
  ObsCategory category = ObsCategory::Other;
};

// Record-level drop accounting for an ingest pass.
struct IngestReport {
  std::size_t waypoints_read = 0;
  std::size_t waypoints_malformed = 0;
  std::size_t waypoints_kept = 0;
  std::size_t singleton_waypoints = 0;   // isolated points, no segment
  std::size_t segments_out_of_time = 0;  // segment start outside bin range
  std::size_t observations_read = 0;
  std::size_t observations_malformed = 0;
  std::size_t observations_out_of_bounds = 0;
  std::size_t observations_out_of_time = 0;
  std::size_t observations_kept = 0;

  std::string summary() const {
    std::ostringstream os;
    os << "ingest report\n"
       << "  waypoints read:        " << waypoints_read << "\n"
       << "  waypoints malformed:   " << waypoints_malformed << "\n"
       << "  waypoints kept:        " << waypoints_kept << "\n"
       << "  singleton waypoints:   " << singleton_waypoints << "\n"
       << "  segments out of time:  " << segments_out_of_time << "\n"
       << "  observations read:     " << observations_read << "\n"
       << "  observations malformed:" << observations_malformed << "\n"
       << "  observations off-grid: " << observations_out_of_bounds << "\n"
       << "  observations off-time: " << observations_out_of_time << "\n"
       << "  observations kept:     " << observations_kept << "\n";
    return os.str();
  }
};

// Dense (cell, bin) raster, cell-major storage.
template <typename T>
struct Raster {
  GridSpec grid;
  TimeBinning binning;
  std::vector<T> values;  // size n_cells * n_bins, index cell * n_bins + bin

  Raster() = default;
  Raster(const GridSpec& g, const TimeBinning& b)
      : grid(g), binning(b),
        values(static_cast<std::size_t>(g.n_cells()) * b.n_bins, T{}) {}

  T& at(int cell, int bin) {
    return values[static_cast<std::size_t>(cell) * binning.n_bins + bin];
  }
  const T& at(int cell, int bin) const {
    return values[static_cast<std::size_t>(cell) * binning.n_bins + bin];
  }

  T total() const {
    T s{};
    for (const T& v : values) s += v;
    return s;
  }
};

using EffortRaster = Raster<double>;       // km patrolled
using ObservationRaster = Raster<long>;    // detection counts

// ---------------------------------------------------------------------------
// Track segmentation
// ---------------------------------------------------------------------------

// Groups waypoints by patrol_id, sorts by timestamp and splits wherever a
// consecutive pair exceeds max_time_gap_s (seconds) or max_dist_gap_m
// (meters). Tracks with fewer than two points are dropped and counted.
inline std::vector<PatrolTrack> segment_tracks(std::vector<Waypoint> waypoints,
                                               std::int64_t max_time_gap_s,
                                               double max_dist_gap_m,
                                               IngestReport* report = nullptr) {
  std::map<std::string, std::vector<Waypoint>> by_patrol;
  for (auto& w : waypoints) {
    if (!std::isfinite(w.x) || !std::isfinite(w.y)) {
      if (report) ++report->waypoints_malformed;
      continue;
    }
    by_patrol[w.patrol_id].push_back(std::move(w));
  }

  std::vector<PatrolTrack> tracks;
  for (auto& [pid, pts] : by_patrol) {
    std::stable_sort(pts.begin(), pts.end(),
                     [](const Waypoint& a, const Waypoint& b) {
                       return a.timestamp < b.timestamp;
                     });
    PatrolTrack cur{pid, {}};
    auto flush = [&] {
      if (cur.points.size() >= 2) {
        tracks.push_back(std::move(cur));
      } else if (report) {
        report->singleton_waypoints += cur.points.size();
      }
      cur = PatrolTrack{pid, {}};
    };
    for (auto& p : pts) {
      if (!cur.points.empty()) {
        const Waypoint& prev = cur.points.back();
        double dx = p.x - prev.x, dy = p.y - prev.y;
        bool gap = (p.timestamp - prev.timestamp) > max_time_gap_s ||
                   std::hypot(dx, dy) > max_dist_gap_m;
        if (gap) flush();
      }
      cur.points.push_back(std::move(p));
    }
    flush();
  }
  return tracks;
}

// ---------------------------------------------------------------------------
// Segment clipping
// ---------------------------------------------------------------------------

struct CellLength {
  int col = 0;
  int row = 0;
  double length = 0.0;  // meters
};

// Portion of segment p0 -> p1 inside each grid cell it crosses. Parametric
// traversal: clip to the grid bounding box, collect all gridline crossing
// parameters, assign each sub-interval to the cell containing its midpoint.
inline std::vector<CellLength> clip_segment_to_cells(double x0, double y0,
                                                     double x1, double y1,
                                                     const GridSpec& grid) {
  std::vector<CellLength> out;
  const double dx = x1 - x0, dy = y1 - y0;
  const double len = std::hypot(dx, dy);
  if (len == 0.0) return out;

  const double gx0 = grid.origin_x;
  const double gy0 = grid.origin_y;
  const double gx1 = grid.origin_x + grid.n_cols * grid.cell_size;
  const double gy1 = grid.origin_y + grid.n_rows * grid.cell_size;

  // Slab clip to the grid bounding box.
  double t0 = 0.0, t1 = 1.0;
  auto clip_axis = [&](double p, double d, double lo, double hi) {
    if (d == 0.0) return p >= lo && p < hi;
    double ta = (lo - p) / d, tb = (hi - p) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    return true;
  };
  if (!clip_axis(x0, dx, gx0, gx1)) return out;
  if (!clip_axis(y0, dy, gy0, gy1)) return out;
  if (t0 >= t1) return out;

  // Crossing parameters with interior gridlines.
  std::vector<double> ts;
  ts.push_back(t0);
  ts.push_back(t1);
  if (dx != 0.0) {
    for (int c = 1; c < grid.n_cols; ++c) {
      double t = (gx0 + c * grid.cell_size - x0) / dx;
      if (t > t0 && t < t1) ts.push_back(t);
    }
  }
  if (dy != 0.0) {
    for (int r = 1; r < grid.n_rows; ++r) {
      double t = (gy0 + r * grid.cell_size - y0) / dy;
      if (t > t0 && t < t1) ts.push_back(t);
    }
  }
  std::sort(ts.begin(), ts.end());

  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    double ta = ts[i], tb = ts[i + 1];
    if (tb <= ta) continue;
    double tm = 0.5 * (ta + tb);
    auto cell = grid.locate(x0 + tm * dx, y0 + tm * dy);
    if (!cell) continue;  // grazing the far boundary
    int c = *cell % grid.n_cols;
    int r = *cell / grid.n_cols;
    double piece = (tb - ta) * len;
    if (!out.empty() && out.back().col == c && out.back().row == r) {
      out.back().length += piece;
    } else {
      out.push_back({c, r, piece});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rasterization
// ---------------------------------------------------------------------------

// Each consecutive waypoint pair contributes its clipped per-cell lengths
// (km) to the bin containing the segment's start timestamp.
inline EffortRaster rasterize_effort(const std::vector<PatrolTrack>& tracks,
                                     const GridSpec& grid,
                                     const TimeBinning& binning,
                                     IngestReport* report = nullptr) {
  grid.validate();
  binning.validate();
  EffortRaster raster(grid, binning);
  for (const auto& track : tracks) {
    for (std::size_t i = 0; i + 1 < track.points.size(); ++i) {
      const Waypoint& a = track.points[i];
      const Waypoint& b = track.points[i + 1];
      auto bin = binning.bin_index(a.timestamp);
      if (!bin) {
        if (report) ++report->segments_out_of_time;
        continue;
      }
      for (const CellLength& cl : clip_segment_to_cells(a.x, a.y, b.x, b.y, grid)) {
        raster.at(grid.cell_index(cl.col, cl.row), *bin) += cl.length / 1000.0;
      }
    }
  }
  return raster;
}

inline ObservationRaster bin_observations(
    const std::vector<ObservationRecord>& obs, const GridSpec& grid,
    const TimeBinning& binning, IngestReport* report = nullptr) {
  grid.validate();
  binning.validate();
  ObservationRaster raster(grid, binning);
  for (const auto& o : obs) {
    auto cell = grid.locate(o.x, o.y);
    if (!cell) {
      if (report) ++report->observations_out_of_bounds;
      continue;
    }
    auto bin = binning.bin_index(o.timestamp);
    if (!bin) {
      if (report) ++report->observations_out_of_time;
      continue;
    }
    ++raster.at(*cell, *bin);
    if (report) ++report->observations_kept;
  }
  return raster;
}

// ---------------------------------------------------------------------------
// CSV ingestion and export
// ---------------------------------------------------------------------------

// Waypoint CSV: patrol_id,timestamp,x_m,y_m
inline std::vector<Waypoint> waypoints_from_csv(const std::string& path,
                                                IngestReport* report = nullptr) {
  csv::Table t = csv::read_file(path);
  std::vector<Waypoint> out;
  for (const auto& row : t.rows) {
    if (report) ++report->waypoints_read;
    if (row.size() != 4) {
      if (report) ++report->waypoints_malformed;
      continue;
    }
    auto ts = parse_iso8601(row[1]);
    if (!ts) {
      if (report) ++report->waypoints_malformed;
      continue;
    }
    Waypoint w;
    w.patrol_id = row[0];
    w.timestamp = *ts;
    try {
      w.x = csv::parse_double(row[2]);
      w.y = csv::parse_double(row[3]);
    } catch (const std::exception&) {
      if (report) ++report->waypoints_malformed;
      continue;
    }
    if (!std::isfinite(w.x) || !std::isfinite(w.y)) {
      if (report) ++report->waypoints_malformed;
      continue;
    }
    if (report) ++report->waypoints_kept;
    out.push_back(std::move(w));
  }
  return out;
}

// Observation CSV: timestamp,x_m,y_m,category
inline std::vector<ObservationRecord> observations_from_csv(
    const std::string& path, IngestReport* report = nullptr) {
  csv::Table t = csv::read_file(path);
  std::vector<ObservationRecord> out;
  for (const auto& row : t.rows) {
    if (report) ++report->observations_read;
    if (row.size() != 4) {
      if (report) ++report->observations_malformed;
      continue;
    }
    auto ts = parse_iso8601(row[0]);
    auto cat = parse_category(row[3]);
    if (!ts || !cat) {
      if (report) ++report->observations_malformed;
      continue;
    }
    ObservationRecord o;
    o.timestamp = *ts;
    o.category = *cat;
    try {
      o.x = csv::parse_double(row[1]);
      o.y = csv::parse_double(row[2]);
    } catch (const std::exception&) {
      if (report) ++report->observations_malformed;
      continue;
    }
    if (!std::isfinite(o.x) || !std::isfinite(o.y)) {
      if (report) ++report->observations_malformed;
      continue;
    }
    out.push_back(o);
  }
  return out;
}

// Raster export CSV: cell_col,cell_row,bin_index,value -- nonzero entries only.
template <typename T>
void raster_to_csv(const Raster<T>& raster, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << "cell_col,cell_row,bin_index,value\n";
  for (int cell = 0; cell < raster.grid.n_cells(); ++cell) {
    for (int bin = 0; bin < raster.binning.n_bins; ++bin) {
      T v = raster.at(cell, bin);
      if (v == T{}) continue;
      out << (cell % raster.grid.n_cols) << ',' << (cell / raster.grid.n_cols)
          << ',' << bin << ',';
      if constexpr (std::is_floating_point_v<T>) {
        out << csv::fmt_double(v);
      } else {
        out << v;
      }
      out << '\n';
    }
  }
}

template <typename T>
Raster<T> raster_from_csv(const std::string& path, const GridSpec& grid,
                          const TimeBinning& binning) {
  Raster<T> raster(grid, binning);
  csv::Table t = csv::read_file(path);
  for (const auto& row : t.rows) {
    if (row.size() != 4) throw std::runtime_error("malformed raster row");
    int c = std::stoi(row[0]), r = std::stoi(row[1]), b = std::stoi(row[2]);
    if (c < 0 || c >= grid.n_cols || r < 0 || r >= grid.n_rows || b < 0 ||
        b >= binning.n_bins)
      throw std::runtime_error("raster index out of range");
    if constexpr (std::is_floating_point_v<T>) {
      raster.at(grid.cell_index(c, r), b) = csv::parse_double(row[3]);
    } else {
      raster.at(grid.cell_index(c, r), b) = std::stol(row[3]);
    }
  }
  return raster;
}

}  // namespace deter
