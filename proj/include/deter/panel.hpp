#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deter/csv.hpp"
#include "deter/geogrid.hpp"

namespace deter {

// Past window expressed as an integer multiple k of the current bin length,
// e.g. year/3mo -> k = 4.
struct LagSpec {
  int k = 1;

  void validate() const {
    if (k < 1) throw std::invalid_argument("lag multiple k must be >= 1");
  }
};

// Known pairing labels from the coefficient tables.
inline std::optional<LagSpec> lag_from_pairing(const std::string& pairing,
                                               int bin_length_days) {
  if (pairing == "1mo/1mo" && bin_length_days == 30) return LagSpec{1};
  if (pairing == "3mo/3mo" && bin_length_days == 91) return LagSpec{1};
  if (pairing == "year/1mo" && bin_length_days == 30) return LagSpec{12};
  if (pairing == "year/3mo" && bin_length_days == 91) return LagSpec{4};
  if (pairing == "year/year" && bin_length_days == 365) return LagSpec{1};
  return std::nullopt;
}

struct NeighborSpec {
  int window = 3;  // odd, one of 3 / 5 / 7

  void validate() const {
    if (window < 3 || window % 2 == 0)
      throw std::invalid_argument("neighbor window must be odd and >= 3");
  }
};

struct PanelRow {
  int cell = 0;
  int bin = 0;
  std::uint8_t y = 0;
  double curr_effort = 0.0;
  double past_effort = 0.0;
  double past_illegal = 0.0;
  double past_neighbors = 0.0;
};

struct CovariateStats {
  double mean = 0.0;
  double stddev = 1.0;
};

struct NormalizationStats {
  CovariateStats curr_effort;
  CovariateStats past_effort;
  CovariateStats past_illegal;
  CovariateStats past_neighbors;  // meaningful only when neighbors present
};

struct Panel {
  std::vector<PanelRow> rows;
  bool has_neighbors = false;
  int n_cells = 0;
};

// Windowed sum over the window x window block centered on each cell,
// excluding the center; out-of-grid neighbors contribute zero.
inline Raster<double> neighbor_sum(const ObservationRaster& raster,
                                   const NeighborSpec& spec) {
  spec.validate();
  Raster<double> out(raster.grid, raster.binning);
  const int h = spec.window / 2;
  const int ncols = raster.grid.n_cols, nrows = raster.grid.n_rows;
  for (int r = 0; r < nrows; ++r) {
    for (int c = 0; c < ncols; ++c) {
      const int cell = raster.grid.cell_index(c, r);
      for (int dr = -h; dr <= h; ++dr) {
        for (int dc = -h; dc <= h; ++dc) {
          if (dr == 0 && dc == 0) continue;
          int nc = c + dc, nr = r + dr;
          if (nc < 0 || nc >= ncols || nr < 0 || nr >= nrows) continue;
          const int ncell = raster.grid.cell_index(nc, nr);
          for (int b = 0; b < raster.binning.n_bins; ++b)
            out.at(cell, b) += static_cast<double>(raster.at(ncell, b));
        }
      }
    }
  }
  return out;
}

namespace detail {

inline CovariateStats column_stats(const std::vector<PanelRow>& rows,
                                   double PanelRow::* member,
                                   const char* name) {
  double sum = 0.0;
  for (const auto& r : rows) sum += r.*member;
  const double mean = sum / static_cast<double>(rows.size());
  double ss = 0.0;
  for (const auto& r : rows) {
    const double d = r.*member - mean;
    ss += d * d;
  }
  const double var = ss / static_cast<double>(rows.size());
  if (var <= 0.0)
    throw std::runtime_error(std::string("covariate has zero variance: ") + name);
  return {mean, std::sqrt(var)};
}

inline void standardize(std::vector<PanelRow>& rows, double PanelRow::* member,
                        const CovariateStats& s) {
  for (auto& r : rows) r.*member = (r.*member - s.mean) / s.stddev;
}

}  // namespace detail

// Builds regression rows for every cell and every bin t >= k:
//   y            = 1 iff obs(cell, t) >= 1
//   curr_effort  = effort(cell, t)
//   past_effort  = sum_{j=1..k} effort(cell, t-j)
//   past_illegal = sum_{j=1..k} obs(cell, t-j)
//   past_neighbors = sum_{j=1..k} neighbor_sum(obs)(cell, t-j)  (optional)
// then z-scores every covariate over the emitted rows.
inline std::pair<Panel, NormalizationStats> assemble_panel(
    const EffortRaster& effort, const ObservationRaster& obs,
    const LagSpec& lags, std::optional<NeighborSpec> neighbors = std::nullopt) {
  lags.validate();
  if (effort.grid.n_cols != obs.grid.n_cols ||
      effort.grid.n_rows != obs.grid.n_rows ||
      effort.binning.n_bins != obs.binning.n_bins)
    throw std::invalid_argument("effort and observation rasters disagree");
  const int k = lags.k;
  const int n_bins = effort.binning.n_bins;
  if (k >= n_bins)
    throw std::runtime_error("past window k exceeds available history");

  std::optional<Raster<double>> nbr;
  if (neighbors) nbr = neighbor_sum(obs, *neighbors);

  Panel panel;
  panel.has_neighbors = neighbors.has_value();
  panel.n_cells = effort.grid.n_cells();
  for (int cell = 0; cell < panel.n_cells; ++cell) {
    for (int t = k; t < n_bins; ++t) {
      PanelRow row;
      row.cell = cell;
      row.bin = t;
      row.y = obs.at(cell, t) >= 1 ? 1 : 0;
      row.curr_effort = effort.at(cell, t);
      for (int j = 1; j <= k; ++j) {
        row.past_effort += effort.at(cell, t - j);
        row.past_illegal += static_cast<double>(obs.at(cell, t - j));
        if (nbr) row.past_neighbors += nbr->at(cell, t - j);
      }
      panel.rows.push_back(row);
    }
  }
  if (panel.rows.empty()) throw std::runtime_error("empty panel");

  NormalizationStats stats;
  stats.curr_effort =
      detail::column_stats(panel.rows, &PanelRow::curr_effort, "curr_effort");
  stats.past_effort =
      detail::column_stats(panel.rows, &PanelRow::past_effort, "past_effort");
  stats.past_illegal =
      detail::column_stats(panel.rows, &PanelRow::past_illegal, "past_illegal");
  detail::standardize(panel.rows, &PanelRow::curr_effort, stats.curr_effort);
  detail::standardize(panel.rows, &PanelRow::past_effort, stats.past_effort);
  detail::standardize(panel.rows, &PanelRow::past_illegal, stats.past_illegal);
  if (panel.has_neighbors) {
    stats.past_neighbors = detail::column_stats(
        panel.rows, &PanelRow::past_neighbors, "past_neighbors");
    detail::standardize(panel.rows, &PanelRow::past_neighbors,
                        stats.past_neighbors);
  }
  return {std::move(panel), stats};
}

// Panel export: standardized values; raw means/stds go to a sidecar file.
inline void panel_to_csv(const Panel& panel, const GridSpec& grid,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << "cell_col,cell_row,bin_index,y,curr_effort,past_effort,past_illegal,"
         "past_neighbors\n";
  for (const auto& r : panel.rows) {
    out << (r.cell % grid.n_cols) << ',' << (r.cell / grid.n_cols) << ','
        << r.bin << ',' << int(r.y) << ',' << csv::fmt_double(r.curr_effort)
        << ',' << csv::fmt_double(r.past_effort) << ','
        << csv::fmt_double(r.past_illegal) << ','
        << csv::fmt_double(r.past_neighbors) << '\n';
  }
}

inline void stats_to_csv(const NormalizationStats& stats, bool has_neighbors,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << "covariate,mean,stddev\n";
  auto line = [&](const char* name, const CovariateStats& s) {
    out << name << ',' << csv::fmt_double(s.mean) << ','
        << csv::fmt_double(s.stddev) << '\n';
  };
  line("curr_effort", stats.curr_effort);
  line("past_effort", stats.past_effort);
  line("past_illegal", stats.past_illegal);
  if (has_neighbors) line("past_neighbors", stats.past_neighbors);
}

}  // namespace deter
