#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include "deter/csv.hpp"
#include "deter/optimizer.hpp"

namespace deter::gam {

// Static per-cell features, one row per grid cell.
struct FeatureTable {
  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;  // column-major, names.size() cols
  std::size_t n_rows = 0;
};

// CSV layout: cell_col,cell_row,<feature columns>
inline FeatureTable feature_table_from_csv(const std::string& path) {
  csv::Table t = csv::read_file(path);
  if (t.header.size() < 3 || t.header[0] != "cell_col" ||
      t.header[1] != "cell_row")
    throw std::runtime_error(
        "feature table must start with cell_col,cell_row columns: " + path);
  FeatureTable ft;
  ft.names.assign(t.header.begin() + 2, t.header.end());
  ft.columns.assign(ft.names.size(), {});
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size())
      throw std::runtime_error("ragged feature table row in " + path);
    for (std::size_t j = 0; j < ft.names.size(); ++j) {
      double v = csv::parse_double(row[j + 2]);
      if (!std::isfinite(v))
        throw std::runtime_error("non-finite feature value in " + path);
      ft.columns[j].push_back(v);
    }
  }
  ft.n_rows = t.rows.size();
  return ft;
}

// Cubic B-spline basis with quantile-placed interior knots and a
// second-divided-difference penalty whose null space is exactly the
// linear functions of x.
struct SplineBasis {
  std::string feature;
  std::vector<double> knots;     // full knot vector with repeated ends
  std::vector<double> greville;  // one abscissa per basis function
  int n_basis = 0;
  Eigen::MatrixXd penalty;       // n_basis x n_basis, PSD

  static constexpr int kDegree = 3;
  static constexpr int kInteriorKnots = 10;

  static SplineBasis build(const std::string& feature,
                           std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("no data for spline basis");
    std::sort(values.begin(), values.end());
    const double lo = values.front(), hi = values.back();
    if (hi <= lo)
      throw std::runtime_error("degenerate feature (constant): " + feature);

    SplineBasis b;
    b.feature = feature;
    for (int i = 0; i <= kDegree; ++i) b.knots.push_back(lo);
    for (int i = 1; i <= kInteriorKnots; ++i) {
      const double q = double(i) / (kInteriorKnots + 1);
      double pos = q * double(values.size() - 1);
      std::size_t j = static_cast<std::size_t>(pos);
      double frac = pos - double(j);
      double v = values[j] +
                 frac * (values[std::min(j + 1, values.size() - 1)] - values[j]);
      // skip ties (heavily repeated data values) so the knots stay
      // strictly increasing inside the range
      v = std::clamp(v, lo, hi);
      if (v <= b.knots.back() || v >= hi) continue;
      b.knots.push_back(v);
    }
    for (int i = 0; i <= kDegree; ++i) b.knots.push_back(hi);
    b.n_basis = static_cast<int>(b.knots.size()) - kDegree - 1;

    b.greville.resize(b.n_basis);
    for (int i = 0; i < b.n_basis; ++i) {
      double s = 0.0;
      for (int j = 1; j <= kDegree; ++j) s += b.knots[i + j];
      b.greville[i] = s / kDegree;
    }

    // Second divided differences on the Greville abscissae: rows annihilate
    // any coefficient vector linear in the abscissae, so heavy smoothing
    // collapses the component onto a straight line in x.
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(b.n_basis - 2, b.n_basis);
    // normalizing by the mean spacing makes the rows unit-free, so lambda
    // means the same thing regardless of the feature's scale
    const double hbar =
        (b.greville.back() - b.greville.front()) / double(b.n_basis - 1);
    for (int i = 0; i + 2 < b.n_basis; ++i) {
      const double h1 = b.greville[i + 1] - b.greville[i];
      const double h2 = b.greville[i + 2] - b.greville[i + 1];
      if (h1 <= 0 || h2 <= 0)
        throw std::runtime_error("non-increasing Greville abscissae: " + feature);
      d(i, i) = 2.0 * hbar * hbar / (h1 * (h1 + h2));
      d(i, i + 1) = -2.0 * hbar * hbar / (h1 * h2);
      d(i, i + 2) = 2.0 * hbar * hbar / (h2 * (h1 + h2));
    }
    b.penalty = d.transpose() * d;
    return b;
  }

  // Cox-de Boor evaluation of all basis functions at x; clamped to the
  // data range so the basis still partitions unity at the boundaries.
  std::vector<double> evaluate(double x) const {
    const double lo = knots.front(), hi = knots.back();
    x = std::clamp(x, lo, hi);
    std::vector<double> out(n_basis, 0.0);
    // locate the knot span [knots[mu], knots[mu+1]) containing x
    int mu = kDegree;
    const int last = static_cast<int>(knots.size()) - kDegree - 2;
    while (mu < last && x >= knots[mu + 1]) ++mu;
    std::vector<double> w(kDegree + 1, 0.0);
    w[0] = 1.0;
    for (int d = 1; d <= kDegree; ++d) {
      for (int j = d; j >= 0; --j) {
        int i = mu - d + j;
        double left = knots[i], right = knots[i + d];
        double a = 0.0;
        if (right > left) a = (x - left) / (right - left);
        double v = 0.0;
        if (j > 0) v += a * w[j - 1];
        if (j < d) {
          double left2 = knots[i + 1], right2 = knots[i + d + 1];
          double bfrac = right2 > left2 ? (right2 - x) / (right2 - left2) : 0.0;
          v += bfrac * w[j];
        }
        w[j] = v;
      }
    }
    for (int j = 0; j <= kDegree; ++j) {
      int idx = mu - kDegree + j;
      if (idx >= 0 && idx < n_basis) out[idx] = w[j];
    }
    return out;
  }
};

struct GamSpec {
  std::vector<std::string> features;
  std::map<std::string, double> lambda;  // per-feature; missing -> default
  double default_lambda = 1.0;
  AdamConfig adam{};

  GamSpec() {
    adam.learning_rate = 0.05;
    adam.max_iterations = 20000;
  }

  double lambda_for(const std::string& f) const {
    auto it = lambda.find(f);
    return it == lambda.end() ? default_lambda : it->second;
  }
};

struct GamFit {
  double intercept = 0.0;
  std::vector<std::string> features;
  std::vector<SplineBasis> bases;
  std::vector<std::vector<double>> coefs;       // per-feature blocks
  std::vector<std::vector<double>> col_means;   // training-column centering
  std::vector<double> lambdas;
  double penalized_nll = 0.0;  // mean scale, penalty included
  double deviance = 0.0;       // -2 * sum log-likelihood, unpenalized
  std::size_t n_rows = 0;
  Eigen::MatrixXd covariance;  // over [intercept, blocks...], penalized
  std::vector<double> edf;     // per feature
  bool converged = false;

  int feature_index(const std::string& f) const {
    for (std::size_t i = 0; i < features.size(); ++i)
      if (features[i] == f) return static_cast<int>(i);
    return -1;
  }

  // centered component value of one feature at raw value x
  double component(int fi, double x) const {
    std::vector<double> bx = bases[fi].evaluate(x);
    double v = 0.0;
    for (int j = 0; j < bases[fi].n_basis; ++j)
      v += coefs[fi][j] * (bx[j] - col_means[fi][j]);
    return v;
  }
};

namespace detail {

// design matrix with leading intercept column; basis columns centered over
// the training rows so every component averages to zero by construction
struct Design {
  Eigen::MatrixXd X;
  std::vector<int> block_start;  // per feature, offset into columns
  std::vector<int> block_size;
  std::vector<std::vector<double>> col_means;
};

inline Design build_design(const std::vector<std::vector<double>>& feature_cols,
                           const std::vector<SplineBasis>& bases) {
  const std::size_t n = feature_cols.front().size();
  int total = 1;
  Design d;
  for (const auto& b : bases) {
    d.block_start.push_back(total);
    d.block_size.push_back(b.n_basis);
    total += b.n_basis;
  }
  d.X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), total);
  d.X.col(0).setOnes();
  for (std::size_t f = 0; f < bases.size(); ++f) {
    for (std::size_t r = 0; r < n; ++r) {
      std::vector<double> bx = bases[f].evaluate(feature_cols[f][r]);
      for (int j = 0; j < bases[f].n_basis; ++j)
        d.X(static_cast<Eigen::Index>(r), d.block_start[f] + j) = bx[j];
    }
    std::vector<double> means(bases[f].n_basis, 0.0);
    for (int j = 0; j < bases[f].n_basis; ++j) {
      means[j] = d.X.col(d.block_start[f] + j).mean();
      d.X.col(d.block_start[f] + j).array() -= means[j];
    }
    d.col_means.push_back(std::move(means));
  }
  return d;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double log1pexp(double z) {
  if (z > 0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

}  // namespace detail

// Penalized binomial fit through the shared Adam minimizer. Loss is the
// mean Bernoulli negative log-likelihood plus sum_f lambda_f c_f' P_f c_f.
//
// Internally each coefficient block is rotated into the penalty's
// eigenbasis and the constant direction (already annihilated by column
// centering) is dropped. That keeps the penalty diagonal -- so heavy
// smoothing still lets the unpenalized linear direction move freely --
// and keeps the penalized Hessian nonsingular.
inline GamFit fit_gam(const FeatureTable& table,
                      const std::vector<std::uint8_t>& y, const GamSpec& spec) {
  if (spec.features.empty()) throw std::invalid_argument("no features selected");
  if (y.size() != table.n_rows)
    throw std::invalid_argument("target length does not match feature table");

  GamFit fit;
  fit.features = spec.features;
  std::vector<std::vector<double>> cols;
  for (const auto& f : spec.features) {
    bool found = false;
    for (std::size_t j = 0; j < table.names.size(); ++j) {
      if (table.names[j] == f) {
        cols.push_back(table.columns[j]);
        found = true;
        break;
      }
    }
    if (!found) throw std::runtime_error("unknown feature: " + f);
    fit.bases.push_back(SplineBasis::build(f, cols.back()));
    fit.lambdas.push_back(spec.lambda_for(f));
  }

  detail::Design design = detail::build_design(cols, fit.bases);
  fit.col_means = design.col_means;
  const Eigen::Index n = design.X.rows();
  const std::size_t n_feat = fit.bases.size();

  // Per-feature rotation T_f: first column spans the penalty null space
  // orthogonal to the constant vector (the linear direction), remaining
  // columns are the positive-eigenvalue eigenvectors. Diagonal penalty
  // entries line up with the columns.
  std::vector<Eigen::MatrixXd> rot(n_feat);
  std::vector<Eigen::VectorXd> diag_pen(n_feat);
  for (std::size_t f = 0; f < n_feat; ++f) {
    const int m = fit.bases[f].n_basis;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.bases[f].penalty);
    const Eigen::VectorXd& ev = es.eigenvalues();  // ascending
    const double tol = 1e-9 * std::max(1.0, ev(m - 1));
    int n_null = 0;
    while (n_null < m && ev(n_null) < tol) ++n_null;
    if (n_null != 2)
      throw std::runtime_error("unexpected penalty null space for feature " +
                               fit.bases[f].feature);
    Eigen::VectorXd lin = Eigen::Map<const Eigen::VectorXd>(
        fit.bases[f].greville.data(), m);
    lin.array() -= lin.mean();
    lin.normalize();
    rot[f] = Eigen::MatrixXd(m, m - 1);
    rot[f].col(0) = lin;
    rot[f].rightCols(m - 2) = es.eigenvectors().rightCols(m - 2);
    diag_pen[f] = Eigen::VectorXd::Zero(m - 1);
    diag_pen[f].tail(m - 2) = ev.tail(m - 2);
  }

  std::vector<int> tstart(n_feat), tsize(n_feat);
  int p = 1;
  for (std::size_t f = 0; f < n_feat; ++f) {
    tstart[f] = p;
    tsize[f] = fit.bases[f].n_basis - 1;
    p += tsize[f];
  }
  Eigen::MatrixXd Z(n, p);
  Z.col(0).setOnes();
  for (std::size_t f = 0; f < n_feat; ++f)
    Z.middleCols(tstart[f], tsize[f]) =
        design.X.middleCols(design.block_start[f], design.block_size[f]) *
        rot[f];

  Eigen::VectorXd yv(n);
  for (Eigen::Index i = 0; i < n; ++i) yv(i) = double(y[i]);

  auto penalty_terms = [&](const Eigen::VectorXd& c, Eigen::VectorXd* grad) {
    double pen = 0.0;
    for (std::size_t f = 0; f < n_feat; ++f) {
      auto seg = c.segment(tstart[f], tsize[f]);
      pen += fit.lambdas[f] * seg.dot(diag_pen[f].cwiseProduct(seg));
      if (grad)
        grad->segment(tstart[f], tsize[f]) +=
            2.0 * fit.lambdas[f] * diag_pen[f].cwiseProduct(seg);
    }
    return pen;
  };

  auto loss_fn = [&](const std::vector<double>& x) {
    Eigen::Map<const Eigen::VectorXd> c(x.data(), p);
    Eigen::VectorXd z = Z * c;
    double nll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      nll += detail::log1pexp(z(i)) - yv(i) * z(i);
    return nll / double(n) + penalty_terms(c, nullptr);
  };
  auto grad_fn = [&](const std::vector<double>& x) {
    Eigen::Map<const Eigen::VectorXd> c(x.data(), p);
    Eigen::VectorXd z = Z * c;
    Eigen::VectorXd resid(n);
    for (Eigen::Index i = 0; i < n; ++i)
      resid(i) = detail::sigmoid(z(i)) - yv(i);
    Eigen::VectorXd g = Z.transpose() * resid / double(n);
    penalty_terms(c, &g);
    return std::vector<double>(g.data(), g.data() + p);
  };

  std::vector<double> x0(static_cast<std::size_t>(p), 0.0);
  const double rate = yv.mean();
  if (rate > 0.0 && rate < 1.0)
    x0[0] = std::clamp(std::log(rate / (1.0 - rate)), -12.0, 12.0);
  MinimizeResult mr = minimize(loss_fn, grad_fn, std::move(x0), spec.adam);

  Eigen::Map<const Eigen::VectorXd> c(mr.x.data(), p);
  fit.intercept = c(0);
  for (std::size_t f = 0; f < n_feat; ++f) {
    Eigen::VectorXd orig = rot[f] * c.segment(tstart[f], tsize[f]);
    fit.coefs.emplace_back(orig.data(), orig.data() + orig.size());
  }
  fit.penalized_nll = mr.loss_trace.back();
  fit.converged = mr.converged;
  fit.n_rows = static_cast<std::size_t>(n);

  Eigen::VectorXd z = Z * c;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    ll -= detail::log1pexp(z(i)) - yv(i) * z(i);
  fit.deviance = -2.0 * ll;

  // penalized observed information: Z'WZ + 2n * blockdiag(lambda_f S_f)
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double pr = detail::sigmoid(z(i));
    w(i) = pr * (1.0 - pr);
  }
  Eigen::MatrixXd zwz = Z.transpose() * w.asDiagonal() * Z;
  Eigen::MatrixXd hess = zwz;
  for (std::size_t f = 0; f < n_feat; ++f)
    hess.block(tstart[f], tstart[f], tsize[f], tsize[f]) +=
        (2.0 * double(n) * fit.lambdas[f] * diag_pen[f]).asDiagonal();
  Eigen::MatrixXd cov_t =
      hess.ldlt().solve(Eigen::MatrixXd::Identity(p, p));

  // effective degrees of freedom: trace of the term's block of H^-1 Z'WZ
  Eigen::MatrixXd edf_mat = cov_t * zwz;
  for (std::size_t f = 0; f < n_feat; ++f) {
    double e = 0.0;
    for (int j = 0; j < tsize[f]; ++j)
      e += edf_mat(tstart[f] + j, tstart[f] + j);
    fit.edf.push_back(std::clamp(e, 1e-3, double(tsize[f])));
  }

  // covariance back in the original per-basis coordinates for the curves
  int po = 1;
  for (std::size_t f = 0; f < n_feat; ++f) po += fit.bases[f].n_basis;
  Eigen::MatrixXd big = Eigen::MatrixXd::Zero(po, p);
  big(0, 0) = 1.0;
  int ro = 1;
  for (std::size_t f = 0; f < n_feat; ++f) {
    big.block(ro, tstart[f], fit.bases[f].n_basis, tsize[f]) = rot[f];
    ro += fit.bases[f].n_basis;
  }
  fit.covariance = big * cov_t * big.transpose();
  return fit;
}

struct ComponentCurve {
  std::string feature;
  std::vector<double> x;
  std::vector<double> estimate;
  std::vector<double> se;
};

inline ComponentCurve component_curve(const GamFit& fit,
                                      const std::string& feature,
                                      int n_grid = 200) {
  const int fi = fit.feature_index(feature);
  if (fi < 0) throw std::invalid_argument("feature not in fit: " + feature);
  const SplineBasis& basis = fit.bases[fi];
  int start = 1;
  for (int f = 0; f < fi; ++f) start += fit.bases[f].n_basis;

  ComponentCurve curve;
  curve.feature = feature;
  const double lo = basis.knots.front(), hi = basis.knots.back();
  for (int g = 0; g < n_grid; ++g) {
    const double x =
        n_grid == 1 ? lo : lo + (hi - lo) * double(g) / double(n_grid - 1);
    std::vector<double> bx = basis.evaluate(x);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(fit.covariance.rows());
    double est = 0.0;
    for (int j = 0; j < basis.n_basis; ++j) {
      const double centered = bx[j] - fit.col_means[fi][j];
      est += fit.coefs[fi][j] * centered;
      v(start + j) = centered;
    }
    double var = v.dot(fit.covariance * v);
    curve.x.push_back(x);
    curve.estimate.push_back(est);
    curve.se.push_back(std::sqrt(std::max(0.0, var)));
  }
  return curve;
}

inline void curve_to_csv(const ComponentCurve& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << "feature,x,estimate,se\n";
  for (std::size_t i = 0; i < curve.x.size(); ++i)
    out << curve.feature << ',' << csv::fmt_double(curve.x[i]) << ','
        << csv::fmt_double(curve.estimate[i]) << ','
        << csv::fmt_double(curve.se[i]) << '\n';
}

// Effective degrees of freedom of one term, computed during the fit as
// the trace of the term's block of (penalized information)^-1 Z'WZ.
inline double term_edf(const GamFit& fit, const std::string& feature) {
  const int fi = fit.feature_index(feature);
  if (fi < 0) throw std::invalid_argument("feature not in fit: " + feature);
  return fit.edf[fi];
}

struct TermSignificance {
  std::string feature;
  double edf = 0.0;
  double chi_square = 0.0;
  std::optional<double> p_value;  // empty when the reduced refit failed
};

// Deviance-difference test against the fit with the term removed. The
// p-value is APPROXIMATE: a chi-square tail at the term's effective
// degrees of freedom, with no smoothing-parameter correction.
inline TermSignificance term_significance(const GamFit& fit,
                                          const FeatureTable& table,
                                          const std::vector<std::uint8_t>& y,
                                          const GamSpec& spec,
                                          const std::string& feature) {
  TermSignificance out;
  out.feature = feature;
  out.edf = term_edf(fit, feature);
  try {
    GamSpec reduced = spec;
    reduced.features.clear();
    for (const auto& f : spec.features)
      if (f != feature) reduced.features.push_back(f);
    double reduced_pnll;
    if (reduced.features.empty()) {
      // intercept-only model has a closed form
      double rate = 0.0;
      for (auto v : y) rate += v;
      rate /= double(y.size());
      rate = std::clamp(rate, 1e-12, 1.0 - 1e-12);
      reduced_pnll = -(rate * std::log(rate) + (1 - rate) * std::log(1 - rate));
    } else {
      reduced_pnll = fit_gam(table, y, reduced).penalized_nll;
    }
    // twice the penalized log-likelihood difference, on the sum scale
    out.chi_square =
        std::max(0.0, 2.0 * double(fit.n_rows) * (reduced_pnll - fit.penalized_nll));
    boost::math::chi_squared dist(out.edf);
    out.p_value = boost::math::cdf(boost::math::complement(dist, out.chi_square));
  } catch (const std::exception&) {
    out.p_value = std::nullopt;
  }
  return out;
}

inline std::string significance_table(const std::vector<TermSignificance>& rows) {
  std::ostringstream os;
  os << "term significance (APPROXIMATE deviance-difference chi-square)\n";
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-24s %8s %12s %12s\n", "feature", "edf",
                "chi_square", "p_value");
  os << buf;
  for (const auto& r : rows) {
    if (r.p_value) {
      std::snprintf(buf, sizeof(buf), "%-24s %8.2f %12.3f %12.3g\n",
                    r.feature.c_str(), r.edf, r.chi_square, *r.p_value);
    } else {
      std::snprintf(buf, sizeof(buf), "%-24s %8.2f %12.3f %12s\n",
                    r.feature.c_str(), r.edf, r.chi_square, "unavailable");
    }
    os << buf;
  }
  return os.str();
}

// Least-squares slope of the component over the training values of the
// feature; the sign summary the reports quote.
inline double component_linear_slope(const GamFit& fit,
                                     const FeatureTable& table,
                                     const std::string& feature) {
  const int fi = fit.feature_index(feature);
  if (fi < 0) throw std::invalid_argument("feature not in fit: " + feature);
  int ci = -1;
  for (std::size_t j = 0; j < table.names.size(); ++j)
    if (table.names[j] == feature) ci = static_cast<int>(j);
  if (ci < 0) throw std::invalid_argument("feature not in table: " + feature);
  const auto& xs = table.columns[ci];
  double mx = 0.0, my = 0.0;
  std::vector<double> ys(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ys[i] = fit.component(fi, xs[i]);
    mx += xs[i];
    my += ys[i];
  }
  mx /= double(xs.size());
  my /= double(xs.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  if (sxx <= 0) throw std::runtime_error("degenerate feature (constant): " + feature);
  return sxy / sxx;
}

}  // namespace deter::gam
