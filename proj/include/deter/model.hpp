#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "deter/optimizer.hpp"
#include "deter/panel.hpp"

namespace deter {

// The three nested logistic deterrence models:
//   PastEffort:          a_i + beta*curr_effort + gamma*past_effort
//   PastIllegal:         a_i + beta*curr_effort + rho*past_illegal
//   PastIllegalNeighbors: ... + eta*past_neighbors
enum class ModelVariant { PastEffort, PastIllegal, PastIllegalNeighbors };

inline const char* variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::PastEffort: return "past_effort";
    case ModelVariant::PastIllegal: return "past_illegal";
    case ModelVariant::PastIllegalNeighbors: return "past_illegal_neighbors";
  }
  return "?";
}

inline std::optional<ModelVariant> parse_variant(const std::string& s) {
  if (s == "past_effort" || s == "eq1") return ModelVariant::PastEffort;
  if (s == "past_illegal" || s == "eq2") return ModelVariant::PastIllegal;
  if (s == "past_illegal_neighbors" || s == "eq3")
    return ModelVariant::PastIllegalNeighbors;
  return std::nullopt;
}

// Per-cell attractiveness plus the effort/observation coefficients.
// Coefficients not used by a variant stay fixed at zero.
struct ModelParams {
  std::vector<double> a;  // logit-scale attractiveness, length N
  double beta = 0.0;      // curr_effort
  double gamma = 0.0;     // past_effort   (PastEffort)
  double rho = 0.0;       // past_illegal  (PastIllegal*)
  double eta = 0.0;       // past_neighbors (PastIllegalNeighbors)

  static int active_count(ModelVariant v, int n_cells) {
    return n_cells + (v == ModelVariant::PastIllegalNeighbors ? 3 : 2);
  }
};

struct FitConfig {
  AdamConfig adam{};
  double l2_attractiveness = 1e-4;
  std::uint64_t seed = 0;  // echoed in outputs; the fit itself is deterministic

  FitConfig() { adam.learning_rate = 0.01; }
};

struct FitResult {
  ModelParams params;
  double mean_a = 0.0;
  double std_a = 0.0;
  double final_nll = 0.0;
  std::vector<double> loss_trace;
  int iterations = 0;
  bool converged = false;
};

inline double linear_predictor(const ModelParams& params, const PanelRow& row) {
  return params.a[row.cell] + params.beta * row.curr_effort +
         params.gamma * row.past_effort + params.rho * row.past_illegal +
         params.eta * row.past_neighbors;
}

// Overflow-safe logistic; result in (0, 1).
inline double predict_prob(const ModelParams& params, const PanelRow& row) {
  const double z = linear_predictor(params, row);
  if (z >= 0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace detail {

// log(1 + e^z) without overflow
inline double log1pexp(double z) {
  if (z > 0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

inline double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double std_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace detail

// Mean Bernoulli negative log-likelihood plus an L2 penalty on the
// deviations of a_i from their mean (the mean level itself is unpenalized).
inline double nll(const ModelParams& params, const Panel& panel, double l2) {
  if (panel.rows.empty()) throw std::invalid_argument("empty panel");
  double total = 0.0;
  for (const auto& row : panel.rows) {
    const double z = linear_predictor(params, row);
    // -[y log p + (1-y) log(1-p)] = log(1+e^z) - y z
    total += detail::log1pexp(z) - (row.y ? z : 0.0);
  }
  double loss = total / static_cast<double>(panel.rows.size());
  if (l2 > 0) {
    const double abar = detail::mean_of(params.a);
    double pen = 0.0;
    for (double ai : params.a) pen += (ai - abar) * (ai - abar);
    loss += l2 * pen;
  }
  return loss;
}

// Gradient over the variant's active parameters, packed as
// [a_0 .. a_{N-1}, beta, gamma|rho (, eta)].
inline std::vector<double> nll_grad(const ModelParams& params,
                                    const Panel& panel, double l2,
                                    ModelVariant variant) {
  const int n = static_cast<int>(params.a.size());
  std::vector<double> grad(ModelParams::active_count(variant, n), 0.0);
  const double inv_rows = 1.0 / static_cast<double>(panel.rows.size());
  double gbeta = 0.0, gsecond = 0.0, geta = 0.0;
  for (const auto& row : panel.rows) {
    const double resid = (predict_prob(params, row) - double(row.y)) * inv_rows;
    grad[row.cell] += resid;
    gbeta += resid * row.curr_effort;
    switch (variant) {
      case ModelVariant::PastEffort:
        gsecond += resid * row.past_effort;
        break;
      case ModelVariant::PastIllegal:
        gsecond += resid * row.past_illegal;
        break;
      case ModelVariant::PastIllegalNeighbors:
        gsecond += resid * row.past_illegal;
        geta += resid * row.past_neighbors;
        break;
    }
  }
  if (l2 > 0) {
    const double abar = detail::mean_of(params.a);
    for (int i = 0; i < n; ++i) grad[i] += 2.0 * l2 * (params.a[i] - abar);
  }
  grad[n] = gbeta;
  grad[n + 1] = gsecond;
  if (variant == ModelVariant::PastIllegalNeighbors) grad[n + 2] = geta;
  return grad;
}

namespace detail {

inline ModelParams unpack(const std::vector<double>& x, int n_cells,
                          ModelVariant variant) {
  ModelParams p;
  p.a.assign(x.begin(), x.begin() + n_cells);
  p.beta = x[n_cells];
  switch (variant) {
    case ModelVariant::PastEffort:
      p.gamma = x[n_cells + 1];
      break;
    case ModelVariant::PastIllegal:
      p.rho = x[n_cells + 1];
      break;
    case ModelVariant::PastIllegalNeighbors:
      p.rho = x[n_cells + 1];
      p.eta = x[n_cells + 2];
      break;
  }
  return p;
}

}  // namespace detail

// Adam fit from the documented initialization: every a_i starts at the
// logit of the global detection rate clamped to [-12, -1]; coefficients at 0.
inline FitResult fit(const Panel& panel, ModelVariant variant,
                     const FitConfig& config) {
  if (variant == ModelVariant::PastIllegalNeighbors && !panel.has_neighbors)
    throw std::invalid_argument(
        "neighbor variant requires a panel with past_neighbors");
  const int n = panel.n_cells;
  double rate = 0.0;
  for (const auto& row : panel.rows) rate += row.y;
  rate /= static_cast<double>(panel.rows.size());
  double a0 = -12.0;
  if (rate > 0.0 && rate < 1.0)
    a0 = std::clamp(std::log(rate / (1.0 - rate)), -12.0, -1.0);

  std::vector<double> x0(ModelParams::active_count(variant, n), 0.0);
  std::fill(x0.begin(), x0.begin() + n, a0);

  const double l2 = config.l2_attractiveness;
  auto loss_fn = [&](const std::vector<double>& x) {
    return nll(detail::unpack(x, n, variant), panel, l2);
  };
  auto grad_fn = [&](const std::vector<double>& x) {
    return nll_grad(detail::unpack(x, n, variant), panel, l2, variant);
  };
  MinimizeResult mr = minimize(loss_fn, grad_fn, std::move(x0), config.adam);

  FitResult res;
  res.params = detail::unpack(mr.x, n, variant);
  res.mean_a = detail::mean_of(res.params.a);
  res.std_a = detail::std_of(res.params.a);
  res.final_nll = mr.loss_trace.back();
  res.loss_trace = std::move(mr.loss_trace);
  res.iterations = mr.iterations;
  res.converged = mr.converged;
  return res;
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

inline std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  // avoid the "-0.000" artifact
  if (std::string(buf) == "-0.000") return "0.000";
  return buf;
}

// One table row in the layout of the coefficient tables:
// pairing label, a-bar, beta, gamma/rho (, eta), 3-decimal formatting.
inline std::string summarize_row(const FitResult& result, ModelVariant variant,
                                 const std::string& label) {
  std::ostringstream os;
  os << label << ',' << fmt3(result.mean_a) << ',' << fmt3(result.params.beta);
  switch (variant) {
    case ModelVariant::PastEffort:
      os << ',' << fmt3(result.params.gamma);
      break;
    case ModelVariant::PastIllegal:
      os << ',' << fmt3(result.params.rho);
      break;
    case ModelVariant::PastIllegalNeighbors:
      os << ',' << fmt3(result.params.rho) << ',' << fmt3(result.params.eta);
      break;
  }
  return os.str();
}

inline std::string summarize_header(ModelVariant variant) {
  switch (variant) {
    case ModelVariant::PastEffort: return "pairing,a_mean,beta,gamma";
    case ModelVariant::PastIllegal: return "pairing,a_mean,beta,rho";
    case ModelVariant::PastIllegalNeighbors:
      return "pairing,a_mean,beta,rho,eta";
  }
  return "";
}

inline std::string summarize(const FitResult& result, ModelVariant variant,
                             const std::string& label) {
  return summarize_header(variant) + "\n" +
         summarize_row(result, variant, label) + "\n";
}

// Aligned plain-text variant of the same table.
inline std::string summarize_text(const std::vector<std::string>& csv_lines) {
  std::vector<std::vector<std::string>> cells;
  std::size_t ncol = 0;
  for (const auto& l : csv_lines) {
    cells.push_back(csv::split(l));
    ncol = std::max(ncol, cells.back().size());
  }
  std::vector<std::size_t> width(ncol, 0);
  for (const auto& row : cells)
    for (std::size_t i = 0; i < row.size(); ++i)
      width[i] = std::max(width[i], row[i].size());
  std::ostringstream os;
  for (const auto& row : cells) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << "  ";
      os << row[i] << std::string(width[i] - row[i].size(), ' ');
    }
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json fit_result_to_json(const FitResult& r,
                                         ModelVariant variant,
                                         const FitConfig& cfg) {
  nlohmann::json j;
  j["variant"] = variant_name(variant);
  j["coefficients"] = {{"beta", r.params.beta},
                       {"gamma", r.params.gamma},
                       {"rho", r.params.rho},
                       {"eta", r.params.eta}};
  j["a_mean"] = r.mean_a;
  j["a_std"] = r.std_a;
  j["attractiveness"] = r.params.a;
  j["final_nll"] = r.final_nll;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["loss_trace"] = r.loss_trace;
  j["config"] = {{"learning_rate", cfg.adam.learning_rate},
                 {"beta1", cfg.adam.beta1},
                 {"beta2", cfg.adam.beta2},
                 {"epsilon", cfg.adam.epsilon},
                 {"max_iterations", cfg.adam.max_iterations},
                 {"tolerance", cfg.adam.tolerance},
                 {"l2_attractiveness", cfg.l2_attractiveness},
                 {"seed", cfg.seed}};
  return j;
}

}  // namespace deter
