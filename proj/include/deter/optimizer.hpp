#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace deter {

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_iterations = 20000;
  double tolerance = 1e-9;   // windowed loss-change threshold
  int tolerance_window = 50;

  void validate() const {
    if (learning_rate <= 0) throw std::invalid_argument("learning_rate <= 0");
    if (beta1 < 0 || beta1 >= 1) throw std::invalid_argument("beta1 out of range");
    if (beta2 < 0 || beta2 >= 1) throw std::invalid_argument("beta2 out of range");
    if (epsilon <= 0) throw std::invalid_argument("epsilon <= 0");
  }
};

struct AdamState {
  long t = 0;
  std::vector<double> m;
  std::vector<double> v;
  std::vector<double> x;

  explicit AdamState(std::vector<double> x0)
      : m(x0.size(), 0.0), v(x0.size(), 0.0), x(std::move(x0)) {}
};

inline void adam_step(AdamState& state, const std::vector<double>& gradient,
                      const AdamConfig& cfg) {
  if (gradient.size() != state.x.size())
    throw std::invalid_argument("gradient length mismatch");
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < state.x.size(); ++i) {
    const double g = gradient[i];
    if (!std::isfinite(g))
      throw std::runtime_error("non-finite gradient at coordinate " +
                               std::to_string(i));
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    state.x[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
  }
}

struct MinimizeResult {
  std::vector<double> x;
  std::vector<double> loss_trace;
  int iterations = 0;
  bool converged = false;
};

using LossFn = std::function<double(const std::vector<double>&)>;
using GradFn = std::function<std::vector<double>(const std::vector<double>&)>;

// Full-batch Adam. Stops when the loss change across the tolerance window
// drops below tolerance, or at max_iterations.
inline MinimizeResult minimize(const LossFn& loss_fn, const GradFn& grad_fn,
                               std::vector<double> x0, const AdamConfig& cfg) {
  cfg.validate();
  AdamState state(std::move(x0));
  MinimizeResult res{{}, {}, 0, false};
  double l0 = loss_fn(state.x);
  if (!std::isfinite(l0))
    throw std::runtime_error("non-finite loss at initial point");
  res.loss_trace.push_back(l0);
  for (int it = 0; it < cfg.max_iterations; ++it) {
    adam_step(state, grad_fn(state.x), cfg);
    double l = loss_fn(state.x);
    if (!std::isfinite(l))
      throw std::runtime_error("non-finite loss at iteration " +
                               std::to_string(it + 1));
    res.loss_trace.push_back(l);
    res.iterations = it + 1;
    const int w = cfg.tolerance_window;
    if (static_cast<int>(res.loss_trace.size()) > w) {
      double prev = res.loss_trace[res.loss_trace.size() - 1 - w];
      if (std::fabs(prev - l) < cfg.tolerance) {
        res.converged = true;
        break;
      }
    }
  }
  res.x = std::move(state.x);
  return res;
}

}  // namespace deter
