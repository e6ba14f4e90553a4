#pragma once

#include "error.hpp"
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

namespace priorshift {

//! Euclidean projection onto {theta : theta >= 0, sum(theta) = 1}
//! (sort-and-threshold).
inline Eigen::VectorXd
project_to_simplex(const Eigen::VectorXd& v)
{
  const Eigen::Index c = v.size();
  std::vector<double> u(v.data(), v.data() + c);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double tau = 0.0;
  for (Eigen::Index j = 0; j < c; ++j) {
    cumulative += u[static_cast<std::size_t>(j)];
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0.0) {
      tau = t;
    }
  }
  Eigen::VectorXd out = (v.array() - tau).max(0.0).matrix();
  const double total = out.sum();
  if (total > 0.0) {
    out /= total;
  }
  return out;
}

struct SimplexSolveOptions
{
  int max_iterations = 1000;
  //! Bound on ||theta - P(theta - step * grad)|| at the returned point.
  double stationarity_tolerance = 1e-6;
  double initial_step = 1.0;
};

struct SimplexSolveResult
{
  Eigen::VectorXd theta;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  double step = 0.0;
  double stationarity = 0.0;
  bool converged = false;
};

//! Value-and-gradient callable: (theta) -> (f, grad f).
using SimplexObjective = std::function<std::pair<double, Eigen::VectorXd>(const Eigen::VectorXd&)>;

//! Projected gradient descent with backtracking on the sufficient-decrease
//! condition of the projected step. The step grows again after each accepted
//! iteration, so it tracks the local curvature in both directions.
inline SimplexSolveResult
minimize_on_simplex(const SimplexObjective& f,
                    const Eigen::VectorXd& init,
                    const SimplexSolveOptions& options = {})
{
  SimplexSolveResult r;
  r.theta = init;
  auto [value, grad] = f(r.theta);
  if (!std::isfinite(value)) {
    throw NumericalError("objective is not finite at the initial point");
  }
  double step = options.initial_step;
  constexpr double min_step = 1e-20;

  auto stationarity = [&](const Eigen::VectorXd& theta, const Eigen::VectorXd& g, double eta) {
    return (theta - project_to_simplex(theta - eta * g)).norm();
  };

  for (r.iterations = 0; r.iterations < options.max_iterations; ++r.iterations) {
    if (stationarity(r.theta, grad, step) <= options.stationarity_tolerance) {
      r.converged = true;
      break;
    }
    bool accepted = false;
    while (step > min_step) {
      Eigen::VectorXd candidate = project_to_simplex(r.theta - step * grad);
      const Eigen::VectorXd delta = candidate - r.theta;
      auto [cv, cg] = f(candidate);
      const double model = value + grad.dot(delta) + delta.squaredNorm() / (2.0 * step);
      if (std::isfinite(cv) && cv <= model + 1e-14 * std::abs(value)) {
        r.theta = std::move(candidate);
        value = cv;
        grad = std::move(cg);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      break;
    }
    step *= 2.0;
  }
  r.value = value;
  r.gradient = grad;
  r.step = step;
  r.stationarity = stationarity(r.theta, grad, step);
  r.converged = r.converged || r.stationarity <= options.stationarity_tolerance;
  return r;
}

//! Exhaustive scan of theta_1 over {0, 1/steps, ..., 1} for two classes.
//! Returns (theta_1, value) of the smallest value; ties keep the first.
template <class ValueFn>
std::pair<double, double>
grid_minimize_binary(ValueFn&& value_of, int steps = 1000)
{
  double best_t = 0.0;
  double best_v = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) / steps;
    const double v = value_of(t);
    if (v < best_v) {
      best_v = v;
      best_t = t;
    }
  }
  return { best_t, best_v };
}

//! Ternary-section refinement of a unimodal function on [lo, hi].
template <class ValueFn>
std::pair<double, double>
trisect_minimize(ValueFn&& value_of, double lo, double hi, double tol = 1e-6)
{
  while (hi - lo > tol) {
    const double a = lo + (hi - lo) / 3.0;
    const double b = hi - (hi - lo) / 3.0;
    if (value_of(a) <= value_of(b)) {
      hi = b;
    } else {
      lo = a;
    }
  }
  const double t = 0.5 * (lo + hi);
  return { t, value_of(t) };
}

} // namespace priorshift
