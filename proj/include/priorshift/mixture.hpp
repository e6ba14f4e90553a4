#pragma once

#include "error.hpp"
#include "simplex_vector.hpp"
#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

namespace priorshift {

//! Log-likelihood of mixture weights given per-point component densities:
//!   (1/n') sum_i log sum_y theta_y D[i, y].
//! Points whose mixture density is not positive are left out.
inline double
mixture_log_likelihood(const Eigen::MatrixXd& densities, const Eigen::VectorXd& theta)
{
  const Eigen::VectorXd mix = densities * theta;
  double total = 0.0;
  Eigen::Index used = 0;
  for (Eigen::Index i = 0; i < mix.size(); ++i) {
    if (mix(i) > 0.0) {
      total += std::log(mix(i));
      ++used;
    }
  }
  return used ? total / static_cast<double>(used) : -std::numeric_limits<double>::infinity();
}

struct FixedPointStep
{
  Eigen::VectorXd theta;
  //! Points with zero mixture density (all densities zero where theta > 0).
  Eigen::Index skipped = 0;
};

//! theta_y <- theta_y (1/m) sum_i D[i, y] / sum_y' theta_y' D[i, y'], the
//! average running over the m points with a positive denominator. Rows may be
//! rescaled by any positive factor without changing the result.
inline FixedPointStep
mixture_fixed_point_step(const Eigen::MatrixXd& densities, const Eigen::VectorXd& theta)
{
  FixedPointStep out;
  out.theta = Eigen::VectorXd::Zero(theta.size());
  const Eigen::VectorXd mix = densities * theta;
  Eigen::Index used = 0;
  for (Eigen::Index i = 0; i < densities.rows(); ++i) {
    if (!(mix(i) > 0.0) || !std::isfinite(mix(i))) {
      ++out.skipped;
      continue;
    }
    out.theta += densities.row(i).transpose() / mix(i);
    ++used;
  }
  if (used == 0) {
    throw NumericalError("every test point has zero density under all classes");
  }
  out.theta = out.theta.cwiseProduct(theta) / static_cast<double>(used);
  return out;
}

struct FixedPointResult
{
  SimplexVector theta;
  int iterations = 0;
  bool converged = false;
  Eigen::Index skipped_points = 0;
  //! Objective after each iteration (entry 0 is the initial value).
  std::vector<double> objective_trace;
};

//! Iterates the multiplicative update until ||delta theta||_inf <= tol.
//! Zero entries of `init` stay zero.
inline FixedPointResult
mixture_fixed_point(const Eigen::MatrixXd& densities, const SimplexVector& init, double tol = 1e-8,
                    int max_iterations = 10000)
{
  if (densities.cols() != init.size()) {
    throw ValidationError("density columns do not match class count");
  }
  FixedPointResult r;
  Eigen::VectorXd theta = init.values();
  r.objective_trace.push_back(mixture_log_likelihood(densities, theta));
  while (r.iterations < max_iterations) {
    auto step = mixture_fixed_point_step(densities, theta);
    r.skipped_points = step.skipped;
    Eigen::VectorXd next = step.theta / step.theta.sum();
    ++r.iterations;
    const double change = (next - theta).cwiseAbs().maxCoeff();
    theta = std::move(next);
    r.objective_trace.push_back(mixture_log_likelihood(densities, theta));
    if (change <= tol) {
      r.converged = true;
      break;
    }
  }
  r.theta = SimplexVector::renormalized(theta);
  return r;
}

} // namespace priorshift
