#pragma once

#include "dataset.hpp"
#include "klr.hpp"
#include "mixture.hpp"
#include <Eigen/Dense>
#include <algorithm>
#include <vector>

namespace priorshift {

inline constexpr double posterior_floor = 1e-12;

//! Training-domain posteriors p(y | x'_i) for the test rows, clamped to
//! [1e-12, 1 - 1e-12].
inline Eigen::MatrixXd
clamped_posteriors(const KlrModel& model, const UnlabeledDataset& test)
{
  return model.posteriors(test.features()).cwiseMax(posterior_floor).cwiseMin(1.0 - posterior_floor);
}

struct EmState
{
  SimplexVector theta;
  int t = 0;
  //! Surrogate objective (1/n') sum_i log sum_y theta_y p(y|x'_i) / p(y)
  //! before the first step and after every step.
  std::vector<double> objective_history;
  std::vector<Eigen::VectorXd> theta_history;
  //! Test points whose denominator vanished in the latest step.
  Eigen::Index degenerate_points = 0;
};

//! Posteriors divided column-wise by the training prior, i.e. densities
//! p(x'|y) up to the common factor p(x').
inline Eigen::MatrixXd
prior_scaled_posteriors(const Eigen::MatrixXd& posteriors, const SimplexVector& train_prior)
{
  if (posteriors.cols() != train_prior.size()) {
    throw ValidationError("posterior columns do not match class count");
  }
  if ((train_prior.values().array() <= 0.0).any()) {
    throw ValidationError("training prior must be strictly positive");
  }
  return posteriors * train_prior.values().cwiseInverse().asDiagonal();
}

inline double
em_surrogate_objective(const Eigen::MatrixXd& posteriors, const SimplexVector& train_prior, const Eigen::VectorXd& theta)
{
  return mixture_log_likelihood(prior_scaled_posteriors(posteriors, train_prior), theta);
}

inline EmState
em_initial_state(const Eigen::MatrixXd& posteriors, const SimplexVector& train_prior, const SimplexVector& init)
{
  EmState s;
  s.theta = init;
  s.objective_history.push_back(em_surrogate_objective(posteriors, train_prior, init.values()));
  s.theta_history.push_back(init.values());
  return s;
}

//! One E step (reweighted test posteriors) followed by one M step (their
//! test average). A point with zero denominator contributes nothing.
inline EmState
em_step(const Eigen::MatrixXd& posteriors, const SimplexVector& train_prior, const EmState& state)
{
  const Eigen::MatrixXd scaled = prior_scaled_posteriors(posteriors, train_prior);
  const Eigen::VectorXd& theta = state.theta.values();
  Eigen::VectorXd next = Eigen::VectorXd::Zero(theta.size());
  Eigen::Index degenerate = 0;
  for (Eigen::Index i = 0; i < scaled.rows(); ++i) {
    const Eigen::VectorXd numer = theta.cwiseProduct(scaled.row(i).transpose());
    const double denom = numer.sum();
    if (!(denom > 0.0)) {
      ++degenerate;
      continue;
    }
    next += numer / denom;
  }
  next /= static_cast<double>(scaled.rows());

  EmState out = state;
  out.theta = SimplexVector::renormalized(next);
  out.t = state.t + 1;
  out.degenerate_points = degenerate;
  out.objective_history.push_back(mixture_log_likelihood(scaled, out.theta.values()));
  out.theta_history.push_back(out.theta.values());
  return out;
}

inline EmState
em_step(const KlrModel& model, const UnlabeledDataset& test, const SimplexVector& train_prior, const EmState& state)
{
  return em_step(clamped_posteriors(model, test), train_prior, state);
}

struct EmResult
{
  SimplexVector theta_hat;
  EmState state;
  bool converged = false;
};

//! Iterates em_step from `init` until ||theta_t - theta_{t-1}||_inf <= tol.
inline EmResult
em_run(const Eigen::MatrixXd& posteriors, const SimplexVector& train_prior, const SimplexVector& init,
       double tol = 1e-8, int max_iterations = 10000)
{
  if (!(tol > 0.0)) {
    throw ValidationError("EM tolerance must be positive");
  }
  EmResult r;
  r.state = em_initial_state(posteriors, train_prior, init);
  while (r.state.t < max_iterations) {
    const Eigen::VectorXd before = r.state.theta.values();
    r.state = em_step(posteriors, train_prior, r.state);
    if ((r.state.theta.values() - before).cwiseAbs().maxCoeff() <= tol) {
      r.converged = true;
      break;
    }
  }
  r.theta_hat = r.state.theta;
  return r;
}

inline EmResult
em_run(const KlrModel& model, const UnlabeledDataset& test, const SimplexVector& train_prior,
       double tol = 1e-8, int max_iterations = 10000)
{
  return em_run(clamped_posteriors(model, test), train_prior, train_prior, tol, max_iterations);
}

struct EmKlrFit
{
  EmResult result;
  KlrModel model;
};

//! Posterior model by cross-validated KLR, then EM from the training prior.
inline EmKlrFit
estimate_em_klr(const LabeledDataset& train, const UnlabeledDataset& test, RngSeed seed,
                const KlrFitOptions& options = {}, double tol = 1e-8, int max_iterations = 10000)
{
  train.require_all_classes();
  if (train.dim() != test.dim()) {
    throw ValidationError("train and test dimensions differ");
  }
  EmKlrFit fit{ {}, fit_klr(train, Eigen::VectorXd::Ones(train.size()), seed, options) };
  fit.result = em_run(fit.model, test, train.class_proportions(), tol, max_iterations);
  return fit;
}

} // namespace priorshift
