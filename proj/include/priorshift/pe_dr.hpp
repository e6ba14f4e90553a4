#pragma once

#include "basis.hpp"
#include "cross_validation.hpp"
#include "dataset.hpp"
#include "simplex.hpp"
#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <sstream>
#include <vector>

namespace priorshift {

//! Analytic Pearson-divergence fit at fixed (sigma, lambda).
//!
//! For a prior theta the regularized ratio coefficients are
//!   alpha(theta) = (G + lambda R)^{-1} H theta,   R = diag(0, 1, ..., 1),
//! and plugging them into the empirical dual objective gives
//!   PE(theta) = theta^T A theta - 1/2,
//!   A = H^T M H - 1/2 H^T M G M H,   M = (G + lambda R)^{-1}.
//! The factorization and A are computed once; theta only enters through
//! H theta, so evaluating a new theta is c x c work.
class PeProblem
{
public:
  PeProblem(MomentMatrices moments, double lambda, BasisSpec basis = {})
    : moments_(std::move(moments))
    , lambda_(lambda)
    , basis_(std::move(basis))
  {
    if (!(lambda_ > 0.0)) {
      throw ValidationError("regularization lambda must be positive");
    }
    const Eigen::Index p = moments_.G.rows();
    if (moments_.G.cols() != p || moments_.H.rows() != p) {
      throw ValidationError("moment matrix shapes disagree");
    }
    Eigen::MatrixXd system = moments_.G;
    system.diagonal().tail(p - 1).array() += lambda_;
    factor_.compute(system);
    const auto& d = factor_.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    if (factor_.info() != Eigen::Success || !(d.cwiseAbs().minCoeff() > 1e-14 * dmax)) {
      std::ostringstream os;
      os << "G + lambda R is numerically singular at lambda = " << lambda_;
      throw NumericalError(os.str());
    }
    solved_h_ = factor_.solve(moments_.H);
    const Eigen::MatrixXd g_solved = moments_.G * solved_h_;
    quadratic_ = moments_.H.transpose() * solved_h_ - 0.5 * solved_h_.transpose() * g_solved;
    quadratic_ = 0.5 * (quadratic_ + quadratic_.transpose()).eval();
  }

  const MomentMatrices& moments() const noexcept { return moments_; }
  double lambda() const noexcept { return lambda_; }
  const BasisSpec& basis() const noexcept { return basis_; }
  int num_classes() const noexcept { return static_cast<int>(moments_.H.cols()); }
  //! The c x c matrix A of the closed form.
  const Eigen::MatrixXd& quadratic() const noexcept { return quadratic_; }

  //! (G + lambda R)^{-1} H theta, as M H theta with M H cached.
  Eigen::VectorXd solve_alpha(const SimplexVector& theta) const
  {
    check(theta);
    return solved_h_ * theta.values();
  }

  double objective_value(const Eigen::VectorXd& theta) const
  {
    return theta.dot(quadratic_ * theta) - 0.5;
  }

  //! (PE(theta), gradient) for any theta in R^c; the gradient is 2 A theta.
  std::pair<double, Eigen::VectorXd> objective(const Eigen::VectorXd& theta) const
  {
    const Eigen::VectorXd at = quadratic_ * theta;
    return { theta.dot(at) - 0.5, 2.0 * at };
  }

  std::pair<double, Eigen::VectorXd> objective(const SimplexVector& theta) const
  {
    check(theta);
    return objective(theta.values());
  }

  //! Residual ||(G + lambda R) alpha - H theta|| of a coefficient vector.
  double residual(const Eigen::VectorXd& alpha, const SimplexVector& theta) const
  {
    Eigen::VectorXd lhs = moments_.G * alpha;
    lhs.tail(lhs.size() - 1) += lambda_ * alpha.tail(alpha.size() - 1);
    return (lhs - moments_.H * theta.values()).norm();
  }

private:
  void check(const SimplexVector& theta) const
  {
    if (theta.size() != num_classes()) {
      throw ValidationError("prior length does not match class count");
    }
  }

  MomentMatrices moments_;
  double lambda_;
  BasisSpec basis_;
  Eigen::LDLT<Eigen::MatrixXd> factor_;
  Eigen::MatrixXd solved_h_;
  Eigen::MatrixXd quadratic_;
};

inline Eigen::VectorXd
solve_alpha(const PeProblem& problem, const SimplexVector& theta)
{
  return problem.solve_alpha(theta);
}

inline std::pair<double, Eigen::VectorXd>
pe_objective(const PeProblem& problem, const SimplexVector& theta)
{
  return problem.objective(theta);
}

struct PeEstimate
{
  SimplexVector theta_hat;
  double pe_value = 0.0;
  RatioModel alpha_hat;
  int iterations = 0;
  double stationarity = 0.0;
  double gradient_norm = 0.0;
  bool converged = false;
  //! Two-class only: the 0.001 grid found a better point than the descent.
  bool grid_override = false;
};

struct PeMinimizeOptions
{
  SimplexSolveOptions solver{};
  //! Grid resolution for the two-class verification scan.
  int verification_steps = 1000;
  double verification_slack = 1e-8;
};

//! Minimizes PE(theta) over the simplex by projected gradient from `init`.
//! With two classes the result is checked against an exhaustive grid over
//! theta_1; if the grid wins, descent restarts from the best grid point.
inline PeEstimate
minimize_theta(const PeProblem& problem, const SimplexVector& init,
               const PeMinimizeOptions& options = {})
{
  if (init.size() != problem.num_classes()) {
    throw ValidationError("initial prior length does not match class count");
  }
  const SimplexObjective f = [&](const Eigen::VectorXd& t) { return problem.objective(t); };
  SimplexSolveOptions solver = options.solver;
  // 1 / (largest curvature) is a safe first step for the quadratic
  const double curvature = 2.0 * problem.quadratic().cwiseAbs().rowwise().sum().maxCoeff();
  if (curvature > 0.0) {
    solver.initial_step = 1.0 / curvature;
  }
  SimplexSolveResult run = minimize_on_simplex(f, init.values(), solver);

  bool override_used = false;
  if (problem.num_classes() == 2) {
    auto value_at = [&](double t) {
      Eigen::Vector2d v(t, 1.0 - t);
      return problem.objective_value(v);
    };
    const auto [t_best, v_best] = grid_minimize_binary(value_at, options.verification_steps);
    if (run.value > v_best + options.verification_slack) {
      override_used = true;
      Eigen::VectorXd start(2);
      start << t_best, 1.0 - t_best;
      run = minimize_on_simplex(f, start, solver);
      if (run.value > v_best) {
        run.theta = start;
        std::tie(run.value, run.gradient) = f(start);
      }
    }
  }

  PeEstimate est;
  est.theta_hat = run.theta == init.values() ? init : SimplexVector::renormalized(run.theta);
  est.pe_value = problem.objective_value(est.theta_hat.values());
  est.alpha_hat = RatioModel{ problem.basis(), problem.solve_alpha(est.theta_hat) };
  est.iterations = run.iterations;
  est.stationarity = run.stationarity;
  est.gradient_norm = run.gradient.norm();
  est.converged = run.converged;
  est.grid_override = override_used;
  return est;
}

// ---------------------------------------------------------------------------
// Model selection

inline const std::vector<double>&
default_lambda_grid()
{
  static const std::vector<double> grid{ 1e-3, 1e-2, 1e-1, 1.0, 10.0 };
  return grid;
}

struct PeCvResult
{
  double sigma = 0.0;
  double lambda = 0.0;
  //! scores[i][j] for sigma_grid[i], lambda_grid[j].
  std::vector<std::vector<CvCell>> scores;
};

//! k-fold selection of (sigma, lambda) on the held-out PE fitting criterion
//!   J = 1/2 mean_{test out} r^2 - sum_y t_y mean_{train out, class y} r
//! with t fixed at the training class proportions. Centers stay fixed across
//! folds. A fold whose retained training part lacks a class is skipped; a
//! class absent from a held-out part drops out of that fold's sum.
inline PeCvResult
cross_validate_pe(const LabeledDataset& train,
                  const UnlabeledDataset& test,
                  const Eigen::MatrixXd& centers,
                  const std::vector<double>& sigma_grid,
                  const std::vector<double>& lambda_grid,
                  const FoldAssignment& folds)
{
  if (sigma_grid.empty() || lambda_grid.empty()) {
    throw ValidationError("cross-validation grids must be non-empty");
  }
  if (folds.num_folds < 2) {
    throw ValidationError("cross-validation needs at least 2 folds");
  }
  const int c = train.num_classes();
  const Eigen::VectorXd proportions = train.class_proportions().values();

  PeCvResult result;
  result.scores.assign(sigma_grid.size(), std::vector<CvCell>(lambda_grid.size()));

  // Test rows reordered so each fold's held-out rows form one contiguous block.
  std::vector<Eigen::Index> fold_start(static_cast<std::size_t>(folds.num_folds) + 1, 0);
  Eigen::MatrixXd ordered_test(test.size(), test.dim());
  {
    Eigen::Index row = 0;
    for (int k = 0; k < folds.num_folds; ++k) {
      for (auto i : folds.rows_out(folds.test_fold, k)) {
        ordered_test.row(row++) = test.features().row(i);
      }
      fold_start[static_cast<std::size_t>(k) + 1] = row;
    }
  }

  const Eigen::MatrixXd train_dist = squared_distances(train.features(), centers);
  const Eigen::MatrixXd test_dist = squared_distances(ordered_test, centers);

  // membership(i, k*c + y) = 1 when training row i has class y and fold k
  Eigen::MatrixXd membership = Eigen::MatrixXd::Zero(train.size(), static_cast<Eigen::Index>(folds.num_folds) * c);
  std::vector<int> fold_class_counts(static_cast<std::size_t>(folds.num_folds * c), 0);
  for (Eigen::Index i = 0; i < train.size(); ++i) {
    const int col = folds.train_fold[static_cast<std::size_t>(i)] * c + train.classes()[static_cast<std::size_t>(i)];
    membership(i, col) = 1.0;
    ++fold_class_counts[static_cast<std::size_t>(col)];
  }

  for (std::size_t si = 0; si < sigma_grid.size(); ++si) {
    const BasisSpec spec(centers, sigma_grid[si]);
    const Eigen::MatrixXd train_design = design_from_distances(train_dist, spec.sigma());
    const Eigen::MatrixXd test_design = design_from_distances(test_dist, spec.sigma());
    const Eigen::Index p = spec.size();
    auto held_block = [&](int k) {
      const auto first = fold_start[static_cast<std::size_t>(k)];
      return test_design.middleRows(first, fold_start[static_cast<std::size_t>(k) + 1] - first);
    };
    // Lower triangles only. Each fold's held-out Gram block is formed once;
    // the retained Gram is the total minus that block.
    std::vector<Eigen::MatrixXd> held_grams(static_cast<std::size_t>(folds.num_folds));
    Eigen::MatrixXd gram_all = Eigen::MatrixXd::Zero(p, p);
    for (int k = 0; k < folds.num_folds; ++k) {
      auto& g = held_grams[static_cast<std::size_t>(k)];
      g = Eigen::MatrixXd::Zero(p, p);
      g.selfadjointView<Eigen::Lower>().rankUpdate(held_block(k).transpose());
      gram_all += g;
    }
    const Eigen::MatrixXd fold_class_sums = train_design.transpose() * membership;
    Eigen::MatrixXd class_sums = Eigen::MatrixXd::Zero(p, c);
    for (int k = 0; k < folds.num_folds; ++k) {
      class_sums += fold_class_sums.middleCols(static_cast<Eigen::Index>(k) * c, c);
    }
    Eigen::MatrixXd system(p, p);

    for (int k = 0; k < folds.num_folds; ++k) {
      const auto test_out = folds.rows_out(folds.test_fold, k);
      const Eigen::Index test_in_count = test.size() - static_cast<Eigen::Index>(test_out.size());
      if (test_in_count < 1 || test_out.empty()) {
        continue;
      }

      // retained and held-out class sums of phi, from the per-(fold, class)
      // sums computed once per width
      Eigen::MatrixXd h_out = fold_class_sums.middleCols(static_cast<Eigen::Index>(k) * c, c);
      Eigen::MatrixXd h_in = class_sums - h_out;
      std::vector<int> n_in(static_cast<std::size_t>(c), 0), n_out(static_cast<std::size_t>(c), 0);
      for (int y = 0; y < c; ++y) {
        n_out[static_cast<std::size_t>(y)] = fold_class_counts[static_cast<std::size_t>(k * c + y)];
        n_in[static_cast<std::size_t>(y)] = train.class_count(y) - n_out[static_cast<std::size_t>(y)];
      }
      bool usable = true;
      Eigen::VectorXd target = Eigen::VectorXd::Zero(p);
      Eigen::VectorXd held_linear = Eigen::VectorXd::Zero(p);
      for (int y = 0; y < c; ++y) {
        if (n_in[static_cast<std::size_t>(y)] == 0) {
          usable = false;
          break;
        }
        target += proportions(y) * h_in.col(y) / n_in[static_cast<std::size_t>(y)];
        if (n_out[static_cast<std::size_t>(y)] > 0) {
          held_linear += proportions(y) * h_out.col(y) / n_out[static_cast<std::size_t>(y)];
        }
      }
      if (!usable) {
        continue;
      }

      const auto held_test = held_block(k);
      const Eigen::MatrixXd g_in =
        (gram_all - held_grams[static_cast<std::size_t>(k)]) / static_cast<double>(test_in_count);

      for (std::size_t li = 0; li < lambda_grid.size(); ++li) {
        system = g_in;
        system.diagonal().tail(p - 1).array() += lambda_grid[li];
        Eigen::VectorXd alpha;
        {
          Eigen::LLT<Eigen::Ref<Eigen::MatrixXd>> llt(system);
          if (llt.info() == Eigen::Success) {
            alpha = llt.solve(target);
          }
        }
        if (alpha.size() == 0) {
          system = g_in;
          system.diagonal().tail(p - 1).array() += lambda_grid[li];
          alpha = system.selfadjointView<Eigen::Lower>().ldlt().solve(target);
        }
        const double sq = (held_test * alpha).squaredNorm() / static_cast<double>(test_out.size());
        const double score = 0.5 * sq - held_linear.dot(alpha);
        if (std::isfinite(score)) {
          result.scores[si][li].add(score);
        }
      }
    }
  }
  const auto [bi, bj] = select_min_cell(result.scores, sigma_grid, lambda_grid);
  result.sigma = sigma_grid[bi];
  result.lambda = lambda_grid[bj];
  return result;
}

struct PeDrOptions
{
  //! Fixed width; when unset it is cross-validated over `sigma_grid` or,
  //! if that is empty too, the median-scaled grid of the training inputs.
  std::optional<double> sigma;
  std::optional<double> lambda;
  std::vector<double> sigma_grid;
  std::vector<double> lambda_grid = default_lambda_grid();
  int folds = 5;
  Eigen::Index center_cap = 500;
  PeMinimizeOptions minimize{};
};

struct PeDrFit
{
  PeEstimate estimate;
  double sigma = 0.0;
  double lambda = 0.0;
};

//! The full pipeline: centers, (sigma, lambda) selection, factorization and
//! minimization from the training proportions.
inline PeDrFit
estimate_pe_dr(const LabeledDataset& train, const UnlabeledDataset& test, RngSeed seed,
               const PeDrOptions& options = {})
{
  train.require_all_classes();
  if (train.dim() != test.dim()) {
    throw ValidationError("train and test dimensions differ");
  }
  const Eigen::MatrixXd centers = select_centers(train.features(), options.center_cap, seed.derive(1));

  double sigma = 0.0;
  double lambda = 0.0;
  if (options.sigma && options.lambda) {
    sigma = *options.sigma;
    lambda = *options.lambda;
  } else {
    std::vector<double> sigmas = options.sigma ? std::vector<double>{ *options.sigma }
                                 : options.sigma_grid.empty() ? width_grid_for(train.features())
                                                              : options.sigma_grid;
    std::vector<double> lambdas = options.lambda ? std::vector<double>{ *options.lambda } : options.lambda_grid;
    const auto folds = make_folds(train.classes(), train.num_classes(), test.size(), options.folds,
                                  seed.derive(2));
    const auto cv = cross_validate_pe(train, test, centers, sigmas, lambdas, folds);
    sigma = cv.sigma;
    lambda = cv.lambda;
  }

  const BasisSpec spec(centers, sigma);
  const PeProblem problem(build_moments(spec, train, test), lambda, spec);
  return PeDrFit{ minimize_theta(problem, train.class_proportions(), options.minimize), sigma, lambda };
}

} // namespace priorshift
