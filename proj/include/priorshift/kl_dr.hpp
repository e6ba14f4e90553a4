#pragma once

#include "basis.hpp"
#include "cross_validation.hpp"
#include "dataset.hpp"
#include "simplex.hpp"
#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

namespace priorshift {

//! Inner solver settings for the KL dual.
struct KlDualOptions
{
  //! Total Newton steps over all barrier stages.
  int max_iterations = 400;
  int max_newton_steps = 50;
  double barrier_shrink = 0.1;
  double barrier_final = 1e-14;
  //! A solution counts as converged when its KKT residual is below this.
  double kkt_tolerance = 1e-5;
  //! Floor on r(x'_i) inside the log; the gradient is zero below it.
  double log_floor = 1e-12;
};

struct KlDualSolution
{
  double kl_estimate = 0.0;
  Eigen::VectorXd alpha;
  int iterations = 0;
  //! max over l of |dL/dalpha_l| (free) or max(dL/dalpha_l, 0) (at bound).
  double kkt_residual = 0.0;
  bool converged = false;
};

//! Empirical KL dual under the mixture model, for a fixed basis:
//!   L(alpha; theta) = -sum_y theta_y mean_{i: y_i = y} r(x_i)
//!                     + mean_i log r(x'_i) + 1,   alpha >= 0,
//! whose maximum estimates KL(p' || q'). At the optimum r approximates
//! p'(x) / q'(x); the objective is concave in alpha and its maximum is convex
//! in theta.
class KlDualProblem
{
public:
  KlDualProblem(Eigen::MatrixXd class_means, Eigen::MatrixXd test_design, BasisSpec basis = {},
                KlDualOptions options = {})
    : class_means_(std::move(class_means))
    , test_design_(std::move(test_design))
    , basis_(std::move(basis))
    , options_(options)
  {
    if (class_means_.rows() != test_design_.cols()) {
      throw ValidationError("class means and test design disagree on basis size");
    }
    if (test_design_.rows() < 1) {
      throw ValidationError("KL dual needs at least one test point");
    }
  }

  static KlDualProblem build(const BasisSpec& spec, const LabeledDataset& train,
                             const UnlabeledDataset& test, KlDualOptions options = {})
  {
    train.require_all_classes();
    Eigen::MatrixXd test_design = design_matrix(spec, test.features());
    MomentMatrices m =
      moments_from_design(design_matrix(spec, train.features()), train.classes(), train.num_classes(),
                          Eigen::MatrixXd::Ones(1, spec.size()));
    return KlDualProblem(std::move(m.H), std::move(test_design), spec, options);
  }

  Eigen::Index num_params() const noexcept { return test_design_.cols(); }
  int num_classes() const noexcept { return static_cast<int>(class_means_.cols()); }
  const Eigen::MatrixXd& class_means() const noexcept { return class_means_; }
  const BasisSpec& basis() const noexcept { return basis_; }

  double objective(const Eigen::VectorXd& alpha, const Eigen::VectorXd& theta) const
  {
    const Eigen::VectorXd r = test_design_ * alpha;
    double log_sum = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      log_sum += std::log(std::max(r(i), options_.log_floor));
    }
    return -(class_means_ * theta).dot(alpha) + log_sum / static_cast<double>(r.size()) + 1.0;
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& alpha, const Eigen::VectorXd& theta) const
  {
    const Eigen::VectorXd r = test_design_ * alpha;
    Eigen::VectorXd inv(r.size());
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      inv(i) = r(i) > options_.log_floor ? 1.0 / r(i) : 0.0;
    }
    return -(class_means_ * theta) + test_design_.transpose() * inv / static_cast<double>(r.size());
  }

  double kkt_residual(const Eigen::VectorXd& alpha, const Eigen::VectorXd& grad) const
  {
    double worst = 0.0;
    for (Eigen::Index l = 0; l < alpha.size(); ++l) {
      worst = std::max(worst, alpha(l) > 1e-8 ? std::abs(grad(l)) : std::max(grad(l), 0.0));
    }
    return worst;
  }

  //! Maximizes L over alpha >= 0 with a primal log-barrier method: Newton
  //! steps on -L - mu * sum log(alpha_l) with mu shrinking geometrically to
  //! `barrier_final` (the duality gap is at most mu * (b+1)). The barrier
  //! Hessian keeps the Newton systems well posed although neighbouring
  //! Gaussian columns are nearly collinear. Coordinates with h_l <= 0 are
  //! held at zero. Starts from `warm` (pulled into the interior) if given,
  //! else from the constant vector 1/(b+1).
  KlDualSolution maximize(const Eigen::VectorXd& theta, const Eigen::VectorXd* warm = nullptr) const
  {
    const Eigen::Index p = num_params();
    const Eigen::Index n = test_design_.rows();
    const double inv_n = 1.0 / static_cast<double>(n);
    const Eigen::VectorXd h = class_means_ * theta;

    std::vector<Eigen::Index> live;
    for (Eigen::Index l = 0; l < p; ++l) {
      if (h(l) > 0.0) {
        live.push_back(l);
      }
    }
    const Eigen::Index m = static_cast<Eigen::Index>(live.size());
    KlDualSolution sol;
    sol.alpha = Eigen::VectorXd::Zero(p);
    if (m == 0) {
      sol.kl_estimate = objective(sol.alpha, theta);
      return sol;
    }
    Eigen::MatrixXd phi(n, m);
    Eigen::VectorXd hl(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      phi.col(j) = test_design_.col(live[static_cast<std::size_t>(j)]);
      hl(j) = h(live[static_cast<std::size_t>(j)]);
    }

    Eigen::VectorXd a = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(p));
    if (warm && warm->size() == p) {
      const double top = warm->maxCoeff();
      if (top > 0.0) {
        for (Eigen::Index j = 0; j < m; ++j) {
          a(j) = std::max((*warm)(live[static_cast<std::size_t>(j)]), 1e-3 * top);
        }
      }
    }
    if (!((phi * a).array() > options_.log_floor).all()) {
      a.setConstant(1.0 / static_cast<double>(p));
    }

    // F(a) = h.a - mean log r, minimized; r > 0 is maintained by the steps
    auto value = [&](const Eigen::VectorXd& x, double mu) {
      const Eigen::VectorXd r = phi * x;
      double v = hl.dot(x);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!(r(i) > 0.0)) {
          return std::numeric_limits<double>::infinity();
        }
        v -= std::log(r(i)) * inv_n;
      }
      if (mu > 0.0) {
        v -= mu * x.array().log().sum();
      }
      return v;
    };

    const Eigen::VectorXd g0 = hl - phi.transpose() * (phi * a).cwiseInverse() * inv_n;
    double mu = std::max(options_.barrier_final, std::min(1.0, a.dot(g0.cwiseAbs()) / static_cast<double>(m)));
    Eigen::MatrixXd weighted(n, m);
    Eigen::MatrixXd hess(m, m);
    for (;;) {
      double f = value(a, mu);
      for (int k = 0; k < options_.max_newton_steps && sol.iterations < options_.max_iterations;
           ++k, ++sol.iterations) {
        const Eigen::VectorXd w = (phi * a).cwiseInverse();
        const Eigen::VectorXd grad = hl - phi.transpose() * w * inv_n - mu * a.cwiseInverse();
        weighted = phi.array().colwise() * w.array();
        hess.setZero();
        hess.selfadjointView<Eigen::Lower>().rankUpdate(weighted.transpose(), inv_n);
        hess.diagonal().array() += mu * a.array().square().inverse();
        Eigen::LDLT<Eigen::MatrixXd> ldlt(hess.selfadjointView<Eigen::Lower>());
        Eigen::VectorXd d = -ldlt.solve(grad);
        if (!d.allFinite() || d.dot(grad) >= 0.0) {
          d = -grad.cwiseQuotient(hess.diagonal());
        }
        const double decrement = -grad.dot(d);
        if (decrement <= 1e-12 * (1.0 + std::abs(f))) {
          break;
        }
        double t = 1.0;
        for (Eigen::Index j = 0; j < m; ++j) {
          if (d(j) < 0.0) {
            t = std::min(t, -0.99 * a(j) / d(j));
          }
        }
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
          const Eigen::VectorXd candidate = a + t * d;
          const double fc = value(candidate, mu);
          if (std::isfinite(fc) && fc <= f - 1e-4 * t * decrement) {
            a = candidate;
            f = fc;
            accepted = true;
            break;
          }
        }
        if (!accepted) {
          break;
        }
      }
      if (mu <= options_.barrier_final || sol.iterations >= options_.max_iterations) {
        break;
      }
      mu = std::max(options_.barrier_final, mu * options_.barrier_shrink);
    }

    for (Eigen::Index j = 0; j < m; ++j) {
      sol.alpha(live[static_cast<std::size_t>(j)]) = a(j);
    }
    sol.kl_estimate = objective(sol.alpha, theta);
    Eigen::VectorXd grad_l = gradient(sol.alpha, theta);
    for (Eigen::Index l = 0; l < p; ++l) {
      if (!(h(l) > 0.0)) {
        grad_l(l) = std::min(grad_l(l), 0.0);
      }
    }
    sol.kkt_residual = kkt_residual(sol.alpha, grad_l);
    sol.converged = sol.kkt_residual <= options_.kkt_tolerance;
    return sol;
  }

private:
  Eigen::MatrixXd class_means_;
  Eigen::MatrixXd test_design_;
  BasisSpec basis_;
  KlDualOptions options_;
};

struct KlDualResult
{
  double kl_estimate = 0.0;
  RatioModel alpha;
  int iterations = 0;
  double kkt_residual = 0.0;
  bool converged = false;
};

inline KlDualResult
kl_dual_maximize(const LabeledDataset& train, const UnlabeledDataset& test, const BasisSpec& spec,
                 const SimplexVector& theta, KlDualOptions options = {})
{
  const auto problem = KlDualProblem::build(spec, train, test, options);
  if (theta.size() != problem.num_classes()) {
    throw ValidationError("prior length does not match class count");
  }
  auto sol = problem.maximize(theta.values());
  return KlDualResult{ sol.kl_estimate, RatioModel{ spec, sol.alpha }, sol.iterations,
                       sol.kkt_residual, sol.converged };
}

struct KlThetaOptions
{
  //! Two classes: size of the coarse theta_1 grid before local trisection.
  int grid_points = 101;
  double refine_tolerance = 1e-4;
  SimplexSolveOptions solver{ 300, 1e-6, 1.0 };
};

struct KlThetaResult
{
  SimplexVector theta_hat;
  double kl_value = 0.0;
  int inner_solves = 0;
  int inner_failures = 0;
};

//! Minimizes max_alpha L(alpha; theta) over the simplex. Two classes: coarse
//! grid plus trisection of the bracket around the best grid point. More
//! classes: projected gradient using the envelope gradient -H^T alpha*(theta),
//! warm-starting each inner solve from the previous maximizer.
inline KlThetaResult
kl_minimize_theta(const KlDualProblem& problem, const SimplexVector& init, const KlThetaOptions& options = {})
{
  const int c = problem.num_classes();
  if (init.size() != c) {
    throw ValidationError("initial prior length does not match class count");
  }
  KlThetaResult out;
  Eigen::VectorXd warm;
  auto inner = [&](const Eigen::VectorXd& theta) -> std::optional<KlDualSolution> {
    ++out.inner_solves;
    auto sol = problem.maximize(theta, warm.size() ? &warm : nullptr);
    if (!std::isfinite(sol.kl_estimate) || !sol.alpha.allFinite()) {
      ++out.inner_failures;
      return std::nullopt;
    }
    warm = sol.alpha;
    return sol;
  };

  if (c == 1) {
    auto sol = inner(init.values());
    out.theta_hat = init;
    out.kl_value = sol ? sol->kl_estimate : std::numeric_limits<double>::infinity();
    return out;
  }

  if (c == 2) {
    auto value_at = [&](double t) {
      Eigen::Vector2d th(t, 1.0 - t);
      auto sol = inner(th);
      return sol ? sol->kl_estimate : std::numeric_limits<double>::infinity();
    };
    const int m = std::max(options.grid_points, 3);
    std::vector<double> values(static_cast<std::size_t>(m));
    std::size_t best = 0;
    for (int k = 0; k < m; ++k) {
      values[static_cast<std::size_t>(k)] = value_at(static_cast<double>(k) / (m - 1));
      if (values[static_cast<std::size_t>(k)] < values[best]) {
        best = static_cast<std::size_t>(k);
      }
    }
    if (!std::isfinite(values[best])) {
      throw NumericalError("KL dual failed at every grid point");
    }
    const double h = 1.0 / (m - 1);
    const double lo = std::max(0.0, static_cast<double>(best) * h - h);
    const double hi = std::min(1.0, static_cast<double>(best) * h + h);
    auto [t, v] = trisect_minimize(value_at, lo, hi, options.refine_tolerance);
    if (!(v <= values[best])) {
      t = static_cast<double>(best) * h;
      v = values[best];
    }
    out.theta_hat = SimplexVector::binary(t);
    out.kl_value = v;
    return out;
  }

  const SimplexObjective f = [&](const Eigen::VectorXd& theta) -> std::pair<double, Eigen::VectorXd> {
    auto sol = inner(theta);
    if (!sol) {
      return { std::numeric_limits<double>::infinity(), Eigen::VectorXd::Zero(c) };
    }
    return { sol->kl_estimate, -problem.class_means().transpose() * sol->alpha };
  };
  auto run = minimize_on_simplex(f, init.values(), options.solver);
  out.theta_hat = SimplexVector::renormalized(run.theta);
  out.kl_value = run.value;
  return out;
}

inline KlThetaResult
kl_minimize_theta(const LabeledDataset& train, const UnlabeledDataset& test, const BasisSpec& spec,
                  const SimplexVector& init, const KlThetaOptions& options = {})
{
  return kl_minimize_theta(KlDualProblem::build(spec, train, test), init, options);
}

// ---------------------------------------------------------------------------
// Width selection and pipeline

struct KlCvResult
{
  double sigma = 0.0;
  std::vector<CvCell> scores;
};

//! k-fold choice of sigma by the held-out dual objective at the training
//! class proportions (score = -L_out, minimized; ties to the larger sigma).
inline KlCvResult
cross_validate_kl(const LabeledDataset& train, const UnlabeledDataset& test,
                  const Eigen::MatrixXd& centers, const std::vector<double>& sigma_grid,
                  const FoldAssignment& folds, KlDualOptions options = {})
{
  if (sigma_grid.empty()) {
    throw ValidationError("cross-validation grid must be non-empty");
  }
  const int c = train.num_classes();
  const Eigen::VectorXd proportions = train.class_proportions().values();
  std::vector<std::vector<CvCell>> cells(sigma_grid.size(), std::vector<CvCell>(1));

  for (std::size_t si = 0; si < sigma_grid.size(); ++si) {
    const BasisSpec spec(centers, sigma_grid[si]);
    const Eigen::MatrixXd train_design = design_matrix(spec, train.features());
    const Eigen::MatrixXd test_design = design_matrix(spec, test.features());
    const Eigen::Index p = spec.size();
    for (int k = 0; k < folds.num_folds; ++k) {
      const auto test_in = folds.rows_in(folds.test_fold, k);
      const auto test_out = folds.rows_out(folds.test_fold, k);
      if (test_in.empty() || test_out.empty()) {
        continue;
      }
      Eigen::MatrixXd h_in = Eigen::MatrixXd::Zero(p, c);
      Eigen::MatrixXd h_out = Eigen::MatrixXd::Zero(p, c);
      std::vector<int> n_in(static_cast<std::size_t>(c), 0), n_out(static_cast<std::size_t>(c), 0);
      for (Eigen::Index i = 0; i < train.size(); ++i) {
        const auto y = static_cast<std::size_t>(train.classes()[static_cast<std::size_t>(i)]);
        if (folds.train_fold[static_cast<std::size_t>(i)] == k) {
          h_out.col(static_cast<Eigen::Index>(y)) += train_design.row(i).transpose();
          ++n_out[y];
        } else {
          h_in.col(static_cast<Eigen::Index>(y)) += train_design.row(i).transpose();
          ++n_in[y];
        }
      }
      bool usable = true;
      Eigen::VectorXd held_linear = Eigen::VectorXd::Zero(p);
      for (int y = 0; y < c; ++y) {
        const auto yy = static_cast<std::size_t>(y);
        if (n_in[yy] == 0) {
          usable = false;
          break;
        }
        h_in.col(y) /= n_in[yy];
        if (n_out[yy] > 0) {
          held_linear += proportions(y) * h_out.col(y) / n_out[yy];
        }
      }
      if (!usable) {
        continue;
      }
      Eigen::MatrixXd design_in(static_cast<Eigen::Index>(test_in.size()), p);
      for (std::size_t j = 0; j < test_in.size(); ++j) {
        design_in.row(static_cast<Eigen::Index>(j)) = test_design.row(test_in[j]);
      }
      const KlDualProblem fold_problem(h_in, std::move(design_in), spec, options);
      const auto sol = fold_problem.maximize(proportions);
      double log_sum = 0.0;
      for (auto i : test_out) {
        log_sum += std::log(std::max(test_design.row(i).dot(sol.alpha), options.log_floor));
      }
      const double held = -held_linear.dot(sol.alpha) + log_sum / static_cast<double>(test_out.size()) + 1.0;
      if (std::isfinite(held)) {
        cells[si][0].add(-held);
      }
    }
  }
  const std::vector<double> dummy{ 0.0 };
  const auto [bi, bj] = select_min_cell(cells, sigma_grid, dummy);
  (void)bj;
  KlCvResult res;
  res.sigma = sigma_grid[bi];
  for (auto& row : cells) {
    res.scores.push_back(row[0]);
  }
  return res;
}

struct KlDrOptions
{
  std::optional<double> sigma;
  std::vector<double> sigma_grid;
  int folds = 5;
  Eigen::Index center_cap = 500;
  KlDualOptions dual{};
  //! Final barrier weight used during width selection only.
  double cv_barrier_final = 1e-10;
  KlThetaOptions theta{};
};

struct KlDrFit
{
  KlThetaResult result;
  double sigma = 0.0;
};

inline KlDrFit
estimate_kl_dr(const LabeledDataset& train, const UnlabeledDataset& test, RngSeed seed,
               const KlDrOptions& options = {})
{
  train.require_all_classes();
  if (train.dim() != test.dim()) {
    throw ValidationError("train and test dimensions differ");
  }
  const Eigen::MatrixXd centers = select_centers(train.features(), options.center_cap, seed.derive(1));
  double sigma = 0.0;
  if (options.sigma) {
    sigma = *options.sigma;
  } else {
    const auto grid = options.sigma_grid.empty() ? width_grid_for(train.features()) : options.sigma_grid;
    const auto folds =
      make_folds(train.classes(), train.num_classes(), test.size(), options.folds, seed.derive(2));
    KlDualOptions cv_dual = options.dual;
    cv_dual.barrier_final = std::max(cv_dual.barrier_final, options.cv_barrier_final);
    sigma = cross_validate_kl(train, test, centers, grid, folds, cv_dual).sigma;
  }
  const BasisSpec spec(centers, sigma);
  const auto problem = KlDualProblem::build(spec, train, test, options.dual);
  return KlDrFit{ kl_minimize_theta(problem, train.class_proportions(), options.theta), sigma };
}

} // namespace priorshift
