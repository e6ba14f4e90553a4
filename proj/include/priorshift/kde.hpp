#pragma once

#include "basis.hpp"
#include "dataset.hpp"
#include "mixture.hpp"
#include "simplex.hpp"
#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace priorshift {

//! Gaussian kernel density estimate with one scalar bandwidth:
//!   p(x) = (1/m) sum_j (2 pi h^2)^(-d/2) exp(-|x - x_j|^2 / (2 h^2)).
class KdeModel
{
public:
  KdeModel() = default;

  KdeModel(Eigen::MatrixXd points, double bandwidth)
    : points_(std::move(points))
    , bandwidth_(bandwidth)
  {
    if (points_.rows() < 1) {
      throw ValidationError("KDE needs at least one point");
    }
    if (!(bandwidth_ > 0.0) || !std::isfinite(bandwidth_)) {
      throw ValidationError("KDE bandwidth must be positive and finite");
    }
  }

  const Eigen::MatrixXd& points() const noexcept { return points_; }
  double bandwidth() const noexcept { return bandwidth_; }

  double log_density(const Eigen::Ref<const Eigen::RowVectorXd>& x) const
  {
    const Eigen::Index m = points_.rows();
    const double h2 = bandwidth_ * bandwidth_;
    double top = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd e(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      e(j) = -(points_.row(j) - x).squaredNorm() / (2.0 * h2);
      top = std::max(top, e(j));
    }
    const double lse = top + std::log((e.array() - top).exp().sum());
    return lse - std::log(static_cast<double>(m)) - log_normalizer();
  }

  double density(const Eigen::Ref<const Eigen::RowVectorXd>& x) const { return std::exp(log_density(x)); }

  Eigen::VectorXd log_densities(const Eigen::MatrixXd& queries) const
  {
    Eigen::VectorXd out(queries.rows());
    for (Eigen::Index i = 0; i < queries.rows(); ++i) {
      out(i) = log_density(queries.row(i));
    }
    return out;
  }

  //! log (2 pi h^2)^(d/2)
  double log_normalizer() const
  {
    return 0.5 * static_cast<double>(points_.cols()) * std::log(2.0 * std::numbers::pi * bandwidth_ * bandwidth_);
  }

private:
  Eigen::MatrixXd points_;
  double bandwidth_ = 1.0;
};

enum class BandwidthMethod
{
  likelihood_cv,
  least_squares_cv
};

namespace detail {

inline Eigen::MatrixXd
pairwise_squared_distances(const Eigen::MatrixXd& x)
{
  const Eigen::Index m = x.rows();
  Eigen::MatrixXd d(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    d(j, j) = 0.0;
    for (Eigen::Index k = j + 1; k < m; ++k) {
      d(j, k) = d(k, j) = (x.row(j) - x.row(k)).squaredNorm();
    }
  }
  return d;
}

} // namespace detail

//! Leave-one-out log-likelihood sum_j log p_{-j}(x_j) of bandwidth h.
inline double
loo_log_likelihood(const Eigen::MatrixXd& points, double h)
{
  const Eigen::Index m = points.rows();
  const Eigen::MatrixXd d2 = detail::pairwise_squared_distances(points);
  const double log_norm = 0.5 * static_cast<double>(points.cols()) * std::log(2.0 * std::numbers::pi * h * h);
  double total = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k != j) {
        top = std::max(top, -d2(j, k) / (2.0 * h * h));
      }
    }
    double s = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (k != j) {
        s += std::exp(-d2(j, k) / (2.0 * h * h) - top);
      }
    }
    total += top + std::log(s) - std::log(static_cast<double>(m - 1)) - log_norm;
  }
  return total;
}

//! Least-squares CV score  int p^2 - (2/m) sum_j p_{-j}(x_j), with the
//! integral in closed form (pairwise Gaussians of variance 2 h^2).
inline double
lscv_score(const Eigen::MatrixXd& points, double h)
{
  const Eigen::Index m = points.rows();
  const double d = static_cast<double>(points.cols());
  const Eigen::MatrixXd d2 = detail::pairwise_squared_distances(points);
  const double norm_conv = std::exp(-0.5 * d * std::log(4.0 * std::numbers::pi * h * h));
  const double norm_kern = std::exp(-0.5 * d * std::log(2.0 * std::numbers::pi * h * h));
  double integral = 0.0;
  double loo = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index k = 0; k < m; ++k) {
      integral += std::exp(-d2(j, k) / (4.0 * h * h));
      if (k != j) {
        loo += std::exp(-d2(j, k) / (2.0 * h * h));
      }
    }
  }
  const double md = static_cast<double>(m);
  integral *= norm_conv / (md * md);
  loo *= norm_kern / (md - 1.0);
  return integral - 2.0 * loo / md;
}

struct KdeFit
{
  KdeModel model;
  std::vector<double> scores;
};

//! Picks the grid bandwidth that maximizes the LOO likelihood or minimizes
//! the LSCV score; ties go to the larger bandwidth. An empty grid means the
//! median-scaled grid of the points.
inline KdeFit
fit_kde(const Eigen::MatrixXd& points, BandwidthMethod method, std::vector<double> grid = {})
{
  if (points.rows() < 2) {
    throw ValidationError("bandwidth selection needs at least two points");
  }
  bool distinct = false;
  for (Eigen::Index j = 1; j < points.rows() && !distinct; ++j) {
    distinct = points.row(j) != points.row(0);
  }
  if (!distinct) {
    throw ValidationError("all points coincide; bandwidth unidentifiable");
  }
  if (grid.empty()) {
    grid = width_grid_for(points);
  }
  KdeFit fit;
  double best = std::numeric_limits<double>::infinity();
  double best_h = grid.front();
  for (double h : grid) {
    const double score = method == BandwidthMethod::likelihood_cv ? -loo_log_likelihood(points, h) : lscv_score(points, h);
    fit.scores.push_back(score);
    if (!std::isfinite(score)) {
      continue;
    }
    if (score < best || (score == best && h > best_h)) {
      best = score;
      best_h = h;
    }
  }
  if (!std::isfinite(best)) {
    throw NumericalError("no bandwidth on the grid gives a finite CV score");
  }
  fit.model = KdeModel(points, best_h);
  return fit;
}

//! n' x c matrix of log p(x'_i | y).
inline Eigen::MatrixXd
class_log_densities(const std::vector<KdeModel>& class_kdes, const UnlabeledDataset& test)
{
  Eigen::MatrixXd out(test.size(), static_cast<Eigen::Index>(class_kdes.size()));
  for (std::size_t y = 0; y < class_kdes.size(); ++y) {
    out.col(static_cast<Eigen::Index>(y)) = class_kdes[y].log_densities(test.features());
  }
  return out;
}

//! Rescales each row by its maximum so that exp() stays in range; zero rows
//! stay zero.
inline Eigen::MatrixXd
row_scaled_densities(const Eigen::MatrixXd& log_densities)
{
  Eigen::MatrixXd out(log_densities.rows(), log_densities.cols());
  for (Eigen::Index i = 0; i < log_densities.rows(); ++i) {
    const double top = log_densities.row(i).maxCoeff();
    if (!std::isfinite(top)) {
      out.row(i).setZero();
      continue;
    }
    out.row(i) = (log_densities.row(i).array() - top).exp();
  }
  return out;
}

//! Maximizes the test log-likelihood of q'(x) = sum_y theta_y p(x|y) by the
//! multiplicative fixed-point update.
inline FixedPointResult
kl_kde_fixed_point(const std::vector<KdeModel>& class_kdes, const UnlabeledDataset& test, const SimplexVector& init,
                   double tol = 1e-8, int max_iterations = 10000)
{
  if (static_cast<int>(class_kdes.size()) != init.size()) {
    throw ValidationError("one KDE per class required");
  }
  return mixture_fixed_point(row_scaled_densities(class_log_densities(class_kdes, test)), init, tol, max_iterations);
}

struct PeKdeResult
{
  SimplexVector theta;
  double value = 0.0;
  Eigen::Index skipped_points = 0;
  bool converged = false;
};

//! Quadratic plug-in objective (1/(2m)) |Q theta - 1|^2 with
//! Q[i, y] = p(x'_i | y) / p'(x'_i); points with p'(x'_i) < 1e-300 are left
//! out (m is the number kept).
struct PeKdeObjective
{
  Eigen::MatrixXd ratios;
  Eigen::Index skipped = 0;

  static PeKdeObjective build(const std::vector<KdeModel>& class_kdes, const KdeModel& test_kde,
                              const UnlabeledDataset& test)
  {
    const Eigen::MatrixXd logs = class_log_densities(class_kdes, test);
    const Eigen::VectorXd log_test = test_kde.log_densities(test.features());
    const double cutoff = std::log(1e-300);
    PeKdeObjective obj;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < test.size(); ++i) {
      if (log_test(i) < cutoff) {
        ++obj.skipped;
      } else {
        keep.push_back(i);
      }
    }
    if (keep.empty()) {
      throw NumericalError("test density vanishes at every test point");
    }
    obj.ratios.resize(static_cast<Eigen::Index>(keep.size()), logs.cols());
    for (std::size_t k = 0; k < keep.size(); ++k) {
      obj.ratios.row(static_cast<Eigen::Index>(k)) = (logs.row(keep[k]).array() - log_test(keep[k])).exp();
    }
    return obj;
  }

  double value(const Eigen::VectorXd& theta) const
  {
    return 0.5 * (ratios * theta - Eigen::VectorXd::Ones(ratios.rows())).squaredNorm() /
           static_cast<double>(ratios.rows());
  }

  std::pair<double, Eigen::VectorXd> operator()(const Eigen::VectorXd& theta) const
  {
    const Eigen::VectorXd resid = ratios * theta - Eigen::VectorXd::Ones(ratios.rows());
    const double m = static_cast<double>(ratios.rows());
    return { 0.5 * resid.squaredNorm() / m, ratios.transpose() * resid / m };
  }

  //! Constant Hessian Q^T Q / m.
  Eigen::MatrixXd hessian() const { return ratios.transpose() * ratios / static_cast<double>(ratios.rows()); }
};

inline PeKdeResult
pe_kde_minimize(const std::vector<KdeModel>& class_kdes, const KdeModel& test_kde, const UnlabeledDataset& test,
                const SimplexVector& init, const SimplexSolveOptions& options = {})
{
  if (static_cast<int>(class_kdes.size()) != init.size()) {
    throw ValidationError("one KDE per class required");
  }
  const auto obj = PeKdeObjective::build(class_kdes, test_kde, test);
  SimplexSolveOptions solver = options;
  const double curvature = obj.hessian().cwiseAbs().rowwise().sum().maxCoeff();
  if (curvature > 0.0) {
    solver.initial_step = 1.0 / curvature;
  }
  const SimplexObjective f = [&](const Eigen::VectorXd& t) { return obj(t); };
  auto run = minimize_on_simplex(f, init.values(), solver);
  if (init.size() == 2) {
    auto at = [&](double t) { return obj.value(Eigen::Vector2d(t, 1.0 - t)); };
    const auto [t_best, v_best] = grid_minimize_binary(at, 1000);
    if (run.value > v_best + 1e-8) {
      run = minimize_on_simplex(f, Eigen::Vector2d(t_best, 1.0 - t_best), solver);
      if (run.value > v_best) {
        run.theta = Eigen::Vector2d(t_best, 1.0 - t_best);
        run.value = v_best;
      }
    }
  }
  PeKdeResult r;
  r.theta = run.theta == init.values() ? init : SimplexVector::renormalized(run.theta);
  r.value = obj.value(r.theta.values());
  r.skipped_points = obj.skipped;
  r.converged = run.converged;
  return r;
}

//! One KDE per class, bandwidths by the given CV criterion.
inline std::vector<KdeModel>
fit_class_kdes(const LabeledDataset& train, BandwidthMethod method, const std::vector<double>& grid = {})
{
  train.require_all_classes();
  std::vector<KdeModel> out;
  for (int y = 0; y < train.num_classes(); ++y) {
    const auto rows = train.rows_of_class(y);
    Eigen::MatrixXd pts(static_cast<Eigen::Index>(rows.size()), train.dim());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      pts.row(static_cast<Eigen::Index>(k)) = train.features().row(rows[k]);
    }
    out.push_back(fit_kde(pts, method, grid).model);
  }
  return out;
}

inline FixedPointResult
estimate_kl_kde(const LabeledDataset& train, const UnlabeledDataset& test, double tol = 1e-8, int max_iterations = 10000)
{
  if (train.dim() != test.dim()) {
    throw ValidationError("train and test dimensions differ");
  }
  const auto kdes = fit_class_kdes(train, BandwidthMethod::likelihood_cv);
  return kl_kde_fixed_point(kdes, test, train.class_proportions(), tol, max_iterations);
}

inline PeKdeResult
estimate_pe_kde(const LabeledDataset& train, const UnlabeledDataset& test)
{
  if (train.dim() != test.dim()) {
    throw ValidationError("train and test dimensions differ");
  }
  const auto kdes = fit_class_kdes(train, BandwidthMethod::least_squares_cv);
  const auto test_kde = fit_kde(test.features(), BandwidthMethod::least_squares_cv).model;
  return pe_kde_minimize(kdes, test_kde, test, train.class_proportions());
}

} // namespace priorshift
