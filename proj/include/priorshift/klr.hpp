#pragma once

#include "basis.hpp"
#include "cross_validation.hpp"
#include "dataset.hpp"
#include "lbfgs.hpp"
#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <vector>

namespace priorshift {

//! Multinomial kernel logistic regression: class scores phi(x)^T W[:, y]
//! passed through a softmax.
struct KlrModel
{
  BasisSpec basis;
  //! (b + 1) x c; row 0 holds the unpenalized offsets.
  Eigen::MatrixXd weights;
  double ridge = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;

  int num_classes() const noexcept { return static_cast<int>(weights.cols()); }

  //! Posterior rows p(y | x) for every row of `points`.
  Eigen::MatrixXd posteriors(const Eigen::MatrixXd& points) const
  {
    Eigen::MatrixXd scores = design_matrix(basis, points) * weights;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      const double top = scores.row(i).maxCoeff();
      scores.row(i) = (scores.row(i).array() - top).exp();
      scores.row(i) /= scores.row(i).sum();
    }
    return scores;
  }

  Eigen::VectorXd posterior(const Eigen::VectorXd& x) const
  {
    return posteriors(x.transpose()).row(0).transpose();
  }

  std::vector<int> predict(const Eigen::MatrixXd& points) const
  {
    const Eigen::MatrixXd post = posteriors(points);
    std::vector<int> out(static_cast<std::size_t>(post.rows()));
    for (Eigen::Index i = 0; i < post.rows(); ++i) {
      Eigen::Index best = 0;
      post.row(i).maxCoeff(&best);
      out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
  }
};

namespace detail {

//! sum_i w_i [logsumexp(s_i) - s_i[y_i]] + ridge ||W[1:, :]||^2 and its
//! gradient with respect to W (flattened column-major).
inline double
klr_loss(const Eigen::MatrixXd& design, const std::vector<int>& classes, const Eigen::VectorXd& weights,
         double ridge, int c, const Eigen::VectorXd& flat, Eigen::VectorXd& grad)
{
  const Eigen::Index p = design.cols();
  const Eigen::Map<const Eigen::MatrixXd> w(flat.data(), p, c);
  Eigen::MatrixXd scores = design * w;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double top = scores.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (scores.row(i).array() - top).exp();
    const double z = e.sum();
    const int y = classes[static_cast<std::size_t>(i)];
    loss += weights(i) * (top + std::log(z) - scores(i, y));
    scores.row(i) = weights(i) * e / z;
    scores(i, y) -= weights(i);
  }
  Eigen::MatrixXd g = design.transpose() * scores;
  g.bottomRows(p - 1) += 2.0 * ridge * w.bottomRows(p - 1);
  loss += ridge * w.bottomRows(p - 1).squaredNorm();
  grad = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
  return loss;
}

} // namespace detail

//! Penalized negative log-likelihood of a weight matrix (exposed for
//! gradient checks).
inline double
klr_objective(const Eigen::MatrixXd& design, const std::vector<int>& classes, const Eigen::VectorXd& sample_weights,
              double ridge, const Eigen::MatrixXd& w, Eigen::MatrixXd* grad = nullptr)
{
  Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(w.data(), w.size());
  Eigen::VectorXd g;
  const double v = detail::klr_loss(design, classes, sample_weights, ridge, static_cast<int>(w.cols()), flat, g);
  if (grad) {
    *grad = Eigen::Map<const Eigen::MatrixXd>(g.data(), w.rows(), w.cols());
  }
  return v;
}

struct KlrTrainOptions
{
  LbfgsOptions solver{};
};

//! Trains weighted KLR on explicit design rows. Unit weights give the plain
//! model; a zero weight removes the sample's term.
inline KlrModel
train_klr_design(const BasisSpec& spec, const Eigen::MatrixXd& design, const std::vector<int>& classes, int c,
                 const Eigen::VectorXd& sample_weights, double ridge, const KlrTrainOptions& options = {})
{
  if (c < 2) {
    throw ValidationError("kernel logistic regression needs at least two classes");
  }
  if (!(ridge > 0.0)) {
    throw ValidationError("ridge must be positive");
  }
  if ((sample_weights.array() < 0.0).any() || !(sample_weights.sum() > 0.0)) {
    throw ValidationError("sample weights must be non-negative and not all zero");
  }
  const Eigen::Index p = design.cols();
  const SmoothObjective f = [&](const Eigen::VectorXd& flat, Eigen::VectorXd& g) {
    return detail::klr_loss(design, classes, sample_weights, ridge, c, flat, g);
  };
  auto res = lbfgs_minimize(f, Eigen::VectorXd::Zero(p * c), options.solver);
  KlrModel m;
  m.basis = spec;
  m.weights = Eigen::Map<const Eigen::MatrixXd>(res.x.data(), p, c);
  m.ridge = ridge;
  m.gradient_norm = res.gradient_norm;
  m.iterations = res.iterations;
  m.converged = res.converged;
  return m;
}

inline KlrModel
train_weighted_klr_model(const LabeledDataset& train, const Eigen::VectorXd& sample_weights, const BasisSpec& spec,
                         double ridge, const KlrTrainOptions& options = {})
{
  if (train.num_classes() < 2) {
    throw ValidationError("kernel logistic regression needs at least two classes");
  }
  if (sample_weights.size() != train.size()) {
    throw ValidationError("one weight per training sample required");
  }
  return train_klr_design(spec, design_matrix(spec, train.features()), train.classes(), train.num_classes(),
                          sample_weights, ridge, options);
}

inline KlrModel
train_klr(const LabeledDataset& train, const BasisSpec& spec, double ridge, const KlrTrainOptions& options = {})
{
  return train_weighted_klr_model(train, Eigen::VectorXd::Ones(train.size()), spec, ridge, options);
}

inline const std::vector<double>&
default_ridge_grid()
{
  static const std::vector<double> grid{ 1e-3, 1e-2, 1e-1, 1.0, 10.0 };
  return grid;
}

struct KlrCvResult
{
  double sigma = 0.0;
  double ridge = 0.0;
  std::vector<std::vector<CvCell>> scores;
};

//! k-fold selection of (sigma, ridge) by held-out (weighted) multinomial log
//! loss. Folds whose retained part lacks a class are skipped.
inline KlrCvResult
cross_validate_klr(const LabeledDataset& train, const Eigen::VectorXd& sample_weights, const Eigen::MatrixXd& centers,
                   const std::vector<double>& sigma_grid, const std::vector<double>& ridge_grid,
                   const FoldAssignment& folds, const KlrTrainOptions& options = {})
{
  if (sigma_grid.empty() || ridge_grid.empty()) {
    throw ValidationError("cross-validation grids must be non-empty");
  }
  const int c = train.num_classes();
  KlrCvResult res;
  res.scores.assign(sigma_grid.size(), std::vector<CvCell>(ridge_grid.size()));
  for (std::size_t si = 0; si < sigma_grid.size(); ++si) {
    const BasisSpec spec(centers, sigma_grid[si]);
    const Eigen::MatrixXd design = design_matrix(spec, train.features());
    for (int k = 0; k < folds.num_folds; ++k) {
      const auto in = folds.rows_in(folds.train_fold, k);
      const auto out = folds.rows_out(folds.train_fold, k);
      if (out.empty()) {
        continue;
      }
      std::vector<int> cls_in(in.size());
      std::vector<int> seen(static_cast<std::size_t>(c), 0);
      Eigen::MatrixXd d_in(static_cast<Eigen::Index>(in.size()), design.cols());
      Eigen::VectorXd w_in(static_cast<Eigen::Index>(in.size()));
      for (std::size_t j = 0; j < in.size(); ++j) {
        d_in.row(static_cast<Eigen::Index>(j)) = design.row(in[j]);
        cls_in[j] = train.classes()[static_cast<std::size_t>(in[j])];
        w_in(static_cast<Eigen::Index>(j)) = sample_weights(in[j]);
        seen[static_cast<std::size_t>(cls_in[j])] = 1;
      }
      if (std::find(seen.begin(), seen.end(), 0) != seen.end() || !(w_in.sum() > 0.0)) {
        continue;
      }
      double w_out = 0.0;
      for (auto i : out) {
        w_out += sample_weights(i);
      }
      if (!(w_out > 0.0)) {
        continue;
      }
      for (std::size_t ri = 0; ri < ridge_grid.size(); ++ri) {
        const auto model = train_klr_design(spec, d_in, cls_in, c, w_in, ridge_grid[ri], options);
        double loss = 0.0;
        for (auto i : out) {
          const Eigen::RowVectorXd s = design.row(i) * model.weights;
          const double top = s.maxCoeff();
          const double lse = top + std::log((s.array() - top).exp().sum());
          loss += sample_weights(i) * (lse - s(train.classes()[static_cast<std::size_t>(i)]));
        }
        if (std::isfinite(loss)) {
          res.scores[si][ri].add(loss / w_out);
        }
      }
    }
  }
  const auto [bi, bj] = select_min_cell(res.scores, sigma_grid, ridge_grid);
  res.sigma = sigma_grid[bi];
  res.ridge = ridge_grid[bj];
  return res;
}

struct KlrFitOptions
{
  std::optional<double> sigma;
  std::optional<double> ridge;
  std::vector<double> sigma_grid;
  std::vector<double> ridge_grid = default_ridge_grid();
  int folds = 5;
  Eigen::Index center_cap = 500;
  KlrTrainOptions train{};
};

//! Centers, CV over (sigma, ridge) unless both are fixed, final fit.
inline KlrModel
fit_klr(const LabeledDataset& train, const Eigen::VectorXd& sample_weights, RngSeed seed,
        const KlrFitOptions& options = {})
{
  train.require_all_classes();
  const Eigen::MatrixXd centers = select_centers(train.features(), options.center_cap, seed.derive(1));
  double sigma = 0.0;
  double ridge = 0.0;
  if (options.sigma && options.ridge) {
    sigma = *options.sigma;
    ridge = *options.ridge;
  } else {
    const auto sigmas = options.sigma ? std::vector<double>{ *options.sigma }
                        : options.sigma_grid.empty() ? width_grid_for(train.features())
                                                     : options.sigma_grid;
    const auto ridges = options.ridge ? std::vector<double>{ *options.ridge } : options.ridge_grid;
    const auto folds = make_folds(train, options.folds, seed.derive(2));
    const auto cv = cross_validate_klr(train, sample_weights, centers, sigmas, ridges, folds, options.train);
    sigma = cv.sigma;
    ridge = cv.ridge;
  }
  return train_weighted_klr_model(train, sample_weights, BasisSpec(centers, sigma), ridge, options.train);
}

} // namespace priorshift
