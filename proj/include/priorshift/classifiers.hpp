#pragma once

#include "basis.hpp"
#include "cross_validation.hpp"
#include "dataset.hpp"
#include "klr.hpp"
#include <Eigen/Dense>
#include <optional>
#include <variant>
#include <vector>

namespace priorshift {

//! Per-sample importance weights theta_{y_i} / (n_{y_i} / n) correcting a
//! class-prior change from the training proportions to `theta_hat`.
inline Eigen::VectorXd
instance_weights(const LabeledDataset& train, const SimplexVector& theta_hat)
{
  if (theta_hat.size() != train.num_classes()) {
    throw ValidationError("prior length does not match class count");
  }
  train.require_all_classes();
  const double n = static_cast<double>(train.size());
  Eigen::VectorXd w(train.size());
  for (Eigen::Index i = 0; i < train.size(); ++i) {
    const int y = train.classes()[static_cast<std::size_t>(i)];
    w(i) = theta_hat[y] * n / train.class_count(y);
  }
  return w;
}

//! Binary weighted regularized least squares on the Gaussian-plus-constant
//! basis. Class 0 is coded +1 and class 1 is coded -1 (reversed when
//! `flipped`); the decision is the sign of the score, ties to class 0.
struct RlsModel
{
  BasisSpec basis;
  Eigen::VectorXd coefficients;
  bool flipped = false;

  Eigen::VectorXd scores(const Eigen::MatrixXd& points) const { return design_matrix(basis, points) * coefficients; }

  std::vector<int> predict(const Eigen::MatrixXd& points) const
  {
    const Eigen::VectorXd s = scores(points);
    std::vector<int> out(static_cast<std::size_t>(s.size()));
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const bool positive = s(i) >= 0.0;
      out[static_cast<std::size_t>(i)] = positive != flipped ? 0 : 1;
    }
    return out;
  }
};

enum class ClassifierKind
{
  rls_binary,
  klr_multiclass
};

struct WeightedClassifier
{
  std::variant<RlsModel, KlrModel> model;

  ClassifierKind kind() const
  {
    return std::holds_alternative<RlsModel>(model) ? ClassifierKind::rls_binary : ClassifierKind::klr_multiclass;
  }

  std::vector<int> predict(const Eigen::MatrixXd& points) const
  {
    return std::visit([&](const auto& m) { return m.predict(points); }, model);
  }
};

namespace detail {

inline Eigen::VectorXd
signed_targets(const std::vector<int>& classes, bool flipped)
{
  Eigen::VectorXd t(static_cast<Eigen::Index>(classes.size()));
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const bool first = classes[i] == 0;
    t(static_cast<Eigen::Index>(i)) = first != flipped ? 1.0 : -1.0;
  }
  return t;
}

//! Solves (Phi^T W Phi + ridge R) beta = Phi^T W t.
inline Eigen::VectorXd
solve_weighted_rls(const Eigen::MatrixXd& design, const Eigen::VectorXd& weights, const Eigen::VectorXd& targets,
                   double ridge)
{
  Eigen::MatrixXd lhs = design.transpose() * weights.asDiagonal() * design;
  lhs.diagonal().tail(lhs.rows() - 1).array() += ridge;
  const Eigen::VectorXd rhs = design.transpose() * weights.cwiseProduct(targets);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(lhs);
  Eigen::VectorXd beta = ldlt.solve(rhs);
  if (ldlt.info() != Eigen::Success || !beta.allFinite()) {
    throw NumericalError("weighted least-squares system is singular");
  }
  return beta;
}

} // namespace detail

//! Residual of the weighted normal equations, for verification.
inline double
rls_normal_residual(const LabeledDataset& train, const Eigen::VectorXd& weights, const RlsModel& model, double ridge)
{
  const Eigen::MatrixXd design = design_matrix(model.basis, train.features());
  const Eigen::VectorXd t = detail::signed_targets(train.classes(), model.flipped);
  Eigen::VectorXd lhs = design.transpose() * weights.cwiseProduct(design * model.coefficients);
  lhs.tail(lhs.size() - 1) += ridge * model.coefficients.tail(lhs.size() - 1);
  return (lhs - design.transpose() * weights.cwiseProduct(t)).norm();
}

inline RlsModel
train_weighted_rls_model(const LabeledDataset& train, const Eigen::VectorXd& weights, const BasisSpec& spec,
                         double ridge, bool flipped = false)
{
  if (train.num_classes() != 2) {
    throw ValidationError("least-squares classifier is binary only");
  }
  if (!(ridge > 0.0)) {
    throw ValidationError("ridge must be positive");
  }
  if (weights.size() != train.size()) {
    throw ValidationError("one weight per training sample required");
  }
  if ((weights.array() < 0.0).any() || !(weights.sum() > 0.0)) {
    throw ValidationError("weights must be non-negative and not all zero");
  }
  RlsModel m;
  m.basis = spec;
  m.flipped = flipped;
  m.coefficients = detail::solve_weighted_rls(design_matrix(spec, train.features()), weights,
                                              detail::signed_targets(train.classes(), flipped), ridge);
  return m;
}

inline WeightedClassifier
train_weighted_rls(const LabeledDataset& train, const Eigen::VectorXd& weights, const BasisSpec& spec, double ridge)
{
  return WeightedClassifier{ train_weighted_rls_model(train, weights, spec, ridge) };
}

inline WeightedClassifier
train_weighted_klr(const LabeledDataset& train, const Eigen::VectorXd& weights, const BasisSpec& spec, double ridge,
                   const KlrTrainOptions& options = {})
{
  return WeightedClassifier{ train_weighted_klr_model(train, weights, spec, ridge, options) };
}

inline double
misclassification_rate(const std::vector<int>& predicted, const std::vector<int>& truth)
{
  if (predicted.size() != truth.size()) {
    throw ValidationError("prediction and label counts differ");
  }
  if (truth.empty()) {
    return 0.0;
  }
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    wrong += predicted[i] != truth[i];
  }
  return static_cast<double>(wrong) / static_cast<double>(truth.size());
}

template <class Model>
double
misclassification_rate(const Model& model, const LabeledDataset& labeled_test)
{
  return misclassification_rate(model.predict(labeled_test.features()), labeled_test.classes());
}

// ---------------------------------------------------------------------------
// Model selection for the weighted least-squares classifier

struct RlsFitOptions
{
  std::optional<double> sigma;
  std::optional<double> ridge;
  std::vector<double> sigma_grid;
  std::vector<double> ridge_grid = default_ridge_grid();
  int folds = 5;
  Eigen::Index center_cap = 500;
};

struct RlsFit
{
  RlsModel model;
  double sigma = 0.0;
  double ridge = 0.0;
};

//! (sigma, ridge) by weighted k-fold CV on weighted squared error of the
//! +-1 targets, then a final fit on all samples.
inline RlsFit
fit_weighted_rls(const LabeledDataset& train, const Eigen::VectorXd& weights, RngSeed seed,
                 const RlsFitOptions& options = {})
{
  train.require_all_classes();
  const Eigen::MatrixXd centers = select_centers(train.features(), options.center_cap, seed.derive(1));
  RlsFit fit;
  if (options.sigma && options.ridge) {
    fit.sigma = *options.sigma;
    fit.ridge = *options.ridge;
  } else {
    const auto sigmas = options.sigma ? std::vector<double>{ *options.sigma }
                        : options.sigma_grid.empty() ? width_grid_for(train.features())
                                                     : options.sigma_grid;
    const auto ridges = options.ridge ? std::vector<double>{ *options.ridge } : options.ridge_grid;
    const auto folds = make_folds(train, options.folds, seed.derive(2));
    const Eigen::VectorXd targets = detail::signed_targets(train.classes(), false);
    std::vector<std::vector<CvCell>> cells(sigmas.size(), std::vector<CvCell>(ridges.size()));
    for (std::size_t si = 0; si < sigmas.size(); ++si) {
      const Eigen::MatrixXd design = design_matrix(BasisSpec(centers, sigmas[si]), train.features());
      for (int k = 0; k < folds.num_folds; ++k) {
        const auto in = folds.rows_in(folds.train_fold, k);
        const auto out = folds.rows_out(folds.train_fold, k);
        Eigen::MatrixXd d_in(static_cast<Eigen::Index>(in.size()), design.cols());
        Eigen::VectorXd w_in(static_cast<Eigen::Index>(in.size()));
        Eigen::VectorXd t_in(static_cast<Eigen::Index>(in.size()));
        for (std::size_t j = 0; j < in.size(); ++j) {
          d_in.row(static_cast<Eigen::Index>(j)) = design.row(in[j]);
          w_in(static_cast<Eigen::Index>(j)) = weights(in[j]);
          t_in(static_cast<Eigen::Index>(j)) = targets(in[j]);
        }
        double w_out = 0.0;
        for (auto i : out) {
          w_out += weights(i);
        }
        if (!(w_in.sum() > 0.0) || !(w_out > 0.0)) {
          continue;
        }
        for (std::size_t ri = 0; ri < ridges.size(); ++ri) {
          Eigen::VectorXd beta;
          try {
            beta = detail::solve_weighted_rls(d_in, w_in, t_in, ridges[ri]);
          } catch (const NumericalError&) {
            continue;
          }
          double err = 0.0;
          for (auto i : out) {
            const double r = design.row(i).dot(beta) - targets(i);
            err += weights(i) * r * r;
          }
          cells[si][ri].add(err / w_out);
        }
      }
    }
    const auto [bi, bj] = select_min_cell(cells, sigmas, ridges);
    fit.sigma = sigmas[bi];
    fit.ridge = ridges[bj];
  }
  fit.model = train_weighted_rls_model(train, weights, BasisSpec(centers, fit.sigma), fit.ridge);
  return fit;
}

} // namespace priorshift
