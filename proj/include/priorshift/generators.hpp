#pragma once

#include "dataset.hpp"
#include "error.hpp"
#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace priorshift {

//! Class-conditional Gaussians x | y ~ N(mean_y, cov_y). The same
//! conditionals serve training and test draws, so only the class prior can
//! differ between them.
class GaussianClassGenerator
{
public:
  GaussianClassGenerator(std::vector<Eigen::VectorXd> means, std::vector<Eigen::MatrixXd> covariances)
    : means_(std::move(means))
  {
    if (means_.empty() || means_.size() != covariances.size()) {
      throw ValidationError("need one mean and one covariance per class");
    }
    const Eigen::Index d = means_.front().size();
    for (std::size_t y = 0; y < means_.size(); ++y) {
      const auto& cov = covariances[y];
      if (means_[y].size() != d || cov.rows() != d || cov.cols() != d) {
        throw ValidationError("class " + std::to_string(y + 1) + ": inconsistent dimension");
      }
      if (!cov.isApprox(cov.transpose())) {
        throw ValidationError("class " + std::to_string(y + 1) + ": covariance not symmetric");
      }
      Eigen::LLT<Eigen::MatrixXd> llt(cov);
      if (llt.info() != Eigen::Success) {
        throw ValidationError("class " + std::to_string(y + 1) + ": covariance not positive definite");
      }
      factors_.push_back(llt.matrixL());
    }
  }

  //! 1-D, class 1 at -separation, class 2 at +separation, unit variance.
  static GaussianClassGenerator gauss_1d(double separation = 2.0)
  {
    return GaussianClassGenerator({ Eigen::VectorXd::Constant(1, -separation), Eigen::VectorXd::Constant(1, separation) },
                                  { Eigen::MatrixXd::Identity(1, 1), Eigen::MatrixXd::Identity(1, 1) });
  }

  //! d-D isotropic classes whose means differ by `separation` along the
  //! diagonal direction.
  static GaussianClassGenerator gauss_multid(int d, double separation = 2.0)
  {
    const Eigen::VectorXd dir = Eigen::VectorXd::Ones(d) / std::sqrt(static_cast<double>(d));
    return GaussianClassGenerator({ -0.5 * separation * dir, 0.5 * separation * dir },
                                  { Eigen::MatrixXd::Identity(d, d), Eigen::MatrixXd::Identity(d, d) });
  }

  //! Three unit-variance classes in 2-D at the corners of an equilateral
  //! triangle of side `side`.
  static GaussianClassGenerator three_class(double side = 2.5)
  {
    std::vector<Eigen::VectorXd> means(3, Eigen::VectorXd(2));
    means[0] << 0.0, 0.0;
    means[1] << side, 0.0;
    means[2] << 0.5 * side, 0.5 * std::sqrt(3.0) * side;
    return GaussianClassGenerator(means, std::vector<Eigen::MatrixXd>(3, Eigen::MatrixXd::Identity(2, 2)));
  }

  int num_classes() const noexcept { return static_cast<int>(means_.size()); }
  Eigen::Index dim() const noexcept { return means_.front().size(); }
  const Eigen::VectorXd& mean(int y) const { return means_.at(static_cast<std::size_t>(y)); }

  Eigen::RowVectorXd sample(int y, Rng& rng) const
  {
    std::normal_distribution<double> z;
    Eigen::VectorXd u(dim());
    for (Eigen::Index k = 0; k < dim(); ++k) {
      u(k) = z(rng);
    }
    return (means_[static_cast<std::size_t>(y)] + factors_[static_cast<std::size_t>(y)] * u).transpose();
  }

  //! Exactly counts[y] points of class y.
  LabeledDataset draw_stratified(const std::vector<int>& counts, RngSeed seed) const
  {
    if (static_cast<int>(counts.size()) != num_classes()) {
      throw ValidationError("count vector length must equal class count");
    }
    Rng rng = seed.engine();
    int total = 0;
    for (int c : counts) {
      total += c;
    }
    Eigen::MatrixXd x(total, dim());
    std::vector<int> cls;
    Eigen::Index row = 0;
    for (int y = 0; y < num_classes(); ++y) {
      for (int k = 0; k < counts[static_cast<std::size_t>(y)]; ++k) {
        x.row(row++) = sample(y, rng);
        cls.push_back(y);
      }
    }
    return LabeledDataset(std::move(x), std::move(cls), num_classes());
  }

  //! `total` points whose classes are i.i.d. from `prior`.
  LabeledDataset draw_with_prior(Eigen::Index total, const SimplexVector& prior, RngSeed seed) const
  {
    if (prior.size() != num_classes()) {
      throw ValidationError("prior length must equal class count");
    }
    Rng rng = seed.engine();
    std::discrete_distribution<int> pick(prior.values().data(), prior.values().data() + prior.size());
    Eigen::MatrixXd x(total, dim());
    std::vector<int> cls(static_cast<std::size_t>(total));
    for (Eigen::Index i = 0; i < total; ++i) {
      const int y = pick(rng);
      cls[static_cast<std::size_t>(i)] = y;
      x.row(i) = sample(y, rng);
    }
    return LabeledDataset(std::move(x), std::move(cls), num_classes());
  }

private:
  std::vector<Eigen::VectorXd> means_;
  std::vector<Eigen::MatrixXd> factors_;
};

} // namespace priorshift
