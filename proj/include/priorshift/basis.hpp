#pragma once

#include "dataset.hpp"
#include "error.hpp"
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

namespace priorshift {

//! Constant function plus Gaussian bumps exp(-|x - c_l|^2 / (2 sigma^2))
//! at b centers; a design row therefore has b + 1 entries, entry 0 being 1.
class BasisSpec
{
public:
  //! Kernel values below this are flushed to zero.
  static constexpr double flush_threshold = 1e-300;

  BasisSpec() = default;

  BasisSpec(Eigen::MatrixXd centers, double sigma)
    : centers_(std::move(centers))
    , sigma_(sigma)
  {
    if (!(sigma_ > 0.0) || !std::isfinite(sigma_)) {
      throw ValidationError("basis width sigma must be positive and finite");
    }
  }

  const Eigen::MatrixXd& centers() const noexcept { return centers_; }
  double sigma() const noexcept { return sigma_; }
  Eigen::Index num_centers() const noexcept { return centers_.rows(); }
  Eigen::Index size() const noexcept { return centers_.rows() + 1; }
  Eigen::Index dim() const noexcept { return centers_.cols(); }

  BasisSpec with_sigma(double sigma) const { return BasisSpec(centers_, sigma); }

private:
  Eigen::MatrixXd centers_;
  double sigma_ = 1.0;
};

namespace detail {

inline double
gaussian_bump(double squared_distance, double sigma)
{
  const double v = std::exp(squared_distance * (-1.0 / (2.0 * sigma * sigma)));
  return v < BasisSpec::flush_threshold ? 0.0 : v;
}

inline void
require_dim(const BasisSpec& spec, Eigen::Index d)
{
  // a constant-only basis carries no centers to infer the dimension from
  if (spec.num_centers() > 0 && spec.dim() != d) {
    throw ValidationError("point dimension " + std::to_string(d) +
                          " does not match basis dimension " + std::to_string(spec.dim()));
  }
}

} // namespace detail

//! phi(x) as a column vector of length b + 1.
inline Eigen::VectorXd
eval_basis(const BasisSpec& spec, const Eigen::Ref<const Eigen::VectorXd>& x)
{
  detail::require_dim(spec, x.size());
  Eigen::VectorXd phi(spec.size());
  phi(0) = 1.0;
  for (Eigen::Index l = 0; l < spec.num_centers(); ++l) {
    phi(l + 1) =
      detail::gaussian_bump((spec.centers().row(l).transpose() - x).squaredNorm(), spec.sigma());
  }
  return phi;
}

//! D(i, l) = |x_i - c_l|^2, one exact difference per pair.
inline Eigen::MatrixXd
squared_distances(const Eigen::MatrixXd& points, const Eigen::MatrixXd& centers)
{
  Eigen::MatrixXd d(points.rows(), centers.rows());
  for (Eigen::Index l = 0; l < centers.rows(); ++l) {
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      d(i, l) = (points.row(i) - centers.row(l)).squaredNorm();
    }
  }
  return d;
}

//! Design matrix from squared distances to the centers; lets a width grid
//! reuse one distance computation.
inline Eigen::MatrixXd
design_from_distances(const Eigen::MatrixXd& sq_dist, double sigma)
{
  Eigen::MatrixXd phi(sq_dist.rows(), sq_dist.cols() + 1);
  phi.col(0).setOnes();
  const double scale = -1.0 / (2.0 * sigma * sigma);
  auto bumps = phi.rightCols(sq_dist.cols()).array();
  bumps = (sq_dist.array() * scale).exp();
  bumps = (bumps < BasisSpec::flush_threshold).select(0.0, bumps);
  return phi;
}

//! Row i holds phi(x_i)^T for the rows of `points`.
inline Eigen::MatrixXd
design_matrix(const BasisSpec& spec, const Eigen::MatrixXd& points)
{
  detail::require_dim(spec, points.cols());
  return design_from_distances(squared_distances(points, spec.centers()), spec.sigma());
}

//! r(x) = sum_l alpha_l phi_l(x).
struct RatioModel
{
  BasisSpec basis;
  Eigen::VectorXd alpha;

  double operator()(const Eigen::Ref<const Eigen::VectorXd>& x) const
  {
    return eval_basis(basis, x).dot(alpha);
  }

  Eigen::VectorXd evaluate(const Eigen::MatrixXd& points) const
  {
    return design_matrix(basis, points) * alpha;
  }
};

inline double
eval_ratio(const RatioModel& model, const Eigen::Ref<const Eigen::VectorXd>& x)
{
  if (model.alpha.size() != model.basis.size()) {
    throw ValidationError("coefficient vector length does not match basis size");
  }
  return model(x);
}

//! G = (1/n') sum_i phi(x'_i) phi(x'_i)^T over test points;
//! H[:, y] = class-y mean of phi over training points.
struct MomentMatrices
{
  Eigen::MatrixXd G;
  Eigen::MatrixXd H;
};

//! Moments from precomputed design matrices.
inline MomentMatrices
moments_from_design(const Eigen::MatrixXd& train_design,
                    const std::vector<int>& train_classes,
                    int num_classes,
                    const Eigen::MatrixXd& test_design)
{
  const Eigen::Index p = test_design.cols();
  MomentMatrices m;
  m.G.noalias() = test_design.transpose() * test_design;
  m.G /= static_cast<double>(test_design.rows());
  m.G = 0.5 * (m.G + m.G.transpose()).eval();
  m.G(0, 0) = 1.0;

  m.H = Eigen::MatrixXd::Zero(p, num_classes);
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (Eigen::Index i = 0; i < train_design.rows(); ++i) {
    const int y = train_classes[static_cast<std::size_t>(i)];
    m.H.col(y) += train_design.row(i).transpose();
    ++counts[static_cast<std::size_t>(y)];
  }
  for (int y = 0; y < num_classes; ++y) {
    if (counts[static_cast<std::size_t>(y)] == 0) {
      throw ValidationError("class " + std::to_string(y + 1) + " has no training samples");
    }
    m.H.col(y) /= static_cast<double>(counts[static_cast<std::size_t>(y)]);
    m.H(0, y) = 1.0;
  }
  return m;
}

inline MomentMatrices
build_moments(const BasisSpec& spec, const LabeledDataset& train, const UnlabeledDataset& test)
{
  return moments_from_design(design_matrix(spec, train.features()),
                             train.classes(),
                             train.num_classes(),
                             design_matrix(spec, test.features()));
}

// ---------------------------------------------------------------------------
// Width heuristics and centers

//! Median Euclidean distance over distinct row pairs. Uses an evenly strided
//! subset of at most `max_rows` rows.
inline double
median_pairwise_distance(const Eigen::MatrixXd& points, Eigen::Index max_rows = 1000)
{
  const Eigen::Index n = points.rows();
  if (n < 2) {
    return 0.0;
  }
  std::vector<Eigen::Index> rows;
  const Eigen::Index stride = n > max_rows ? (n + max_rows - 1) / max_rows : 1;
  for (Eigen::Index i = 0; i < n; i += stride) {
    rows.push_back(i);
  }
  std::vector<double> d;
  d.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = a + 1; b < rows.size(); ++b) {
      d.push_back((points.row(rows[a]) - points.row(rows[b])).norm());
    }
  }
  auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  double med = *mid;
  if (d.size() % 2 == 0) {
    med = 0.5 * (med + *std::max_element(d.begin(), mid));
  }
  return med;
}

//! Candidate widths: median distance times {1/10, 1/5, 1/2, 2/3, 1, 3/2, 2, 5}.
inline std::vector<double>
median_scaled_grid(double median_distance)
{
  if (!(median_distance > 0.0)) {
    throw ValidationError("points have zero median pairwise distance; width unidentifiable");
  }
  static constexpr double factors[] = { 0.1, 0.2, 0.5, 2.0 / 3.0, 1.0, 1.5, 2.0, 5.0 };
  std::vector<double> grid;
  for (double f : factors) {
    grid.push_back(f * median_distance);
  }
  return grid;
}

//! Median-scaled grid for a point set, falling back to the largest pairwise
//! distance when more than half the pairs coincide.
inline std::vector<double>
width_grid_for(const Eigen::MatrixXd& points)
{
  double med = median_pairwise_distance(points);
  if (!(med > 0.0)) {
    double far = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      far = std::max(far, (points.rowwise() - points.row(i)).rowwise().norm().maxCoeff());
    }
    med = far;
  }
  return median_scaled_grid(med);
}

//! Training points used as Gaussian centers. Above `cap` rows a uniform
//! subset of size `cap` is drawn with `seed`. Duplicates are kept.
inline Eigen::MatrixXd
select_centers(const Eigen::MatrixXd& train_points, Eigen::Index cap, RngSeed seed)
{
  const Eigen::Index n = train_points.rows();
  if (cap <= 0 || n <= cap) {
    return train_points;
  }
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    idx[static_cast<std::size_t>(i)] = i;
  }
  Rng rng = seed.engine();
  for (Eigen::Index k = 0; k < cap; ++k) {
    std::uniform_int_distribution<Eigen::Index> pick(k, n - 1);
    std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  std::sort(idx.begin(), idx.begin() + cap);
  Eigen::MatrixXd out(cap, train_points.cols());
  for (Eigen::Index k = 0; k < cap; ++k) {
    out.row(k) = train_points.row(idx[static_cast<std::size_t>(k)]);
  }
  return out;
}

} // namespace priorshift
