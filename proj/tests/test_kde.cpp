#include "test_util.hpp"
#include <priorshift/generators.hpp>
#include <priorshift/kde.hpp>
#include <gtest/gtest.h>

using namespace priorshift;

namespace {

Eigen::MatrixXd
column(std::initializer_list<double> v)
{
  Eigen::MatrixXd x(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double a : v) {
    x(i++, 0) = a;
  }
  return x;
}

} // namespace

// LOO likelihood of {0, 1} is 2 log N(1; 0, h^2), maximized at h = 1.
TEST(FitKde, TwoPointLikelihoodPicksGridPointNearestOne)
{
  const auto fit = fit_kde(column({ 0.0, 1.0 }), BandwidthMethod::likelihood_cv, { 0.5, 0.8, 0.95, 1.1, 1.5, 2.0 });
  EXPECT_EQ(fit.model.bandwidth(), 0.95);
  const double h = 0.7;
  const double direct = 2.0 * (-0.5 * std::log(2 * std::numbers::pi * h * h) - 1.0 / (2 * h * h));
  EXPECT_NEAR(loo_log_likelihood(column({ 0.0, 1.0 }), h), direct, 1e-13);
}

TEST(FitKde, SingleGridValueReturned)
{
  for (auto method : { BandwidthMethod::likelihood_cv, BandwidthMethod::least_squares_cv }) {
    EXPECT_EQ(fit_kde(column({ 0.0, 1.0, 4.0 }), method, { 0.37 }).model.bandwidth(), 0.37);
  }
}

TEST(FitKde, CoincidentPointsRejected)
{
  EXPECT_THROW(fit_kde(column({ 2.0, 2.0, 2.0 }), BandwidthMethod::likelihood_cv), ValidationError);
  EXPECT_THROW(fit_kde(column({ 2.0 }), BandwidthMethod::likelihood_cv), ValidationError);
}

TEST(KdeDensity, TinyBandwidthAtCenter)
{
  Eigen::MatrixXd pts(3, 2);
  pts << 0, 0, 5, 5, -4, 1;
  const double h = 1e-3;
  const KdeModel kde(pts, h);
  EXPECT_NEAR(kde.density(pts.row(1)) / ((1.0 / 3.0) / (2 * std::numbers::pi * h * h)), 1.0, 1e-12);
}

TEST(KdeDensity, IntegratesToOne)
{
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  Eigen::MatrixXd pts(15, 1);
  for (Eigen::Index i = 0; i < 15; ++i) {
    pts(i, 0) = z(rng);
  }
  for (double h : { 0.1, 0.4, 1.5 }) {
    const KdeModel kde(pts, h);
    const double lo = pts.minCoeff() - 10 * h;
    const double hi = pts.maxCoeff() + 10 * h;
    const int steps = 20000;
    const double dx = (hi - lo) / steps;
    double total = 0.0;
    for (int k = 0; k <= steps; ++k) {
      const double w = (k == 0 || k == steps) ? 0.5 : 1.0;
      total += w * kde.density(Eigen::RowVectorXd::Constant(1, lo + k * dx));
    }
    EXPECT_NEAR(total * dx, 1.0, 1e-6);
  }
}

TEST(KdeCv, LeaveOneOutExcludesSelf)
{
  Eigen::MatrixXd pts(4, 2);
  pts << 0, 0, 1, 0, 0, 2, 3, 1;
  const double h = 0.9;
  double direct = 0.0;
  for (Eigen::Index j = 0; j < 4; ++j) {
    std::vector<Eigen::Index> others;
    for (Eigen::Index k = 0; k < 4; ++k) {
      if (k != j) {
        others.push_back(k);
      }
    }
    Eigen::MatrixXd rest(3, 2);
    for (int k = 0; k < 3; ++k) {
      rest.row(k) = pts.row(others[static_cast<std::size_t>(k)]);
    }
    direct += KdeModel(rest, h).log_density(pts.row(j));
  }
  EXPECT_NEAR(loo_log_likelihood(pts, h), direct, 1e-12);
}

TEST(KdeCv, LscvIntegralMatchesQuadrature)
{
  const Eigen::MatrixXd pts = column({ -1.0, 0.2, 0.5, 2.0 });
  const double h = 0.6;
  const KdeModel kde(pts, h);
  const double lo = -1.0 - 12 * h, hi = 2.0 + 12 * h;
  const int steps = 40000;
  const double dx = (hi - lo) / steps;
  double integral = 0.0;
  for (int k = 0; k <= steps; ++k) {
    const double p = kde.density(Eigen::RowVectorXd::Constant(1, lo + k * dx));
    integral += ((k == 0 || k == steps) ? 0.5 : 1.0) * p * p;
  }
  integral *= dx;
  double loo = 0.0;
  for (Eigen::Index j = 0; j < 4; ++j) {
    for (Eigen::Index k = 0; k < 4; ++k) {
      if (k != j) {
        const double d = pts(j, 0) - pts(k, 0);
        loo += std::exp(-d * d / (2 * h * h)) / std::sqrt(2 * std::numbers::pi * h * h) / 3.0;
      }
    }
  }
  EXPECT_NEAR(lscv_score(pts, h), integral - 2.0 * loo / 4.0, 1e-9);
}

TEST(KlKdeFixedPoint, DirectEvaluationExamples)
{
  Eigen::Matrix2d d;
  d << 1, 0, 0, 1;
  EXPECT_LE((mixture_fixed_point_step(d, Eigen::Vector2d(0.5, 0.5)).theta - Eigen::Vector2d(0.5, 0.5)).norm(), 1e-15);
  d << 1, 0, 1, 0;
  EXPECT_LE((mixture_fixed_point_step(d, Eigen::Vector2d(0.5, 0.5)).theta - Eigen::Vector2d(1.0, 0.0)).norm(), 1e-15);
}

TEST(KlKdeFixedPoint, IdenticalKdesReturnInit)
{
  const Eigen::MatrixXd pts = column({ 0.0, 1.0, 2.5 });
  const std::vector<KdeModel> kdes{ KdeModel(pts, 0.7), KdeModel(pts, 0.7) };
  const UnlabeledDataset test(column({ 0.3, 1.9, -1.0 }));
  const SimplexVector init = SimplexVector::binary(0.35);
  const auto r = kl_kde_fixed_point(kdes, test, init);
  EXPECT_NEAR(r.theta[0], 0.35, 1e-14);
  EXPECT_TRUE(r.converged);
}

TEST(KlKdeFixedPoint, MonotoneAndOnSimplex)
{
  const auto gen = GaussianClassGenerator::three_class();
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto train = gen.draw_stratified({ 15, 15, 15 }, RngSeed{ s });
    const auto test = gen.draw_with_prior(60, SimplexVector(Eigen::Vector3d(0.6, 0.1, 0.3)), RngSeed{ s + 9 }).unlabeled();
    const auto kdes = fit_class_kdes(train, BandwidthMethod::likelihood_cv);
    const auto r = kl_kde_fixed_point(kdes, test, SimplexVector::uniform(3));
    for (std::size_t k = 1; k < r.objective_trace.size(); ++k) {
      EXPECT_GE(r.objective_trace[k], r.objective_trace[k - 1] - 1e-10);
    }
    EXPECT_NEAR(r.theta.values().sum(), 1.0, 1e-12);
  }
}

TEST(PeKde, SingleClassSamePointsIsZeroAtOne)
{
  const Eigen::MatrixXd pts = column({ -0.4, 0.1, 0.9, 1.7 });
  const KdeModel kde(pts, 0.5);
  const auto obj = PeKdeObjective::build({ kde }, kde, UnlabeledDataset(pts));
  EXPECT_NEAR(obj.value(Eigen::VectorXd::Ones(1)), 0.0, 1e-15);
}

TEST(PeKde, IdenticalClassKdesFlatReturnsInit)
{
  const Eigen::MatrixXd pts = column({ 0.0, 1.0, 2.5 });
  const std::vector<KdeModel> kdes{ KdeModel(pts, 0.7), KdeModel(pts, 0.7) };
  const KdeModel test_kde(column({ 0.3, 1.9, -1.0 }), 0.8);
  const SimplexVector init = SimplexVector::binary(0.35);
  EXPECT_EQ(pe_kde_minimize(kdes, test_kde, UnlabeledDataset(column({ 0.3, 1.9, -1.0 })), init).theta, init);
}

TEST(PeKde, HessianConstantPsdAndGradientCorrect)
{
  const auto gen = GaussianClassGenerator::three_class();
  std::mt19937_64 rng(3);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto train = gen.draw_stratified({ 10, 10, 10 }, RngSeed{ s });
    const auto test = gen.draw_with_prior(40, SimplexVector::uniform(3), RngSeed{ s + 1 }).unlabeled();
    const auto kdes = fit_class_kdes(train, BandwidthMethod::least_squares_cv);
    const auto obj = PeKdeObjective::build(kdes, fit_kde(test.features(), BandwidthMethod::least_squares_cv).model, test);
    const Eigen::MatrixXd hess = obj.hessian();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12);
    // value is exactly quadratic: second differences reproduce the Hessian
    const Eigen::VectorXd t = testutil::random_simplex(3, rng);
    const double h = 1e-3;
    for (int a = 0; a < 3; ++a) {
      Eigen::VectorXd ea = Eigen::VectorXd::Zero(3);
      ea(a) = h;
      const double second = (obj.value(t + ea) - 2 * obj.value(t) + obj.value(t - ea)) / (h * h);
      EXPECT_NEAR(second, hess(a, a), 1e-5 * (1 + hess(a, a)));
      const double fd = (obj.value(t + ea) - obj.value(t - ea)) / (2 * h);
      EXPECT_NEAR(obj(t).second(a), fd, 1e-7 * (1 + std::abs(fd)));
    }
  }
}

TEST(PeKde, RecoversPriorWithLargeSamples)
{
  const auto gen = GaussianClassGenerator::gauss_1d();
  const auto train = gen.draw_stratified({ 300, 300 }, RngSeed{ 4 });
  const auto test = gen.draw_with_prior(1000, SimplexVector::binary(0.3), RngSeed{ 5 }).unlabeled();
  EXPECT_NEAR(estimate_pe_kde(train, test).theta[0], 0.3, 0.1);
  EXPECT_NEAR(estimate_kl_kde(train, test).theta[0], 0.3, 0.1);
}
