#pragma once

#include "dataset.hpp"
#include "em.hpp"
#include "kde.hpp"
#include "kl_dr.hpp"
#include "pe_dr.hpp"
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace priorshift {

enum class EstimatorId
{
  em_klr,
  kl_kde,
  pe_kde,
  kl_dr,
  pe_dr,
  //! Baselines: the training proportions (no correction) and the true prior.
  unweighted,
  oracle
};

inline std::string_view
estimator_name(EstimatorId id)
{
  switch (id) {
    case EstimatorId::em_klr: return "em-klr";
    case EstimatorId::kl_kde: return "kl-kde";
    case EstimatorId::pe_kde: return "pe-kde";
    case EstimatorId::kl_dr: return "kl-dr";
    case EstimatorId::pe_dr: return "pe-dr";
    case EstimatorId::unweighted: return "unweighted";
    case EstimatorId::oracle: return "oracle";
  }
  return "?";
}

//! The five prior estimators, in reporting order.
inline const std::vector<EstimatorId>&
all_estimators()
{
  static const std::vector<EstimatorId> ids{ EstimatorId::em_klr, EstimatorId::kl_kde, EstimatorId::pe_kde,
                                             EstimatorId::kl_dr, EstimatorId::pe_dr };
  return ids;
}

inline std::optional<EstimatorId>
parse_estimator(std::string_view name)
{
  for (auto id : { EstimatorId::em_klr, EstimatorId::kl_kde, EstimatorId::pe_kde, EstimatorId::kl_dr,
                   EstimatorId::pe_dr, EstimatorId::unweighted, EstimatorId::oracle }) {
    if (estimator_name(id) == name) {
      return id;
    }
  }
  return std::nullopt;
}

//! Hyperparameters shared by the estimators; unset values are
//! cross-validated.
struct EstimatorConfig
{
  std::optional<double> sigma;
  std::optional<double> lambda;
  std::optional<double> ridge;
  int folds = 5;
  Eigen::Index center_cap = 500;
};

struct PriorEstimate
{
  SimplexVector theta;
  bool converged = true;
};

//! Runs one estimator. `oracle` needs `truth`.
inline PriorEstimate
estimate_prior(EstimatorId id, const LabeledDataset& train, const UnlabeledDataset& test, RngSeed seed,
               const EstimatorConfig& config = {}, const std::optional<SimplexVector>& truth = std::nullopt)
{
  switch (id) {
    case EstimatorId::em_klr: {
      KlrFitOptions o;
      o.sigma = config.sigma;
      o.ridge = config.ridge;
      o.folds = config.folds;
      o.center_cap = config.center_cap;
      const auto fit = estimate_em_klr(train, test, seed, o);
      return { fit.result.theta_hat, fit.result.converged && fit.model.converged };
    }
    case EstimatorId::kl_kde: {
      const auto r = estimate_kl_kde(train, test);
      return { r.theta, r.converged };
    }
    case EstimatorId::pe_kde: {
      const auto r = estimate_pe_kde(train, test);
      return { r.theta, r.converged };
    }
    case EstimatorId::kl_dr: {
      KlDrOptions o;
      o.sigma = config.sigma;
      o.folds = config.folds;
      o.center_cap = config.center_cap;
      const auto fit = estimate_kl_dr(train, test, seed, o);
      return { fit.result.theta_hat, fit.result.inner_failures == 0 };
    }
    case EstimatorId::pe_dr: {
      PeDrOptions o;
      o.sigma = config.sigma;
      o.lambda = config.lambda;
      o.folds = config.folds;
      o.center_cap = config.center_cap;
      const auto fit = estimate_pe_dr(train, test, seed, o);
      return { fit.estimate.theta_hat, fit.estimate.converged };
    }
    case EstimatorId::unweighted:
      return { train.class_proportions(), true };
    case EstimatorId::oracle:
      if (!truth) {
        throw ValidationError("oracle estimator needs the true prior");
      }
      return { *truth, true };
  }
  throw ValidationError("unknown estimator");
}

} // namespace priorshift
