#pragma once

#include "error.hpp"
#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <string>

namespace priorshift {

//! Probability vector over c classes: non-negative entries summing to one.
class SimplexVector
{
public:
  static constexpr double sum_tolerance = 1e-12;

  SimplexVector() = default;

  explicit SimplexVector(Eigen::VectorXd values)
    : values_(std::move(values))
  {
    if (values_.size() == 0) {
      throw ValidationError("simplex vector must have at least one entry");
    }
    for (Eigen::Index y = 0; y < values_.size(); ++y) {
      if (!std::isfinite(values_(y)) || values_(y) < 0.0) {
        throw ValidationError("simplex vector entry " + std::to_string(y) +
                              " is negative or non-finite");
      }
    }
    if (std::abs(values_.sum() - 1.0) > sum_tolerance) {
      std::ostringstream os;
      os.precision(17);
      os << "simplex vector entries sum to " << values_.sum() << ", not 1";
      throw ValidationError(os.str());
    }
  }

  //! Clamps tiny negative rounding residue to zero and rescales to unit sum.
  static SimplexVector renormalized(Eigen::VectorXd values)
  {
    for (Eigen::Index y = 0; y < values.size(); ++y) {
      if (!std::isfinite(values(y))) {
        throw NumericalError("non-finite entry in prior estimate");
      }
      values(y) = std::max(values(y), 0.0);
    }
    const double total = values.sum();
    if (!(total > 0.0)) {
      throw NumericalError("prior estimate has no positive mass");
    }
    values /= total;
    return SimplexVector(std::move(values));
  }

  static SimplexVector uniform(int num_classes)
  {
    return SimplexVector(Eigen::VectorXd::Constant(num_classes, 1.0 / num_classes));
  }

  //! Two-class vector (first, 1 - first).
  static SimplexVector binary(double first)
  {
    Eigen::VectorXd v(2);
    v << first, 1.0 - first;
    return SimplexVector(std::move(v));
  }

  const Eigen::VectorXd& values() const noexcept { return values_; }
  int size() const noexcept { return static_cast<int>(values_.size()); }
  double operator[](int y) const { return values_(y); }

  friend bool operator==(const SimplexVector& a, const SimplexVector& b)
  {
    return a.values_.size() == b.values_.size() && a.values_ == b.values_;
  }

private:
  Eigen::VectorXd values_;
};

} // namespace priorshift
