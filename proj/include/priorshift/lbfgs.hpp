#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <algorithm>
#include <deque>
#include <functional>
#include <vector>

namespace priorshift {

struct LbfgsOptions
{
  int memory = 10;
  int max_iterations = 5000;
  //! Converged when ||grad|| <= gradient_tolerance * (1 + ||x||).
  double gradient_tolerance = 1e-7;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  int max_line_search = 40;
};

struct LbfgsResult
{
  Eigen::VectorXd x;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

//! Value-and-gradient callable: writes grad, returns f(x).
using SmoothObjective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

namespace detail {

struct LinePoint
{
  double t;
  double f;
  double slope;
};

//! Minimizer of the cubic interpolating two line points, clamped into the
//! middle 80% of the bracket; falls back to bisection.
inline double
interpolate_step(const LinePoint& a, const LinePoint& b)
{
  const double lo = std::min(a.t, b.t);
  const double hi = std::max(a.t, b.t);
  const double d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.t - b.t);
  const double disc = d1 * d1 - a.slope * b.slope;
  double t = 0.5 * (lo + hi);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b.t - a.t);
    const double denom = b.slope - a.slope + 2.0 * d2;
    if (denom != 0.0) {
      const double cand = b.t - (b.t - a.t) * (b.slope + d2 - d1) / denom;
      if (std::isfinite(cand)) {
        t = cand;
      }
    }
  }
  const double margin = 0.1 * (hi - lo);
  return std::clamp(t, lo + margin, hi - margin);
}

} // namespace detail

//! Limited-memory BFGS with a strong-Wolfe bracketing line search.
inline LbfgsResult
lbfgs_minimize(const SmoothObjective& f, Eigen::VectorXd x, const LbfgsOptions& options = {})
{
  LbfgsResult res;
  Eigen::VectorXd g(x.size());
  double fx = f(x, g);
  std::deque<Eigen::VectorXd> s_hist;
  std::deque<Eigen::VectorXd> y_hist;
  std::deque<double> rho_hist;

  auto converged = [&](const Eigen::VectorXd& grad, const Eigen::VectorXd& at) {
    return grad.norm() <= options.gradient_tolerance * (1.0 + at.norm());
  };

  for (res.iterations = 0; res.iterations < options.max_iterations; ++res.iterations) {
    if (converged(g, x)) {
      res.converged = true;
      break;
    }
    // two-loop recursion
    Eigen::VectorXd q = g;
    std::vector<double> a(s_hist.size());
    for (int k = static_cast<int>(s_hist.size()) - 1; k >= 0; --k) {
      a[static_cast<std::size_t>(k)] = rho_hist[static_cast<std::size_t>(k)] * s_hist[static_cast<std::size_t>(k)].dot(q);
      q -= a[static_cast<std::size_t>(k)] * y_hist[static_cast<std::size_t>(k)];
    }
    double gamma = 1.0 / std::max(1.0, g.norm());
    if (!s_hist.empty()) {
      gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    }
    Eigen::VectorXd d = gamma * q;
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double b = rho_hist[k] * y_hist[k].dot(d);
      d += s_hist[k] * (a[k] - b);
    }
    d = -d;
    double slope0 = g.dot(d);
    if (!(slope0 < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      d = -g / std::max(1.0, g.norm());
      slope0 = g.dot(d);
    }

    // strong Wolfe search along d
    const detail::LinePoint origin{ 0.0, fx, slope0 };
    detail::LinePoint prev = origin;
    detail::LinePoint lo = origin;
    detail::LinePoint hi = origin;
    bool bracketed = false;
    double t = 1.0;
    Eigen::VectorXd x_new;
    Eigen::VectorXd g_new(x.size());
    double f_new = fx;
    bool found = false;
    for (int ls = 0; ls < options.max_line_search; ++ls) {
      x_new = x + t * d;
      f_new = f(x_new, g_new);
      const double slope = g_new.dot(d);
      const detail::LinePoint cur{ t, f_new, slope };
      if (!bracketed) {
        if (!std::isfinite(f_new) || f_new > fx + options.wolfe_c1 * t * slope0 ||
            (ls > 0 && f_new >= prev.f)) {
          lo = prev;
          hi = cur;
          bracketed = true;
        } else if (std::abs(slope) <= -options.wolfe_c2 * slope0) {
          found = true;
          break;
        } else if (slope >= 0.0) {
          lo = cur;
          hi = prev;
          bracketed = true;
        } else {
          prev = cur;
          t *= 2.0;
          continue;
        }
      } else {
        if (!std::isfinite(f_new) || f_new > fx + options.wolfe_c1 * t * slope0 || f_new >= lo.f) {
          hi = cur;
        } else {
          if (std::abs(slope) <= -options.wolfe_c2 * slope0) {
            found = true;
            break;
          }
          if (slope * (hi.t - lo.t) >= 0.0) {
            hi = lo;
          }
          lo = cur;
        }
      }
      if (!std::isfinite(hi.f)) {
        t = 0.5 * (lo.t + hi.t);
      } else {
        t = detail::interpolate_step(lo, hi);
      }
      if (std::abs(hi.t - lo.t) < 1e-16 * std::max(1.0, lo.t)) {
        break;
      }
    }
    if (!found) {
      // accept the best sufficient-decrease point seen, if any
      if (lo.t > 0.0 && lo.f < fx) {
        x_new = x + lo.t * d;
        f_new = f(x_new, g_new);
      } else {
        break;
      }
    }

    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    x = std::move(x_new);
    g = g_new;
    const double f_old = fx;
    fx = f_new;
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(yv));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > options.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    if (std::abs(f_old - fx) <= 1e-16 * std::max(1.0, std::abs(fx)) && converged(g, x)) {
      res.converged = true;
      ++res.iterations;
      break;
    }
  }
  res.x = std::move(x);
  res.value = fx;
  res.gradient_norm = g.norm();
  res.converged = res.converged || converged(g, res.x);
  return res;
}

} // namespace priorshift
