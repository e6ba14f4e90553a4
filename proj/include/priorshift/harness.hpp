#pragma once

#include "classifiers.hpp"
#include "dataset.hpp"
#include "estimators.hpp"
#include "generators.hpp"
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace priorshift {

struct TrialSpec
{
  std::vector<EstimatorId> estimators = all_estimators();
  std::vector<int> train_per_class{ 10, 10 };
  Eigen::Index test_total = 50;
  //! Test priors to sweep over; one row block per entry.
  std::vector<SimplexVector> theta_star_grid;
  int repeats = 100;
  RngSeed seed;
  EstimatorConfig config;
  //! Train and score the weighted classifier for every estimate.
  bool classify = true;
  //! Record wall time per estimate. Off keeps the output byte-reproducible.
  bool record_timing = false;
  bool standardize = false;
  int jobs = 1;
};

//! Default sweep grid theta*_1 in {0.1, ..., 0.5} for two classes.
inline std::vector<SimplexVector>
default_binary_grid()
{
  std::vector<SimplexVector> grid;
  for (int k = 1; k <= 5; ++k) {
    grid.push_back(SimplexVector::binary(0.1 * k));
  }
  return grid;
}

//! One (estimator, theta*, repeat) record of the raw trial log.
struct TrialRecord
{
  EstimatorId estimator{};
  std::size_t theta_index = 0;
  int repeat = 0;
  std::optional<SimplexVector> theta_hat;
  double sq_error = NAN;
  double l2_distance = NAN;
  double misclass = NAN;
  double wall_ms = 0.0;
  bool converged = false;
  std::string error;
};

//! Mean and standard error over the successful trials of one cell.
struct AggregateRow
{
  EstimatorId estimator{};
  std::size_t theta_index = 0;
  int trials = 0;
  double mean_sq_error = NAN;
  double stderr_sq_error = NAN;
  double mean_misclass = NAN;
  double stderr_misclass = NAN;
  double mean_wall_ms = NAN;
};

struct SweepResult
{
  std::vector<SimplexVector> theta_star_grid;
  std::vector<TrialRecord> trials;
  std::vector<AggregateRow> rows;
};

//! Trials draw either from a generator or, without replacement, from a
//! labeled pool.
using DataSource = std::variant<GaussianClassGenerator, LabeledDataset>;

inline int
source_classes(const DataSource& source)
{
  return std::visit([](const auto& s) { return s.num_classes(); }, source);
}

inline double
squared_distance(const SimplexVector& a, const SimplexVector& b)
{
  return (a.values() - b.values()).squaredNorm();
}

//! Seed of trial (theta_index, repeat); depends on nothing else.
inline RngSeed
trial_seed(RngSeed master, std::size_t theta_index, int repeat)
{
  return master.derive(static_cast<std::uint64_t>(theta_index) + 1, static_cast<std::uint64_t>(repeat) + 1);
}

namespace detail {

inline std::pair<LabeledDataset, LabeledDataset>
draw_trial(const DataSource& source, const TrialSpec& spec, const SimplexVector& theta_star, RngSeed seed)
{
  if (const auto* gen = std::get_if<GaussianClassGenerator>(&source)) {
    return { gen->draw_stratified(spec.train_per_class, seed.derive(1)),
             gen->draw_with_prior(spec.test_total, theta_star, seed.derive(2)) };
  }
  const auto& pool = std::get<LabeledDataset>(source);
  const auto train_rows = stratified_draw_indices(pool, spec.train_per_class, seed.derive(1));
  const auto test_rows = prior_draw_indices(pool, spec.test_total, theta_star, seed.derive(2), train_rows);
  return { pool.subset(train_rows), pool.subset(test_rows) };
}

inline double
weighted_classifier_error(const LabeledDataset& train, const LabeledDataset& eval, const SimplexVector& theta_hat,
                          const EstimatorConfig& config, RngSeed seed)
{
  const Eigen::VectorXd w = instance_weights(train, theta_hat);
  if (!(w.sum() > 0.0)) {
    throw NumericalError("estimated prior gives every training sample zero weight");
  }
  if (train.num_classes() == 2) {
    RlsFitOptions o;
    o.sigma = config.sigma;
    o.ridge = config.ridge;
    o.folds = config.folds;
    o.center_cap = config.center_cap;
    return misclassification_rate(fit_weighted_rls(train, w, seed, o).model, eval);
  }
  KlrFitOptions o;
  o.sigma = config.sigma;
  o.ridge = config.ridge;
  o.folds = config.folds;
  o.center_cap = config.center_cap;
  return misclassification_rate(fit_klr(train, w, seed, o), eval);
}

//! All estimators of one (theta*, repeat) trial, in spec order.
inline std::vector<TrialRecord>
run_trial(const DataSource& source, const TrialSpec& spec, std::size_t theta_index, int repeat)
{
  const SimplexVector& theta_star = spec.theta_star_grid[theta_index];
  const RngSeed seed = trial_seed(spec.seed, theta_index, repeat);
  std::vector<TrialRecord> out;
  LabeledDataset train;
  LabeledDataset eval;
  UnlabeledDataset test;
  std::string draw_error;
  try {
    std::tie(train, eval) = draw_trial(source, spec, theta_star, seed);
    if (spec.standardize) {
      const auto s = Standardizer::fit(train.features());
      train = s.apply(train);
      eval = s.apply(eval);
    }
    test = eval.unlabeled();
  } catch (const std::exception& e) {
    draw_error = e.what();
  }
  for (auto id : spec.estimators) {
    TrialRecord r;
    r.estimator = id;
    r.theta_index = theta_index;
    r.repeat = repeat;
    if (!draw_error.empty()) {
      r.error = draw_error;
      out.push_back(std::move(r));
      continue;
    }
    try {
      const auto start = std::chrono::steady_clock::now();
      const auto est = estimate_prior(id, train, test, seed.derive(3), spec.config, theta_star);
      const auto stop = std::chrono::steady_clock::now();
      if (spec.record_timing) {
        r.wall_ms = std::chrono::duration<double, std::milli>(stop - start).count();
      }
      r.theta_hat = est.theta;
      r.converged = est.converged;
      r.sq_error = squared_distance(est.theta, theta_star);
      r.l2_distance = std::sqrt(r.sq_error);
      if (spec.classify) {
        r.misclass = weighted_classifier_error(train, eval, est.theta, spec.config, seed.derive(4));
      }
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

} // namespace detail

inline std::vector<AggregateRow>
aggregate(const std::vector<TrialRecord>& trials, const std::vector<EstimatorId>& estimators,
          std::size_t grid_size)
{
  auto mean_stderr = [](const std::vector<double>& v) -> std::pair<double, double> {
    if (v.empty()) {
      return { NAN, NAN };
    }
    double s = 0.0;
    for (double x : v) {
      s += x;
    }
    const double m = s / static_cast<double>(v.size());
    if (v.size() < 2) {
      return { m, 0.0 };
    }
    double ss = 0.0;
    for (double x : v) {
      ss += (x - m) * (x - m);
    }
    const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    return { m, sd / std::sqrt(static_cast<double>(v.size())) };
  };

  std::vector<AggregateRow> rows;
  for (auto id : estimators) {
    for (std::size_t t = 0; t < grid_size; ++t) {
      std::vector<double> err;
      std::vector<double> mis;
      std::vector<double> ms;
      for (const auto& r : trials) {
        if (r.estimator != id || r.theta_index != t || !r.theta_hat) {
          continue;
        }
        err.push_back(r.sq_error);
        ms.push_back(r.wall_ms);
        if (std::isfinite(r.misclass)) {
          mis.push_back(r.misclass);
        }
      }
      AggregateRow row;
      row.estimator = id;
      row.theta_index = t;
      row.trials = static_cast<int>(err.size());
      std::tie(row.mean_sq_error, row.stderr_sq_error) = mean_stderr(err);
      std::tie(row.mean_misclass, row.stderr_misclass) = mean_stderr(mis);
      row.mean_wall_ms = mean_stderr(ms).first;
      rows.push_back(row);
    }
  }
  return rows;
}

//! Runs every (theta*, repeat) trial, on `spec.jobs` threads. Records come
//! back in (theta*, repeat, estimator) order whatever the thread count.
inline SweepResult
run_sweep(const DataSource& source, const TrialSpec& spec)
{
  if (spec.theta_star_grid.empty()) {
    throw ValidationError("theta* grid is empty");
  }
  if (spec.repeats < 1) {
    throw ValidationError("repeats must be at least 1");
  }
  if (spec.estimators.empty()) {
    throw ValidationError("no estimator selected");
  }
  const int c = source_classes(source);
  if (static_cast<int>(spec.train_per_class.size()) != c) {
    throw ValidationError("train_per_class needs one count per class");
  }
  for (const auto& t : spec.theta_star_grid) {
    if (t.size() != c) {
      throw ValidationError("theta* length must equal class count");
    }
  }

  const std::size_t cells = spec.theta_star_grid.size() * static_cast<std::size_t>(spec.repeats);
  std::vector<std::vector<TrialRecord>> slots(cells);
  std::atomic<std::size_t> next{ 0 };
  auto worker = [&] {
    for (std::size_t k = next++; k < cells; k = next++) {
      const std::size_t t = k / static_cast<std::size_t>(spec.repeats);
      const int rep = static_cast<int>(k % static_cast<std::size_t>(spec.repeats));
      slots[k] = detail::run_trial(source, spec, t, rep);
    }
  };
  const int jobs = std::max(1, std::min<int>(spec.jobs, static_cast<int>(cells)));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) {
      pool.emplace_back(worker);
    }
    for (auto& th : pool) {
      th.join();
    }
  }

  SweepResult result;
  result.theta_star_grid = spec.theta_star_grid;
  for (auto& s : slots) {
    for (auto& r : s) {
      result.trials.push_back(std::move(r));
    }
  }
  result.rows = aggregate(result.trials, spec.estimators, spec.theta_star_grid.size());
  return result;
}

// ---------------------------------------------------------------------------
// Reports

enum class ReportFormat
{
  csv,
  plot_data
};

namespace detail {

inline std::string
fmt(double v)
{
  if (std::isnan(v)) {
    return "nan";
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

//! theta*_1 for two classes, otherwise all entries joined by ';'.
inline std::string
theta_label(const SimplexVector& theta)
{
  if (theta.size() == 2) {
    return fmt(theta[0]);
  }
  std::string s;
  for (int y = 0; y < theta.size(); ++y) {
    s += (y ? ";" : "") + fmt(theta[y]);
  }
  return s;
}

} // namespace detail

inline void
write_report(std::ostream& out, const SweepResult& result, ReportFormat format)
{
  if (result.rows.empty()) {
    throw ValidationError("empty result table");
  }
  if (format == ReportFormat::csv) {
    out << "estimator,theta_star,mean_sq_error,stderr_sq_error,mean_misclass,stderr_misclass,mean_wall_ms\n";
    for (const auto& r : result.rows) {
      out << estimator_name(r.estimator) << ',' << detail::theta_label(result.theta_star_grid[r.theta_index]) << ','
          << detail::fmt(r.mean_sq_error) << ',' << detail::fmt(r.stderr_sq_error) << ','
          << detail::fmt(r.mean_misclass) << ',' << detail::fmt(r.stderr_misclass) << ','
          << detail::fmt(r.mean_wall_ms) << '\n';
    }
    return;
  }
  // One whitespace-separated block per estimator, blocks separated by two
  // blank lines (gnuplot "index" convention).
  bool first = true;
  std::optional<EstimatorId> current;
  for (const auto& r : result.rows) {
    if (!current || *current != r.estimator) {
      if (!first) {
        out << "\n\n";
      }
      first = false;
      current = r.estimator;
      out << "# estimator " << estimator_name(r.estimator) << '\n'
          << "# theta_star mean_sq_error stderr_sq_error mean_misclass stderr_misclass mean_wall_ms trials\n";
    }
    out << detail::theta_label(result.theta_star_grid[r.theta_index]) << ' ' << detail::fmt(r.mean_sq_error) << ' '
        << detail::fmt(r.stderr_sq_error) << ' ' << detail::fmt(r.mean_misclass) << ' '
        << detail::fmt(r.stderr_misclass) << ' ' << detail::fmt(r.mean_wall_ms) << ' ' << r.trials << '\n';
  }
}

//! Raw log: one row per (estimator, theta*, repeat).
inline void
write_trial_log(std::ostream& out, const SweepResult& result)
{
  out << "estimator,theta_index,repeat,theta_star,theta_hat,sq_error,l2_distance,misclass,wall_ms,converged,error\n";
  for (const auto& r : result.trials) {
    out << estimator_name(r.estimator) << ',' << r.theta_index << ',' << r.repeat << ','
        << detail::theta_label(result.theta_star_grid[r.theta_index]) << ',';
    if (r.theta_hat) {
      for (int y = 0; y < r.theta_hat->size(); ++y) {
        out << (y ? ";" : "") << detail::fmt((*r.theta_hat)[y]);
      }
    }
    std::string err = r.error;
    for (char& ch : err) {
      if (ch == ',' || ch == '\n') {
        ch = ' ';
      }
    }
    out << ',' << detail::fmt(r.sq_error) << ',' << detail::fmt(r.l2_distance) << ',' << detail::fmt(r.misclass)
        << ',' << detail::fmt(r.wall_ms) << ',' << (r.converged ? 1 : 0) << ',' << err << '\n';
  }
}

inline void
emit_report(const SweepResult& result, const std::string& path, ReportFormat format)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write '" + path + "'");
  }
  write_report(out, result, format);
  if (!out) {
    throw IoError("write to '" + path + "' failed");
  }
}

} // namespace priorshift
