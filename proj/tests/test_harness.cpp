#include "test_util.hpp"
#include <priorshift/harness.hpp>
#include <gtest/gtest.h>
#include <map>

using namespace priorshift;

namespace {

std::string
report_text(const SweepResult& r, ReportFormat f)
{
  std::ostringstream os;
  write_report(os, r, f);
  return os.str();
}

std::string
log_text(const SweepResult& r)
{
  std::ostringstream os;
  write_trial_log(os, r);
  return os.str();
}

TrialSpec
quick_spec(std::vector<EstimatorId> ids, int repeats)
{
  TrialSpec spec;
  spec.estimators = std::move(ids);
  spec.theta_star_grid = default_binary_grid();
  spec.repeats = repeats;
  spec.seed = RngSeed{ 99 };
  return spec;
}

} // namespace

TEST(Generator, NonPositiveDefiniteCovarianceRejected)
{
  Eigen::Matrix2d bad;
  bad << 1, 2, 2, 1;
  EXPECT_THROW(GaussianClassGenerator({ Eigen::Vector2d::Zero() }, { bad }), ValidationError);
  Eigen::Matrix2d asym;
  asym << 1, 0.5, 0, 1;
  EXPECT_THROW(GaussianClassGenerator({ Eigen::Vector2d::Zero() }, { asym }), ValidationError);
}

TEST(Generator, GaussOneDBayesError)
{
  // means +-2, unit variance: the Bayes rule at equal priors thresholds at 0
  const auto gen = GaussianClassGenerator::gauss_1d();
  const auto d = gen.draw_stratified({ 100000, 100000 }, RngSeed{ 1 });
  std::size_t wrong = 0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    wrong += (d.features()(i, 0) > 0.0) != (d.classes()[static_cast<std::size_t>(i)] == 1);
  }
  const double phi_minus_2 = 0.5 * std::erfc(2.0 / std::sqrt(2.0));
  EXPECT_NEAR(phi_minus_2, 0.0228, 1e-4);
  EXPECT_NEAR(static_cast<double>(wrong) / d.size(), phi_minus_2, 0.002);
}

TEST(Generator, ThreeClassTestPrior)
{
  const auto gen = GaussianClassGenerator::three_class();
  const SimplexVector p(Eigen::Vector3d(0.6, 0.1, 0.3));
  const auto d = gen.draw_with_prior(30000, p, RngSeed{ 2 });
  EXPECT_EQ(d.num_classes(), 3);
  EXPECT_EQ(d.dim(), 2);
  EXPECT_NEAR(d.class_count(0) / 30000.0, 0.6, 0.01);
  EXPECT_NEAR(d.class_count(1) / 30000.0, 0.1, 0.01);
  EXPECT_NEAR(d.class_count(2) / 30000.0, 0.3, 0.01);
}

TEST(Sweep, SmallestSweepIsOneRow)
{
  TrialSpec spec = quick_spec({ EstimatorId::pe_dr }, 1);
  spec.theta_star_grid = { SimplexVector::binary(0.5) };
  const auto r = run_sweep(GaussianClassGenerator::gauss_1d(), spec);
  ASSERT_EQ(r.rows.size(), 1u);
  ASSERT_EQ(r.trials.size(), 1u);
  EXPECT_EQ(r.rows[0].trials, 1);
  EXPECT_EQ(r.rows[0].mean_sq_error, r.trials[0].sq_error);
  EXPECT_EQ(r.rows[0].stderr_sq_error, 0.0);
  const auto csv = report_text(r, ReportFormat::csv);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST(Sweep, InvalidSpecsRejected)
{
  const auto gen = GaussianClassGenerator::gauss_1d();
  TrialSpec spec = quick_spec({ EstimatorId::pe_dr }, 1);
  spec.theta_star_grid.clear();
  EXPECT_THROW(run_sweep(gen, spec), ValidationError);
  spec = quick_spec({ EstimatorId::pe_dr }, 0);
  EXPECT_THROW(run_sweep(gen, spec), ValidationError);
  spec = quick_spec({ EstimatorId::pe_dr }, 1);
  spec.train_per_class = { 10, 10, 10 };
  EXPECT_THROW(run_sweep(gen, spec), ValidationError);
}

// Aggregates recomputed from the emitted raw log.
TEST(Sweep, AggregatesRecomputableFromRawLog)
{
  const auto spec = quick_spec({ EstimatorId::pe_dr, EstimatorId::kl_kde }, 20);
  const auto r = run_sweep(GaussianClassGenerator::gauss_1d(), spec);
  ASSERT_EQ(r.rows.size(), 10u);

  std::map<std::pair<std::string, int>, std::vector<std::pair<double, double>>> cells;
  std::istringstream log(log_text(r));
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, "estimator,theta_index,repeat,theta_star,theta_hat,sq_error,l2_distance,misclass,wall_ms,converged,error");
  while (std::getline(log, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) {
      f.push_back(field);
    }
    ASSERT_GE(f.size(), 10u);
    cells[{ f[0], std::stoi(f[1]) }].push_back({ std::stod(f[5]), std::stod(f[7]) });
  }
  for (const auto& row : r.rows) {
    const auto& v = cells.at({ std::string(estimator_name(row.estimator)), static_cast<int>(row.theta_index) });
    ASSERT_EQ(static_cast<int>(v.size()), row.trials);
    double se = 0.0, mc = 0.0;
    for (auto [e, m] : v) {
      se += e;
      mc += m;
    }
    se /= v.size();
    mc /= v.size();
    double ss = 0.0;
    for (auto [e, m] : v) {
      ss += (e - se) * (e - se);
    }
    const double stderr_se = std::sqrt(ss / (v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
    EXPECT_NEAR(row.mean_sq_error, se, 1e-12);
    EXPECT_NEAR(row.stderr_sq_error, stderr_se, 1e-12);
    EXPECT_NEAR(row.mean_misclass, mc, 1e-12);
  }
}

TEST(Sweep, DeterministicAcrossRunsAndThreadCounts)
{
  auto spec = quick_spec({ EstimatorId::em_klr, EstimatorId::pe_kde, EstimatorId::pe_dr }, 4);
  const auto gen = GaussianClassGenerator::gauss_1d();
  const auto a = run_sweep(gen, spec);
  const auto b = run_sweep(gen, spec);
  spec.jobs = 3;
  const auto c = run_sweep(gen, spec);
  for (auto f : { ReportFormat::csv, ReportFormat::plot_data }) {
    EXPECT_EQ(report_text(a, f), report_text(b, f));
    EXPECT_EQ(report_text(a, f), report_text(c, f));
  }
  EXPECT_EQ(log_text(a), log_text(c));
}

TEST(Sweep, TrialDependsOnlyOnItsSeed)
{
  const auto gen = GaussianClassGenerator::gauss_1d();
  const auto r2 = run_sweep(gen, quick_spec({ EstimatorId::pe_dr }, 2));
  const auto r3 = run_sweep(gen, quick_spec({ EstimatorId::pe_dr }, 3));
  for (const auto& t : r2.trials) {
    const auto it = std::find_if(r3.trials.begin(), r3.trials.end(), [&](const TrialRecord& o) {
      return o.theta_index == t.theta_index && o.repeat == t.repeat;
    });
    ASSERT_NE(it, r3.trials.end());
    EXPECT_EQ(*it->theta_hat, *t.theta_hat);
    EXPECT_EQ(it->misclass, t.misclass);
  }
  EXPECT_EQ(trial_seed(RngSeed{ 5 }, 2, 7).value, trial_seed(RngSeed{ 5 }, 2, 7).value);
  EXPECT_NE(trial_seed(RngSeed{ 5 }, 2, 7).value, trial_seed(RngSeed{ 5 }, 7, 2).value);
}

TEST(Sweep, FailedDrawRecordedAsMissing)
{
  // 12 points per class cannot supply 10 training plus 50 test rows
  const auto pool = GaussianClassGenerator::gauss_1d().draw_stratified({ 12, 12 }, RngSeed{ 3 });
  auto spec = quick_spec({ EstimatorId::pe_dr }, 2);
  const auto r = run_sweep(pool, spec);
  for (const auto& t : r.trials) {
    EXPECT_FALSE(t.theta_hat.has_value());
    EXPECT_FALSE(t.error.empty());
  }
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.trials, 0);
    EXPECT_TRUE(std::isnan(row.mean_sq_error));
  }
}

TEST(Sweep, PoolSourceRuns)
{
  const auto pool = GaussianClassGenerator::gauss_1d().draw_stratified({ 200, 200 }, RngSeed{ 4 });
  const auto r = run_sweep(pool, quick_spec({ EstimatorId::pe_dr, EstimatorId::unweighted, EstimatorId::oracle }, 3));
  for (const auto& t : r.trials) {
    ASSERT_TRUE(t.theta_hat.has_value()) << t.error;
    if (t.estimator == EstimatorId::oracle) {
      EXPECT_EQ(t.sq_error, 0.0);
    }
  }
}

TEST(Sweep, PeDrSmallSampleTrialUnderOneSecond)
{
  auto spec = quick_spec({ EstimatorId::pe_dr }, 4);
  spec.record_timing = true;
  spec.classify = false;
  const auto r = run_sweep(GaussianClassGenerator::gauss_1d(), spec);
  for (const auto& t : r.trials) {
    EXPECT_LE(t.wall_ms, 1000.0);
  }
  spec.record_timing = false;
  for (const auto& t : run_sweep(GaussianClassGenerator::gauss_1d(), spec).trials) {
    EXPECT_EQ(t.wall_ms, 0.0);
  }
}

TEST(Report, GoldenCsvAndPlotData)
{
  SweepResult r;
  r.theta_star_grid = { SimplexVector::binary(0.1), SimplexVector::binary(0.5) };
  AggregateRow a{ EstimatorId::pe_dr, 0, 3, 0.01, 0.002, 0.25, 0.05, 0.0 };
  AggregateRow b{ EstimatorId::pe_dr, 1, 3, 0.02, 0.004, 0.125, NAN, 1.5 };
  AggregateRow c{ EstimatorId::em_klr, 0, 0, NAN, NAN, NAN, NAN, NAN };
  r.rows = { a, b, c };
  EXPECT_EQ(report_text(r, ReportFormat::csv),
            "estimator,theta_star,mean_sq_error,stderr_sq_error,mean_misclass,stderr_misclass,mean_wall_ms\n"
            "pe-dr,0.1,0.01,0.002,0.25,0.05,0\n"
            "pe-dr,0.5,0.02,0.004,0.125,nan,1.5\n"
            "em-klr,0.1,nan,nan,nan,nan,nan\n");
  EXPECT_EQ(report_text(r, ReportFormat::plot_data),
            "# estimator pe-dr\n"
            "# theta_star mean_sq_error stderr_sq_error mean_misclass stderr_misclass mean_wall_ms trials\n"
            "0.1 0.01 0.002 0.25 0.05 0 3\n"
            "0.5 0.02 0.004 0.125 nan 1.5 3\n"
            "\n\n"
            "# estimator em-klr\n"
            "# theta_star mean_sq_error stderr_sq_error mean_misclass stderr_misclass mean_wall_ms trials\n"
            "0.1 nan nan nan nan nan 0\n");
}

TEST(Report, ThreeClassLabelJoinsEntries)
{
  SweepResult r;
  r.theta_star_grid = { SimplexVector(Eigen::Vector3d(0.6, 0.1, 0.3)) };
  r.rows = { AggregateRow{ EstimatorId::pe_dr, 0, 1, 0.5, 0, 0.1, 0, 0 } };
  EXPECT_NE(report_text(r, ReportFormat::csv).find("pe-dr,0.6;0.1;0.3,0.5,"), std::string::npos);
}

TEST(Report, EmitTwiceIdenticalBytes)
{
  const auto dir = testutil::scratch_dir("emit");
  const auto r = run_sweep(GaussianClassGenerator::gauss_1d(), quick_spec({ EstimatorId::pe_dr }, 2));
  emit_report(r, (dir / "a.csv").string(), ReportFormat::csv);
  emit_report(r, (dir / "b.csv").string(), ReportFormat::csv);
  EXPECT_EQ(testutil::read_file(dir / "a.csv"), testutil::read_file(dir / "b.csv"));
  EXPECT_EQ(testutil::read_file(dir / "a.csv"), report_text(r, ReportFormat::csv));
}

TEST(Report, UnwritablePathAndEmptyTable)
{
  const auto r = run_sweep(GaussianClassGenerator::gauss_1d(), quick_spec({ EstimatorId::unweighted }, 1));
  EXPECT_THROW(emit_report(r, "/nonexistent-dir/report.csv", ReportFormat::csv), IoError);
  EXPECT_THROW(report_text(SweepResult{}, ReportFormat::csv), ValidationError);
}
