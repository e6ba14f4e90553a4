#include <CLI11.hpp>
#include <priorshift/priorshift.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

using namespace priorshift;

namespace {

struct RunConfig
{
  std::string command;
  std::string train;
  std::string test;
  std::string eval;
  std::string estimator;
  std::string theta;
  std::string theta_grid;
  std::string generator = "gauss-1d";
  int dim = 5;
  int train_per_class = 10;
  long test_size = 0;
  int repeats = 100;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string out;
  std::string format = "csv";
  std::optional<double> sigma;
  std::optional<double> lambda;
  std::optional<double> ridge;
  bool standardize = false;
  bool timing = false;
};

std::string
fmt(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string
opt_str(const std::optional<double>& v)
{
  return v ? fmt(*v) : "cv";
}

std::vector<std::string>
split(const std::string& s, char sep)
{
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    const auto a = item.find_first_not_of(" \t");
    if (a == std::string::npos) {
      continue;
    }
    const auto b = item.find_last_not_of(" \t");
    out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

double
parse_real(const std::string& s, const std::string& what)
{
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || !std::isfinite(v)) {
    throw ValidationError(what + ": '" + s + "' is not a number");
  }
  return v;
}

SimplexVector
parse_prior(const std::string& s, int c, const std::string& what)
{
  const auto parts = split(s, ',');
  if (static_cast<int>(parts.size()) != c) {
    throw ValidationError(what + " needs " + std::to_string(c) + " comma-separated entries");
  }
  Eigen::VectorXd v(c);
  for (int y = 0; y < c; ++y) {
    v(y) = parse_real(parts[static_cast<std::size_t>(y)], what);
    if (v(y) < 0.0) {
      throw ValidationError(what + " has a negative entry");
    }
  }
  if (std::abs(v.sum() - 1.0) > 1e-9) {
    throw ValidationError(what + " entries must sum to 1");
  }
  return SimplexVector::renormalized(v);
}

//! Two classes: comma-separated theta*_1 values. Otherwise ';'-separated
//! prior vectors.
std::vector<SimplexVector>
parse_grid(const std::string& s, int c)
{
  std::vector<SimplexVector> grid;
  if (c == 2 && s.find(';') == std::string::npos) {
    for (const auto& item : split(s, ',')) {
      const double t = parse_real(item, "--theta-grid");
      if (t < 0.0 || t > 1.0) {
        throw ValidationError("--theta-grid values must lie in [0, 1]");
      }
      grid.push_back(SimplexVector::binary(t));
    }
  } else {
    for (const auto& item : split(s, ';')) {
      grid.push_back(parse_prior(item, c, "--theta-grid"));
    }
  }
  if (grid.empty()) {
    throw ValidationError("--theta-grid is empty");
  }
  return grid;
}

std::vector<EstimatorId>
parse_estimators(const std::string& s)
{
  if (s == "all") {
    return all_estimators();
  }
  std::vector<EstimatorId> ids;
  for (const auto& item : split(s, ',')) {
    const auto id = parse_estimator(item);
    if (!id) {
      throw ValidationError("unknown estimator '" + item + "'");
    }
    ids.push_back(*id);
  }
  if (ids.empty()) {
    throw ValidationError("no estimator selected");
  }
  return ids;
}

EstimatorConfig
estimator_config(const RunConfig& cfg)
{
  EstimatorConfig e;
  e.sigma = cfg.sigma;
  e.lambda = cfg.lambda;
  e.ridge = cfg.ridge;
  return e;
}

//! The resolved configuration as "# key=value" lines.
std::string
config_header(const RunConfig& cfg)
{
  std::ostringstream h;
  auto line = [&](const std::string& k, const std::string& v) { h << "# " << k << '=' << v << '\n'; };
  line("command", cfg.command);
  line("train", cfg.train);
  line("test", cfg.test);
  line("eval", cfg.eval);
  line("estimator", cfg.estimator);
  line("theta", cfg.theta);
  if (cfg.command == "benchmark") {
    line("theta-grid", cfg.theta_grid);
    line("generator", cfg.train.empty() ? cfg.generator : "none");
    line("dim", std::to_string(cfg.dim));
    line("train-per-class", std::to_string(cfg.train_per_class));
    line("test-size", std::to_string(cfg.test_size));
    line("repeats", std::to_string(cfg.repeats));
    line("jobs", std::to_string(cfg.jobs));
    line("format", cfg.format);
    line("timing", cfg.timing ? "true" : "false");
  }
  line("seed", std::to_string(cfg.seed));
  line("sigma", opt_str(cfg.sigma));
  line("lambda", opt_str(cfg.lambda));
  line("ridge", opt_str(cfg.ridge));
  line("standardize", cfg.standardize ? "true" : "false");
  line("out", cfg.out);
  return h.str();
}

//! Writes to `path`, or stdout when it is empty.
void
write_output(const std::string& path, const std::string& text)
{
  if (path.empty()) {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write '" + path + "'");
  }
  out << text;
  if (!out) {
    throw IoError("write to '" + path + "' failed");
  }
}

void
require(const std::string& value, const std::string& flag)
{
  if (value.empty()) {
    throw ValidationError("missing required option " + flag);
  }
}

struct Inputs
{
  LabeledDataset train;
  UnlabeledDataset test;
  std::optional<LabeledDataset> eval;
};

Inputs
load_inputs(const RunConfig& cfg)
{
  require(cfg.train, "--train");
  require(cfg.test, "--test");
  Inputs in{ load_labeled(cfg.train), load_unlabeled(cfg.test), std::nullopt };
  if (in.train.dim() != in.test.dim()) {
    throw ValidationError("--train and --test have different feature counts");
  }
  if (!cfg.eval.empty()) {
    auto e = load_labeled(cfg.eval);
    if (e.dim() != in.train.dim()) {
      throw ValidationError("--eval has a different feature count");
    }
    in.eval = std::move(e);
  }
  if (cfg.standardize) {
    const auto s = Standardizer::fit(in.train.features());
    in.train = s.apply(in.train);
    in.test = s.apply(in.test);
    if (in.eval) {
      in.eval = s.apply(*in.eval);
    }
  }
  return in;
}

int
cmd_estimate(RunConfig cfg)
{
  if (cfg.estimator.empty()) {
    cfg.estimator = "all";
  }
  const auto ids = parse_estimators(cfg.estimator);
  const auto in = load_inputs(cfg);
  std::ostringstream out;
  out << config_header(cfg) << "estimator";
  for (int y = 0; y < in.train.num_classes(); ++y) {
    out << ",theta_" << in.train.label_names()[static_cast<std::size_t>(y)];
  }
  out << '\n';
  for (auto id : ids) {
    if (id == EstimatorId::oracle) {
      throw ValidationError("the oracle baseline needs a known prior and is only available in benchmark");
    }
    const auto est = estimate_prior(id, in.train, in.test, RngSeed{ cfg.seed }, estimator_config(cfg));
    out << estimator_name(id);
    for (int y = 0; y < est.theta.size(); ++y) {
      out << ',' << fmt(est.theta[y]);
    }
    out << '\n';
  }
  write_output(cfg.out, out.str());
  return 0;
}

int
cmd_classify(RunConfig cfg)
{
  const auto in = load_inputs(cfg);
  const int c = in.train.num_classes();
  SimplexVector theta_hat = SimplexVector::uniform(c);
  if (!cfg.theta.empty()) {
    theta_hat = parse_prior(cfg.theta, c, "--theta");
    cfg.estimator = "none";
  } else {
    if (cfg.estimator.empty()) {
      cfg.estimator = "pe-dr";
    }
    const auto ids = parse_estimators(cfg.estimator);
    if (ids.size() != 1 || ids.front() == EstimatorId::oracle) {
      throw ValidationError("classify needs exactly one estimator or an explicit --theta");
    }
    theta_hat = estimate_prior(ids.front(), in.train, in.test, RngSeed{ cfg.seed }, estimator_config(cfg)).theta;
  }

  const Eigen::VectorXd w = instance_weights(in.train, theta_hat);
  if (!(w.sum() > 0.0)) {
    throw ValidationError("the prior gives every training sample zero weight");
  }
  const RngSeed seed = RngSeed{ cfg.seed }.derive(4);
  WeightedClassifier clf;
  if (c == 2) {
    RlsFitOptions o;
    o.sigma = cfg.sigma;
    o.ridge = cfg.ridge;
    clf = WeightedClassifier{ fit_weighted_rls(in.train, w, seed, o).model };
  } else {
    KlrFitOptions o;
    o.sigma = cfg.sigma;
    o.ridge = cfg.ridge;
    clf = WeightedClassifier{ fit_klr(in.train, w, seed, o) };
  }

  std::ostringstream out;
  out << config_header(cfg) << "# theta_hat=";
  for (int y = 0; y < c; ++y) {
    out << (y ? "," : "") << fmt(theta_hat[y]);
  }
  out << "\nrow,predicted\n";
  const auto pred = clf.predict(in.test.features());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    out << i + 1 << ',' << in.train.label_names()[static_cast<std::size_t>(pred[i])] << '\n';
  }
  if (in.eval) {
    if (in.eval->num_classes() > c) {
      throw ValidationError("--eval has labels the training data lacks");
    }
    const double rate = misclassification_rate(clf.predict(in.eval->features()), in.eval->classes());
    out << "# misclassification_rate=" << fmt(rate) << '\n';
    std::cerr << "misclassification rate " << fmt(rate) << '\n';
  }
  write_output(cfg.out, out.str());
  return 0;
}

int
cmd_benchmark(RunConfig cfg)
{
  if (cfg.estimator.empty()) {
    cfg.estimator = "all";
  }
  TrialSpec spec;
  spec.estimators = parse_estimators(cfg.estimator);
  spec.repeats = cfg.repeats;
  spec.seed = RngSeed{ cfg.seed };
  spec.config = estimator_config(cfg);
  spec.record_timing = cfg.timing;
  spec.standardize = cfg.standardize;
  spec.jobs = cfg.jobs;
  if (cfg.train_per_class < 1) {
    throw ValidationError("--train-per-class must be positive");
  }
  if (cfg.jobs < 1) {
    throw ValidationError("--jobs must be positive");
  }

  std::unique_ptr<DataSource> source;
  if (!cfg.train.empty()) {
    auto pool = load_labeled(cfg.train);
    if (cfg.standardize) {
      pool = Standardizer::fit(pool.features()).apply(pool);
      spec.standardize = false;
    }
    source = std::make_unique<DataSource>(std::move(pool));
  } else if (cfg.generator == "gauss-1d") {
    source = std::make_unique<DataSource>(GaussianClassGenerator::gauss_1d());
  } else if (cfg.generator == "gauss-multid") {
    if (cfg.dim < 1) {
      throw ValidationError("--dim must be positive");
    }
    source = std::make_unique<DataSource>(GaussianClassGenerator::gauss_multid(cfg.dim));
  } else if (cfg.generator == "three-class") {
    source = std::make_unique<DataSource>(GaussianClassGenerator::three_class());
  } else {
    throw ValidationError("unknown generator '" + cfg.generator + "'");
  }
  const int c = source_classes(*source);
  spec.train_per_class.assign(static_cast<std::size_t>(c), cfg.train_per_class);
  if (cfg.test_size == 0) {
    cfg.test_size = c == 2 ? 50 : 100;
  }
  if (cfg.test_size < 1) {
    throw ValidationError("--test-size must be positive");
  }
  spec.test_total = cfg.test_size;
  if (cfg.theta_grid.empty()) {
    cfg.theta_grid = c == 2 ? "0.1,0.2,0.3,0.4,0.5" : (c == 3 ? "0.6,0.1,0.3" : "");
    if (cfg.theta_grid.empty()) {
      throw ValidationError("--theta-grid is required for more than three classes");
    }
  }
  spec.theta_star_grid = parse_grid(cfg.theta_grid, c);
  if (cfg.out.empty()) {
    cfg.out = "benchmark";
  }
  const ReportFormat format = cfg.format == "plot-data" ? ReportFormat::plot_data : ReportFormat::csv;
  if (cfg.format != "csv" && cfg.format != "plot-data") {
    throw ValidationError("--format must be csv or plot-data");
  }

  const auto result = run_sweep(*source, spec);
  const std::string header = config_header(cfg);
  std::ostringstream report;
  report << header;
  write_report(report, result, format);
  std::ostringstream log;
  log << header;
  write_trial_log(log, result);
  write_output(cfg.out + (format == ReportFormat::csv ? ".csv" : ".dat"), report.str());
  write_output(cfg.out + "_trials.csv", log.str());
  std::size_t failed = 0;
  for (const auto& r : result.trials) {
    failed += !r.theta_hat;
  }
  if (failed > 0) {
    std::cerr << failed << " of " << result.trials.size() << " estimates failed (recorded as missing)\n";
  }
  return 0;
}

} // namespace

int
main(int argc, char** argv)
{
  CLI::App app{ "Class-prior estimation under class-prior change" };
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key = value file; command-line flags override it");
  RunConfig cfg;

  app.add_option("--train", cfg.train, "labeled training CSV (benchmark: labeled pool)");
  app.add_option("--test", cfg.test, "unlabeled test CSV");
  app.add_option("--eval", cfg.eval, "labeled evaluation CSV for classify");
  app.add_option("--estimator", cfg.estimator, "em-klr|kl-kde|pe-kde|kl-dr|pe-dr|all (comma list allowed)");
  app.add_option("--theta", cfg.theta, "explicit prior for classify, e.g. 0.5,0.5");
  app.add_option("--theta-grid", cfg.theta_grid, "benchmark test priors: 0.1,0.2 (two classes) or a;b;c vectors");
  app.add_option("--generator", cfg.generator, "gauss-1d|gauss-multid|three-class")->capture_default_str();
  app.add_option("--dim", cfg.dim, "dimension for gauss-multid")->capture_default_str();
  app.add_option("--train-per-class", cfg.train_per_class, "training samples per class")->capture_default_str();
  app.add_option("--test-size", cfg.test_size, "test samples per trial (default 50, or 100 above two classes)");
  app.add_option("--repeats", cfg.repeats, "trials per theta*")->capture_default_str();
  app.add_option("--seed", cfg.seed, "master seed")->capture_default_str();
  app.add_option("--jobs", cfg.jobs, "benchmark worker threads")->capture_default_str();
  app.add_option("--out", cfg.out, "output file (benchmark: file prefix)");
  app.add_option("--format", cfg.format, "benchmark report format: csv|plot-data")->capture_default_str();
  app.add_option("--sigma", cfg.sigma, "fixed Gaussian width (default: cross-validated)");
  app.add_option("--lambda", cfg.lambda, "fixed PE-DR regularizer (default: cross-validated)");
  app.add_option("--ridge", cfg.ridge, "fixed classifier / KLR ridge (default: cross-validated)");
  app.add_flag("--standardize", cfg.standardize, "standardize features with training statistics");
  app.add_flag("--timing", cfg.timing, "record wall times (output is then not reproducible)");

  auto* estimate = app.add_subcommand("estimate", "estimate the test class prior")->fallthrough();
  auto* benchmark = app.add_subcommand("benchmark", "run the repeated-trial protocol")->fallthrough();
  auto* classify = app.add_subcommand("classify", "train a prior-weighted classifier")->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* active = estimate->parsed() ? estimate : benchmark->parsed() ? benchmark : classify;
  cfg.command = active->get_name();
  try {
    if (active == estimate) {
      return cmd_estimate(cfg);
    }
    if (active == benchmark) {
      return cmd_benchmark(cfg);
    }
    return cmd_classify(cfg);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (std::string(e.what()).rfind("missing required option", 0) == 0) {
      std::cerr << app.help();
    }
    return 2;
  }
}
