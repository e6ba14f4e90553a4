#pragma once

#include "error.hpp"
#include "simplex_vector.hpp"
#include <Eigen/Dense>
#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace priorshift {

using Rng = std::mt19937_64;

//! Seed for every random decision of a computation. Identical seeds and
//! inputs give bit-identical outputs.
struct RngSeed
{
  std::uint64_t value = 0;

  Rng engine() const { return Rng(value); }

  //! Child seed as a pure function of (parent, a, b).
  RngSeed derive(std::uint64_t a, std::uint64_t b = 0) const
  {
    auto mix = [](std::uint64_t z) {
      z += 0x9e3779b97f4a7c15ULL;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      return z ^ (z >> 31);
    };
    return RngSeed{ mix(mix(mix(value) ^ a) ^ (b * 0xd1b54a32d192ed03ULL)) };
  }
};

namespace detail {

inline void
require_finite_rows(const Eigen::MatrixXd& features)
{
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    if (!features.row(i).allFinite()) {
      throw ValidationError("non-finite feature value in row " +
                            std::to_string(i + 1));
    }
  }
}

} // namespace detail

//! Test-domain inputs without labels.
class UnlabeledDataset
{
public:
  UnlabeledDataset() = default;

  explicit UnlabeledDataset(Eigen::MatrixXd features)
    : features_(std::move(features))
  {
    if (features_.rows() < 1) {
      throw ValidationError("unlabeled dataset needs at least one row");
    }
    detail::require_finite_rows(features_);
  }

  const Eigen::MatrixXd& features() const noexcept { return features_; }
  Eigen::Index size() const noexcept { return features_.rows(); }
  Eigen::Index dim() const noexcept { return features_.cols(); }

  UnlabeledDataset subset(std::span<const Eigen::Index> rows) const
  {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), dim());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      out.row(static_cast<Eigen::Index>(k)) = features_.row(rows[k]);
    }
    return UnlabeledDataset(std::move(out));
  }

private:
  Eigen::MatrixXd features_;
};

//! Labeled points with zero-based class indices 0..c-1. Files and reports
//! use the one-based labels 1..c.
//!
//! Empty classes are representable (a test draw at prior (1, 0) has one);
//! estimators call `require_all_classes()` before fitting.
class LabeledDataset
{
public:
  LabeledDataset() = default;

  LabeledDataset(Eigen::MatrixXd features,
                 std::vector<int> classes,
                 int num_classes,
                 std::vector<std::string> label_names = {})
    : features_(std::move(features))
    , classes_(std::move(classes))
    , num_classes_(num_classes)
    , label_names_(std::move(label_names))
  {
    if (static_cast<Eigen::Index>(classes_.size()) != features_.rows()) {
      throw ValidationError("label count does not match feature rows");
    }
    if (num_classes_ < 1) {
      throw ValidationError("need at least one class");
    }
    for (std::size_t i = 0; i < classes_.size(); ++i) {
      if (classes_[i] < 0 || classes_[i] >= num_classes_) {
        throw ValidationError("class label out of range in row " +
                              std::to_string(i + 1));
      }
    }
    detail::require_finite_rows(features_);
    if (label_names_.empty()) {
      for (int y = 0; y < num_classes_; ++y) {
        label_names_.push_back(std::to_string(y + 1));
      }
    }
    if (static_cast<int>(label_names_.size()) != num_classes_) {
      throw ValidationError("label name table does not match class count");
    }
    counts_.assign(static_cast<std::size_t>(num_classes_), 0);
    for (int y : classes_) {
      ++counts_[static_cast<std::size_t>(y)];
    }
  }

  const Eigen::MatrixXd& features() const noexcept { return features_; }
  const std::vector<int>& classes() const noexcept { return classes_; }
  int num_classes() const noexcept { return num_classes_; }
  Eigen::Index size() const noexcept { return features_.rows(); }
  Eigen::Index dim() const noexcept { return features_.cols(); }
  const std::vector<int>& class_counts() const noexcept { return counts_; }
  int class_count(int y) const { return counts_.at(static_cast<std::size_t>(y)); }
  const std::vector<std::string>& label_names() const noexcept { return label_names_; }

  void require_all_classes() const
  {
    for (int y = 0; y < num_classes_; ++y) {
      if (counts_[static_cast<std::size_t>(y)] < 1) {
        throw ValidationError("class " + label_names_[static_cast<std::size_t>(y)] +
                              " has no samples");
      }
    }
  }

  //! Empirical class proportions n_y / n.
  SimplexVector class_proportions() const
  {
    if (size() == 0) {
      throw ValidationError("empty dataset has no class proportions");
    }
    Eigen::VectorXd p(num_classes_);
    for (int y = 0; y < num_classes_; ++y) {
      p(y) = static_cast<double>(counts_[static_cast<std::size_t>(y)]);
    }
    return SimplexVector::renormalized(std::move(p));
  }

  std::vector<Eigen::Index> rows_of_class(int y) const
  {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < classes_.size(); ++i) {
      if (classes_[i] == y) {
        rows.push_back(static_cast<Eigen::Index>(i));
      }
    }
    return rows;
  }

  LabeledDataset subset(std::span<const Eigen::Index> rows) const
  {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), dim());
    std::vector<int> cls(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      out.row(static_cast<Eigen::Index>(k)) = features_.row(rows[k]);
      cls[k] = classes_[static_cast<std::size_t>(rows[k])];
    }
    return LabeledDataset(std::move(out), std::move(cls), num_classes_, label_names_);
  }

  //! Drops the labels.
  UnlabeledDataset unlabeled() const { return UnlabeledDataset(features_); }

private:
  Eigen::MatrixXd features_;
  std::vector<int> classes_;
  int num_classes_ = 0;
  std::vector<std::string> label_names_;
  std::vector<int> counts_;
};

// ---------------------------------------------------------------------------
// CSV ingestion

namespace detail {

inline std::string
trim(const std::string& s)
{
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) {
    return {};
  }
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string>
split_csv_line(const std::string& line)
{
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) {
    fields.push_back(trim(field));
  }
  if (!line.empty() && line.back() == ',') {
    fields.emplace_back();
  }
  return fields;
}

inline std::optional<double>
parse_number(const std::string& s)
{
  if (s.empty()) {
    return std::nullopt;
  }
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) {
    return std::nullopt;
  }
  return v;
}

inline std::optional<long>
parse_positive_integer(const std::string& s)
{
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    return std::nullopt;
  }
  const long v = std::strtol(s.c_str(), nullptr, 10);
  if (v < 1) {
    return std::nullopt;
  }
  return v;
}

struct CsvTable
{
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
  bool had_header = false;
};

inline CsvTable
read_csv_table(std::istream& in, bool last_column_is_label)
{
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  std::size_t arity = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    auto fields = split_csv_line(line);
    if (table.rows.empty() && !table.had_header) {
      const std::size_t checked =
        last_column_is_label && fields.size() > 1 ? fields.size() - 1 : fields.size();
      bool numeric = true;
      for (std::size_t k = 0; k < checked; ++k) {
        numeric = numeric && parse_number(fields[k]).has_value();
      }
      if (!numeric) {
        table.had_header = true;
        arity = fields.size();
        continue;
      }
    }
    if (arity == 0) {
      arity = fields.size();
    }
    if (fields.size() != arity) {
      throw ParseError("ragged row at line " + std::to_string(line_no) + ": expected " +
                       std::to_string(arity) + " fields, found " +
                       std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(line_no);
  }
  return table;
}

inline Eigen::MatrixXd
parse_feature_block(const CsvTable& table, std::size_t num_cols)
{
  Eigen::MatrixXd x(static_cast<Eigen::Index>(table.rows.size()),
                    static_cast<Eigen::Index>(num_cols));
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    for (std::size_t k = 0; k < num_cols; ++k) {
      const auto v = parse_number(table.rows[i][k]);
      if (!v) {
        throw ParseError("non-numeric value '" + table.rows[i][k] + "' at line " +
                         std::to_string(table.line_numbers[i]));
      }
      if (!std::isfinite(*v)) {
        throw ValidationError("non-finite value at line " +
                              std::to_string(table.line_numbers[i]));
      }
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = *v;
    }
  }
  return x;
}

} // namespace detail

//! Labeled CSV, label in the last column. Labels that are all integers >= 1
//! are used as class numbers directly (c = max label); any other label set is
//! remapped to 1..c in order of first appearance.
inline LabeledDataset
read_labeled_csv(std::istream& in)
{
  const auto table = detail::read_csv_table(in, true);
  if (table.rows.empty()) {
    throw ParseError("labeled file has no data rows");
  }
  const std::size_t arity = table.rows.front().size();
  if (arity < 2) {
    throw ParseError("labeled file needs at least one feature column and a label");
  }
  Eigen::MatrixXd x = detail::parse_feature_block(table, arity - 1);

  bool integer_labels = true;
  long max_label = 0;
  for (const auto& row : table.rows) {
    const auto v = detail::parse_positive_integer(row.back());
    integer_labels = integer_labels && v.has_value();
    if (v) {
      max_label = std::max(max_label, *v);
    }
  }

  std::vector<int> classes(table.rows.size());
  std::vector<std::string> names;
  if (integer_labels) {
    for (long y = 1; y <= max_label; ++y) {
      names.push_back(std::to_string(y));
    }
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      classes[i] = static_cast<int>(*detail::parse_positive_integer(table.rows[i].back()) - 1);
    }
  } else {
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto& label = table.rows[i].back();
      auto [it, inserted] = index.try_emplace(label, static_cast<int>(names.size()));
      if (inserted) {
        names.push_back(label);
      }
      classes[i] = it->second;
    }
  }

  const int num_classes = static_cast<int>(names.size());
  LabeledDataset data(std::move(x), std::move(classes), num_classes, std::move(names));
  data.require_all_classes();
  return data;
}

inline UnlabeledDataset
read_unlabeled_csv(std::istream& in)
{
  const auto table = detail::read_csv_table(in, false);
  if (table.rows.empty()) {
    throw ParseError("unlabeled file has no data rows");
  }
  return UnlabeledDataset(detail::parse_feature_block(table, table.rows.front().size()));
}

namespace detail {

inline std::ifstream
open_input(const std::string& path)
{
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open '" + path + "'");
  }
  return in;
}

inline std::string
format_double(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace detail

inline LabeledDataset
load_labeled(const std::string& path)
{
  auto in = detail::open_input(path);
  return read_labeled_csv(in);
}

inline UnlabeledDataset
load_unlabeled(const std::string& path)
{
  auto in = detail::open_input(path);
  return read_unlabeled_csv(in);
}

//! Writes features at round-trip precision followed by the label.
inline void
write_labeled_csv(std::ostream& out, const LabeledDataset& data)
{
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index k = 0; k < data.dim(); ++k) {
      out << detail::format_double(data.features()(i, k)) << ',';
    }
    out << data.label_names()[static_cast<std::size_t>(data.classes()[static_cast<std::size_t>(i)])]
        << '\n';
  }
}

inline void
write_unlabeled_csv(std::ostream& out, const UnlabeledDataset& data)
{
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index k = 0; k < data.dim(); ++k) {
      out << (k ? "," : "") << detail::format_double(data.features()(i, k));
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Sampling

//! Row indices holding exactly per_class_counts[y] rows of each class y,
//! each class sampled uniformly without replacement.
inline std::vector<Eigen::Index>
stratified_draw_indices(const LabeledDataset& data,
                        std::span<const int> per_class_counts,
                        RngSeed seed)
{
  if (static_cast<int>(per_class_counts.size()) != data.num_classes()) {
    throw ValidationError("per-class count vector length must equal class count");
  }
  Rng rng = seed.engine();
  std::vector<Eigen::Index> out;
  for (int y = 0; y < data.num_classes(); ++y) {
    const int want = per_class_counts[static_cast<std::size_t>(y)];
    auto pool = data.rows_of_class(y);
    if (want < 0 || want > static_cast<int>(pool.size())) {
      throw ValidationError("requested " + std::to_string(want) + " samples of class " +
                            data.label_names()[static_cast<std::size_t>(y)] + " but only " +
                            std::to_string(pool.size()) + " available");
    }
    for (int k = 0; k < want; ++k) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(k),
                                                      pool.size() - 1);
      std::swap(pool[static_cast<std::size_t>(k)], pool[pick(rng)]);
      out.push_back(pool[static_cast<std::size_t>(k)]);
    }
  }
  return out;
}

inline LabeledDataset
stratified_draw(const LabeledDataset& data, std::span<const int> per_class_counts, RngSeed seed)
{
  const auto rows = stratified_draw_indices(data, per_class_counts, seed);
  return data.subset(rows);
}

//! Samples each row's class i.i.d. from `prior`, then a point of that class
//! uniformly without replacement. Rows listed in `excluded` are never drawn.
inline std::vector<Eigen::Index>
prior_draw_indices(const LabeledDataset& data,
                   Eigen::Index total,
                   const SimplexVector& prior,
                   RngSeed seed,
                   std::span<const Eigen::Index> excluded = {})
{
  if (prior.size() != data.num_classes()) {
    throw ValidationError("prior length must equal class count");
  }
  std::vector<char> blocked(static_cast<std::size_t>(data.size()), 0);
  for (auto r : excluded) {
    blocked.at(static_cast<std::size_t>(r)) = 1;
  }
  std::vector<std::vector<Eigen::Index>> pools(static_cast<std::size_t>(data.num_classes()));
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    if (!blocked[static_cast<std::size_t>(i)]) {
      pools[static_cast<std::size_t>(data.classes()[static_cast<std::size_t>(i)])].push_back(i);
    }
  }
  std::vector<std::size_t> used(pools.size(), 0);

  Rng rng = seed.engine();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::Index> out;
  out.reserve(static_cast<std::size_t>(total));
  for (Eigen::Index k = 0; k < total; ++k) {
    const double u = unit(rng);
    int y = 0;
    double cumulative = prior[0];
    while (y + 1 < prior.size() && (u >= cumulative || prior[y] == 0.0)) {
      ++y;
      cumulative += prior[y];
    }
    while (prior[y] == 0.0 && y > 0) {
      --y;
    }
    auto& pool = pools[static_cast<std::size_t>(y)];
    auto& next = used[static_cast<std::size_t>(y)];
    if (next >= pool.size()) {
      throw ValidationError("class " + data.label_names()[static_cast<std::size_t>(y)] +
                            " exhausted after " + std::to_string(next) + " draws");
    }
    std::uniform_int_distribution<std::size_t> pick(next, pool.size() - 1);
    std::swap(pool[next], pool[pick(rng)]);
    out.push_back(pool[next]);
    ++next;
  }
  return out;
}

inline LabeledDataset
prior_draw(const LabeledDataset& data, Eigen::Index total, const SimplexVector& prior, RngSeed seed)
{
  const auto rows = prior_draw_indices(data, total, prior, seed);
  return data.subset(rows);
}

// ---------------------------------------------------------------------------
// Optional standardization (off by default everywhere)

//! Per-dimension affine map fitted on training features.
struct Standardizer
{
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& x)
  {
    Standardizer s;
    s.mean = x.colwise().mean();
    s.scale.resize(x.cols());
    for (Eigen::Index k = 0; k < x.cols(); ++k) {
      const double var =
        x.rows() > 1 ? (x.col(k).array() - s.mean(k)).square().sum() / static_cast<double>(x.rows() - 1)
                     : 0.0;
      s.scale(k) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const
  {
    return (x.rowwise() - mean).array().rowwise() / scale.array();
  }

  LabeledDataset apply(const LabeledDataset& d) const
  {
    return LabeledDataset(apply(d.features()), d.classes(), d.num_classes(), d.label_names());
  }

  UnlabeledDataset apply(const UnlabeledDataset& d) const
  {
    return UnlabeledDataset(apply(d.features()));
  }
};

} // namespace priorshift
