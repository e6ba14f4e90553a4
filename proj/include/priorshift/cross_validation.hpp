#pragma once

#include "dataset.hpp"
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace priorshift {

//! k-fold split of a labeled training set (stratified by class) and an
//! unlabeled test set. Entry i is the fold that holds out row i.
struct FoldAssignment
{
  int num_folds = 0;
  std::vector<int> train_fold;
  std::vector<int> test_fold;

  std::vector<Eigen::Index> rows_in(const std::vector<int>& fold_of, int k) const
  {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] != k) {
        rows.push_back(static_cast<Eigen::Index>(i));
      }
    }
    return rows;
  }

  std::vector<Eigen::Index> rows_out(const std::vector<int>& fold_of, int k) const
  {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < fold_of.size(); ++i) {
      if (fold_of[i] == k) {
        rows.push_back(static_cast<Eigen::Index>(i));
      }
    }
    return rows;
  }
};

namespace detail {

inline void
deal_round_robin(std::vector<int>& fold_of, std::vector<Eigen::Index> rows, int k, Rng& rng)
{
  for (std::size_t j = 0; j + 1 < rows.size(); ++j) {
    std::uniform_int_distribution<std::size_t> pick(j, rows.size() - 1);
    std::swap(rows[j], rows[pick(rng)]);
  }
  for (std::size_t j = 0; j < rows.size(); ++j) {
    fold_of[static_cast<std::size_t>(rows[j])] = static_cast<int>(j % static_cast<std::size_t>(k));
  }
}

} // namespace detail

//! Shuffles each class (and the test set) with `seed` and deals rows to
//! folds round-robin.
inline FoldAssignment
make_folds(const std::vector<int>& train_classes, int num_classes, Eigen::Index test_size, int k,
           RngSeed seed)
{
  if (k < 2) {
    throw ValidationError("cross-validation needs at least 2 folds");
  }
  FoldAssignment f;
  f.num_folds = k;
  f.train_fold.assign(train_classes.size(), 0);
  f.test_fold.assign(static_cast<std::size_t>(test_size), 0);
  Rng rng = seed.engine();
  for (int y = 0; y < num_classes; ++y) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < train_classes.size(); ++i) {
      if (train_classes[i] == y) {
        rows.push_back(static_cast<Eigen::Index>(i));
      }
    }
    detail::deal_round_robin(f.train_fold, std::move(rows), k, rng);
  }
  std::vector<Eigen::Index> test_rows(static_cast<std::size_t>(test_size));
  std::iota(test_rows.begin(), test_rows.end(), Eigen::Index{ 0 });
  detail::deal_round_robin(f.test_fold, std::move(test_rows), k, rng);
  return f;
}

//! Folds over a training set only (for supervised model selection).
inline FoldAssignment
make_folds(const LabeledDataset& train, int k, RngSeed seed)
{
  return make_folds(train.classes(), train.num_classes(), 0, k, seed);
}

//! Running mean of a CV score over the folds that produced one.
struct CvCell
{
  double value = 0.0;
  double total = 0.0;
  int folds = 0;

  void add(double score)
  {
    total += score;
    ++folds;
    value = total / folds;
  }
};

//! Index of the best (smallest-score) cell of a (first x second) grid.
//! Exact ties go to the larger parameter values; the grids are assumed to be
//! given in any order, so ties compare the parameter values themselves.
inline std::pair<std::size_t, std::size_t>
select_min_cell(const std::vector<std::vector<CvCell>>& cells,
                const std::vector<double>& first,
                const std::vector<double>& second)
{
  bool found = false;
  std::size_t bi = 0;
  std::size_t bj = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t j = 0; j < cells[i].size(); ++j) {
      const auto& cell = cells[i][j];
      if (cell.folds == 0 || !std::isfinite(cell.value)) {
        continue;
      }
      if (!found) {
        found = true;
        bi = i;
        bj = j;
        continue;
      }
      const double best = cells[bi][bj].value;
      const bool better =
        cell.value < best ||
        (cell.value == best &&
         (first[i] > first[bi] || (first[i] == first[bi] && second[j] > second[bj])));
      if (better) {
        bi = i;
        bj = j;
      }
    }
  }
  if (!found) {
    throw ValidationError("cross-validation: every fold was skipped");
  }
  return { bi, bj };
}

} // namespace priorshift
