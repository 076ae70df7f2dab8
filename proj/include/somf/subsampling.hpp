#pragma once

// Random row masks and the row gather/scatter primitives built on them.
//
// A mask stands for the random diagonal matrix M whose entries are r with
// probability 1/r and 0 otherwise, so that E[M x] = x. It is never
// materialized: products with M are computed on the gathered rows and scaled
// by r by the caller.

#include "somf/core.hpp"
#include "somf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace somf {

class Mask {
 public:
  /// `selected` must be strictly increasing and within [0, p).
  Mask(std::vector<Index> selected, double reduction, Index p)
      : selected_(std::move(selected)), reduction_(reduction), p_(p) {
    if (p_ < 0) throw DimensionError("Mask: negative row count");
    if (!(reduction_ >= 1.0) || !std::isfinite(reduction_)) throw DomainError("Mask: reduction must be >= 1");
    for (std::size_t i = 0; i < selected_.size(); ++i) {
      const Index row = selected_[i];
      if (row < 0 || row >= p_) throw DimensionError("Mask: selected row out of range");
      if (i > 0 && selected_[i - 1] >= row) throw DimensionError("Mask: rows must be strictly increasing");
    }
  }

  /// Every row selected, weight one: the identity mask of the unsubsampled algorithm.
  static Mask full(Index p) {
    std::vector<Index> all(static_cast<std::size_t>(p));
    for (Index i = 0; i < p; ++i) all[static_cast<std::size_t>(i)] = i;
    return Mask(std::move(all), 1.0, p);
  }

  const std::vector<Index>& selected() const { return selected_; }
  double reduction() const { return reduction_; }
  Index p() const { return p_; }
  Index q() const { return static_cast<Index>(selected_.size()); }
  bool covers_all() const { return q() == p_; }
  bool empty() const { return selected_.empty(); }

  /// Rows not selected, increasing.
  std::vector<Index> complement() const {
    std::vector<Index> rest;
    rest.reserve(static_cast<std::size_t>(p_ - q()));
    std::size_t cursor = 0;
    for (Index i = 0; i < p_; ++i) {
      if (cursor < selected_.size() && selected_[cursor] == i) {
        ++cursor;
      } else {
        rest.push_back(i);
      }
    }
    return rest;
  }

 private:
  std::vector<Index> selected_;
  double reduction_;
  Index p_;
};

/// Each of the p rows is kept independently with probability 1/r.
inline Mask draw_mask(Index p, double reduction, CounterRng& rng) {
  if (p < 1) throw DimensionError("draw_mask: p must be >= 1");
  if (!(reduction >= 1.0) || !std::isfinite(reduction)) throw DomainError("draw_mask: reduction must be >= 1");
  const double keep = 1.0 / reduction;
  std::vector<Index> selected;
  selected.reserve(static_cast<std::size_t>(std::ceil(double(p) * keep * 1.1)) + 8);
  for (Index i = 0; i < p; ++i) {
    if (rng.uniform() < keep) selected.push_back(i);
  }
  return Mask(std::move(selected), reduction, p);
}

inline Matrix gather_rows(const Eigen::Ref<const Matrix>& Y, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), Y.cols());
  for (Index c = 0; c < Y.cols(); ++c) {
    for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Index>(i), c) = Y(rows[i], c);
  }
  return out;
}

/// Rows of `Y` at `mask.selected()`, in index order, unscaled.
inline Matrix gather_rows(const Eigen::Ref<const Matrix>& Y, const Mask& mask) {
  require_dims(Y.rows() == mask.p(), "gather_rows: mask built for " + std::to_string(mask.p()) +
                                          " rows, matrix has " + std::to_string(Y.rows()));
  return gather_rows(Y, std::span<const Index>(mask.selected()));
}

inline void scatter_rows(Eigen::Ref<Matrix> target, std::span<const Index> rows,
                         const Eigen::Ref<const Matrix>& source) {
  require_dims(source.rows() == static_cast<Index>(rows.size()), "scatter_rows: source row count mismatch");
  require_dims(source.cols() == target.cols(), "scatter_rows: column count mismatch");
  for (Index c = 0; c < target.cols(); ++c) {
    for (std::size_t i = 0; i < rows.size(); ++i) target(rows[i], c) = source(static_cast<Index>(i), c);
  }
}

/// Overwrites the selected rows of `target` with the rows of `source`; all
/// other rows are left untouched.
inline void scatter_rows(Eigen::Ref<Matrix> target, const Mask& mask, const Eigen::Ref<const Matrix>& source) {
  require_dims(target.rows() == mask.p(), "scatter_rows: mask/target row count mismatch");
  scatter_rows(target, std::span<const Index>(mask.selected()), source);
}

}  // namespace somf
