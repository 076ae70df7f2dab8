#pragma once

// Projected block coordinate descent on the surrogate
//
//     min_D 1/2 Tr(D^T D C) - Tr(D^T B)   s.t.  |d_j| <= 1 for every atom,
//
// restricted to the rows selected by a mask (the other rows stay frozen).
// With the elastic-net atom norm |.| being row-separable, the frozen rows
// turn the unit-ball constraint into a ball of radius n_j + |P d_j| on the
// selected rows, where n_j = 1 - |d_j| is the slack kept per atom.

#include "somf/core.hpp"
#include "somf/proximal.hpp"
#include "somf/rng.hpp"
#include "somf/subsampling.hpp"

#include <algorithm>
#include <optional>
#include <span>
#include <vector>

namespace somf {

/// Elastic-net atom norm (1 - mu)|d|_1 + mu/2 |d|_2^2.
inline double atom_norm(const Eigen::Ref<const Vector>& d, double mu) { return elastic_net_value(d, mu); }

struct DictionaryState {
  Matrix D;                    // p x k
  Vector slack;                // n_j = 1 - |d_j|, in [0, 1]
  std::optional<Matrix> gram;  // D^T D, maintained online when present
  double mu = 1.0;
  bool positive_dict = false;

  Index p() const { return D.rows(); }
  Index k() const { return D.cols(); }

  void refresh_slack() {
    slack.resize(k());
    for (Index j = 0; j < k(); ++j) slack[j] = std::clamp(1.0 - atom_norm(D.col(j), mu), 0.0, 1.0);
  }

  void refresh_gram() {
    Matrix G;
    G.noalias() = D.transpose() * D;
    gram = std::move(G);
  }

  /// Largest amount by which an atom exceeds the unit ball (0 when feasible).
  double max_violation() const {
    double worst = 0.0;
    for (Index j = 0; j < k(); ++j) worst = std::max(worst, atom_norm(D.col(j), mu) - 1.0);
    return worst;
  }
};

struct DictUpdateOptions {
  double min_curvature = 1e-12;  // atoms with C[j,j] below this are left unchanged
};

/// One pass of projected BCD over the atoms in `atom_order`, touching only the
/// rows selected by `mask`. `B` is the full p x k statistic; only its selected
/// rows are read. Returns the atoms skipped for lack of curvature.
inline std::vector<Index> partial_dictionary_update(DictionaryState& state, const Mask& mask,
                                                    const Eigen::Ref<const Matrix>& C,
                                                    const Eigen::Ref<const Matrix>& B,
                                                    std::span<const Index> atom_order,
                                                    FlopCounter* flops = nullptr,
                                                    const DictUpdateOptions& opts = {}) {
  const Index p = state.p();
  const Index k = state.k();
  require_dims(mask.p() == p, "partial_dictionary_update: mask/D row count mismatch");
  require_dims(C.rows() == k && C.cols() == k, "partial_dictionary_update: C must be k x k");
  require_dims(B.rows() == p && B.cols() == k, "partial_dictionary_update: B must be p x k");
  require_dims(state.slack.size() == k, "partial_dictionary_update: slack has wrong length");
  require_dims(static_cast<Index>(atom_order.size()) == k, "partial_dictionary_update: atom order must cover k atoms");
  for (Index j : atom_order) require_dims(j >= 0 && j < k, "partial_dictionary_update: atom index out of range");

  std::vector<Index> skipped;
  if (mask.empty()) return skipped;

  const double q = double(mask.q());
  const bool full = mask.covers_all();
  Matrix Dr = full ? Matrix(state.D) : gather_rows(state.D, mask);
  const Matrix Br = full ? Matrix(B) : gather_rows(B, mask);

  Matrix gram_before;
  if (state.gram) {
    gram_before.noalias() = Dr.transpose() * Dr;
    count_flops(flops, FlopCounter::Kind::GramUpdate, 2.0 * q * double(k) * double(k));
  }

  Vector u(Dr.rows());
  for (Index j : atom_order) {
    const double cjj = C(j, j);
    if (!(cjj >= opts.min_curvature)) {
      skipped.push_back(j);
      continue;
    }
    const double radius = std::max(0.0, state.slack[j] + atom_norm(Dr.col(j), state.mu));
    u.noalias() = Br.col(j) - Dr * C.col(j);
    u = Dr.col(j) + u / cjj;
    Dr.col(j) = enet_projection(u, radius, state.mu, state.positive_dict, flops);
    state.slack[j] = std::clamp(radius - atom_norm(Dr.col(j), state.mu), 0.0, 1.0);
    count_flops(flops, FlopCounter::Kind::DictionaryUpdate, 2.0 * q * double(k) + 8.0 * q);
  }

  if (full) {
    state.D = Dr;
  } else {
    scatter_rows(state.D, mask, Dr);
  }

  if (state.gram) {
    Matrix gram_after;
    gram_after.noalias() = Dr.transpose() * Dr;
    *state.gram += gram_after - gram_before;
    count_flops(flops, FlopCounter::Kind::GramUpdate, 2.0 * q * double(k) * double(k) + 2.0 * double(k) * double(k));
  }
  return skipped;
}

/// The unsubsampled update: a partial update with every row selected.
inline std::vector<Index> full_dictionary_update(DictionaryState& state, const Eigen::Ref<const Matrix>& C,
                                                 const Eigen::Ref<const Matrix>& B, std::span<const Index> atom_order,
                                                 FlopCounter* flops = nullptr, const DictUpdateOptions& opts = {}) {
  return partial_dictionary_update(state, Mask::full(state.p()), C, B, atom_order, flops, opts);
}

/// k distinct data columns drawn uniformly, clipped to the nonnegative orthant
/// when `positive_dict`, and projected onto the unit elastic-net ball.
inline DictionaryState init_dictionary(const Eigen::Ref<const Matrix>& X, Index k, CounterRng& rng, double mu,
                                       bool positive_dict, bool with_gram = false) {
  const Index n = X.cols();
  if (k < 1) throw DomainError("init_dictionary: k must be >= 1");
  if (k > n) throw DomainError("init_dictionary: k exceeds the number of samples");

  std::vector<Index> pool(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  for (Index j = 0; j < k; ++j) {  // partial Fisher-Yates
    const auto pick = static_cast<std::size_t>(j) + static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n - j)));
    std::swap(pool[static_cast<std::size_t>(j)], pool[pick]);
  }

  DictionaryState state;
  state.mu = mu;
  state.positive_dict = positive_dict;
  state.D.resize(X.rows(), k);
  for (Index j = 0; j < k; ++j) {
    state.D.col(j) = enet_projection(X.col(pool[static_cast<std::size_t>(j)]), 1.0, mu, positive_dict);
  }
  state.refresh_slack();
  if (with_gram) state.refresh_gram();
  return state;
}

}  // namespace somf
