#pragma once

// Aggregated surrogate of the empirical risk. Up to an additive constant the
// surrogate is the quadratic
//
//     g(D) = 1/2 Tr(D^T D C) - Tr(D^T B) + const
//
// with B (p x k) and C (k x k) running weighted means of x a^T and a a^T.

#include "somf/core.hpp"
#include "somf/proximal.hpp"
#include "somf/subsampling.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace somf {

/// Surrogate weight t^-u of iteration t; the first weight is one.
inline double weight(long t, double u) {
  if (t < 1) throw DomainError("weight: iteration must be >= 1");
  return std::pow(static_cast<double>(t), -u);
}

struct SurrogateStats {
  Matrix B;                 // p x k
  Matrix C;                 // k x k, symmetric PSD
  long t = 0;               // number of aggregated iterations
  double const_term = 0.0;  // running mean of 1/2 |x|^2 + lambda Omega(a)

  SurrogateStats() = default;
  SurrogateStats(Index p, Index k) : B(Matrix::Zero(p, k)), C(Matrix::Zero(k, k)) {}

  Index p() const { return B.rows(); }
  Index k() const { return C.rows(); }
};

/// C <- (1 - w) C + w mean_b(a_b a_b^T). Only the upper triangle is computed
/// and mirrored, so C stays exactly symmetric.
inline void update_C(SurrogateStats& stats, const Eigen::Ref<const Matrix>& codes, double w,
                     FlopCounter* flops = nullptr) {
  const Index k = stats.k();
  require_dims(codes.rows() == k, "update_C: codes must have k rows");
  const Index eta = codes.cols();
  if (eta == 0) return;
  const double scale = w / double(eta);
  for (Index j = 0; j < k; ++j) {
    for (Index l = j; l < k; ++l) {
      double s = 0.0;
      for (Index b = 0; b < eta; ++b) s += codes(j, b) * codes(l, b);
      const double next = (1.0 - w) * stats.C(j, l) + scale * s;
      stats.C(j, l) = next;
      stats.C(l, j) = next;
    }
  }
  count_flops(flops, FlopCounter::Kind::SurrogateSelected, double(k) * double(k + 1) * (double(eta) + 2.0));
}

namespace detail {

// B[rows] <- (1 - w) B[rows] + w mean_b(x_b[rows] a_b^T). Each entry is
// accumulated over the batch in a fixed order so the result for a row does
// not depend on which other rows are updated in the same call.
inline void update_B_rows(Matrix& B, std::span<const Index> rows, const Eigen::Ref<const Matrix>& x_batch,
                          const Eigen::Ref<const Matrix>& codes, double w, FlopCounter* flops,
                          FlopCounter::Kind kind) {
  const Index k = B.cols();
  const Index eta = x_batch.cols();
  require_dims(x_batch.rows() == B.rows(), "update_B: x batch must have p rows");
  require_dims(codes.rows() == k && codes.cols() == eta, "update_B: codes must be k x batch");
  if (rows.empty() || eta == 0) return;
  const double scale = w / double(eta);
  const auto q = static_cast<Index>(rows.size());

  Matrix acc = Matrix::Zero(q, k);
  for (Index j = 0; j < k; ++j) {
    for (Index b = 0; b < eta; ++b) {
      const double a = codes(j, b);
      if (a == 0.0) continue;
      for (Index i = 0; i < q; ++i) acc(i, j) += x_batch(rows[static_cast<std::size_t>(i)], b) * a;
    }
  }
  for (Index j = 0; j < k; ++j) {
    for (Index i = 0; i < q; ++i) {
      const Index row = rows[static_cast<std::size_t>(i)];
      B(row, j) = (1.0 - w) * B(row, j) + scale * acc(i, j);
    }
  }
  count_flops(flops, kind, double(q) * double(k) * (2.0 * double(eta) + 3.0));
}

}  // namespace detail

/// Update of the rows of B selected by the mask.
inline void update_B_selected(SurrogateStats& stats, const Mask& mask, const Eigen::Ref<const Matrix>& x_batch,
                              const Eigen::Ref<const Matrix>& codes, double w, FlopCounter* flops = nullptr) {
  require_dims(mask.p() == stats.p(), "update_B_selected: mask/B row count mismatch");
  detail::update_B_rows(stats.B, mask.selected(), x_batch, codes, w, flops, FlopCounter::Kind::SurrogateSelected);
}

/// Update of the rows of B not selected by the mask. Writes a row set disjoint
/// from `update_B_selected` and from what the partial dictionary update reads,
/// so it may run concurrently with either.
inline void update_B_complement(SurrogateStats& stats, const Mask& mask, const Eigen::Ref<const Matrix>& x_batch,
                                const Eigen::Ref<const Matrix>& codes, double w, FlopCounter* flops = nullptr) {
  require_dims(mask.p() == stats.p(), "update_B_complement: mask/B row count mismatch");
  const auto rest = mask.complement();
  detail::update_B_rows(stats.B, rest, x_batch, codes, w, flops, FlopCounter::Kind::SurrogateComplement);
}

/// The unmasked rule, applied to every row.
inline void update_B_full(SurrogateStats& stats, const Eigen::Ref<const Matrix>& x_batch,
                          const Eigen::Ref<const Matrix>& codes, double w, FlopCounter* flops = nullptr) {
  update_B_selected(stats, Mask::full(stats.p()), x_batch, codes, w, flops);
}

/// const <- (1 - w) const + w mean_b(1/2 |x_b|^2 + lambda Omega(a_b)).
inline void update_constant(SurrogateStats& stats, std::span<const double> half_sq_norms,
                            const Eigen::Ref<const Matrix>& codes, const ElasticNetParams& params, double w) {
  require_dims(static_cast<Index>(half_sq_norms.size()) == codes.cols(), "update_constant: batch size mismatch");
  if (codes.cols() == 0) return;
  double mean = 0.0;
  for (Index b = 0; b < codes.cols(); ++b) {
    mean += half_sq_norms[static_cast<std::size_t>(b)] + params.lambda * elastic_net_value(codes.col(b), params.nu);
  }
  mean /= double(codes.cols());
  stats.const_term = (1.0 - w) * stats.const_term + w * mean;
}

/// 1/2 Tr(D^T D C) - Tr(D^T B) + const_term.
inline double surrogate_value(const SurrogateStats& stats, const Eigen::Ref<const Matrix>& D, double const_term) {
  require_dims(D.rows() == stats.p() && D.cols() == stats.k(), "surrogate_value: D has the wrong shape");
  Matrix gram;
  gram.noalias() = D.transpose() * D;
  return 0.5 * gram.cwiseProduct(stats.C).sum() - D.cwiseProduct(stats.B).sum() + const_term;
}

/// Surrogate value including the tracked constant.
inline double surrogate_value(const SurrogateStats& stats, const Eigen::Ref<const Matrix>& D) {
  return surrogate_value(stats, D, stats.const_term);
}

/// Mean over the columns of X of min_a 1/2 |x - D a|^2 + lambda Omega(a),
/// each regression solved to `opts` precision.
inline double empirical_objective(const Eigen::Ref<const Matrix>& X, const Eigen::Ref<const Matrix>& D,
                                  const ElasticNetParams& params,
                                  const CodeSolverOptions& opts = CodeSolverOptions::oracle_grade(),
                                  Matrix* codes_out = nullptr) {
  require_dims(X.rows() == D.rows(), "empirical_objective: X and D have different row counts");
  const Index m = X.cols();
  if (m == 0) return 0.0;
  Matrix G;
  G.noalias() = D.transpose() * D;
  Matrix B;
  B.noalias() = D.transpose() * X;
  if (codes_out != nullptr) codes_out->resize(D.cols(), m);
  double total = 0.0;
  for (Index i = 0; i < m; ++i) {
    const Vector alpha = solve_code(G, B.col(i), params, opts);
    // 1/2 |x|^2 + (1/2 a^T G a - a^T beta + lambda Omega(a))
    total += 0.5 * X.col(i).squaredNorm() + code_objective(G, B.col(i), alpha, params);
    if (codes_out != nullptr) codes_out->col(i) = alpha;
  }
  return total / double(m);
}

}  // namespace somf
