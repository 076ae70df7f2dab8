#pragma once

// Estimators of the code-regression inputs (G, beta) = (D^T D, D^T x) that
// only touch the rows selected by the current mask:
//
//   Masked     G = D^T M D,            beta = D^T M x            (nothing stored)
//   Averaged   running gamma-averages of both, one pair per sample
//   ExactGram  G = maintained D^T D,   beta averaged per sample

#include "somf/core.hpp"
#include "somf/subsampling.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace somf {

enum class EstimatorVariant { Masked, Averaged, ExactGram };

inline std::string_view to_string(EstimatorVariant variant) {
  switch (variant) {
    case EstimatorVariant::Masked: return "masked";
    case EstimatorVariant::Averaged: return "averaged";
    case EstimatorVariant::ExactGram: return "exact_gram";
  }
  return "unknown";
}

inline EstimatorVariant parse_estimator_variant(std::string_view name) {
  if (name == "masked" || name == "a") return EstimatorVariant::Masked;
  if (name == "averaged" || name == "b") return EstimatorVariant::Averaged;
  if (name == "exact_gram" || name == "c") return EstimatorVariant::ExactGram;
  throw ConfigError("unknown estimator variant '" + std::string(name) + "'");
}

/// Per-sample averaging weight c^-v for the c-th observation of a sample.
inline double gamma_weight(long count, double v) {
  if (count < 1) throw DomainError("gamma_weight: observation count must be >= 1");
  return std::pow(static_cast<double>(count), -v);
}

/// Per-sample running estimators. Averaged stores n (k^2 + k) reals,
/// ExactGram n k, Masked nothing. Entries start at zero; the first
/// observation has weight one and overwrites them.
class SampleCache {
 public:
  SampleCache(EstimatorVariant variant, Index n, Index k, double v) : variant_(variant), n_(n), k_(k), v_(v) {
    if (n < 0 || k < 0) throw DimensionError("SampleCache: negative size");
    if (variant_ == EstimatorVariant::Masked) return;
    counts_.assign(static_cast<std::size_t>(n), 0);
    betas_ = Matrix::Zero(k, n);
    if (variant_ == EstimatorVariant::Averaged) grams_.assign(static_cast<std::size_t>(n * k * k), 0.0);
  }

  EstimatorVariant variant() const { return variant_; }
  Index n() const { return n_; }
  Index k() const { return k_; }
  double v() const { return v_; }
  bool stores_beta() const { return variant_ != EstimatorVariant::Masked; }
  bool stores_gram() const { return variant_ == EstimatorVariant::Averaged; }

  long count(Index i) const {
    check_index(i);
    return stores_beta() ? counts_[static_cast<std::size_t>(i)] : 0;
  }

  auto beta(Index i) {
    check_index(i);
    return betas_.col(i);
  }
  auto beta(Index i) const {
    check_index(i);
    return betas_.col(i);
  }

  Eigen::Map<Matrix> gram(Index i) {
    check_index(i);
    if (!stores_gram()) throw std::logic_error("SampleCache: variant does not store Gram matrices");
    return {grams_.data() + i * k_ * k_, k_, k_};
  }
  Eigen::Map<const Matrix> gram(Index i) const {
    check_index(i);
    if (!stores_gram()) throw std::logic_error("SampleCache: variant does not store Gram matrices");
    return {grams_.data() + i * k_ * k_, k_, k_};
  }

  /// Records one more observation of sample i and returns its weight.
  double observe(Index i) {
    check_index(i);
    auto& c = counts_[static_cast<std::size_t>(i)];
    ++c;
    return gamma_weight(c, v_);
  }

  std::size_t stored_reals() const { return static_cast<std::size_t>(betas_.size()) + grams_.size(); }

 private:
  void check_index(Index i) const {
    if (i < 0 || i >= n_) throw std::out_of_range("SampleCache: sample index " + std::to_string(i) + " out of range");
  }

  EstimatorVariant variant_;
  Index n_;
  Index k_;
  double v_;
  std::vector<long> counts_;
  Matrix betas_;
  std::vector<double> grams_;
};

/// Inputs for one sample's code regression.
struct CodeInputs {
  Matrix G;
  Vector beta;
};

/// Exact inputs D^T D and D^T x for a batch, as in the unsubsampled algorithm.
inline std::vector<CodeInputs> exact_code_inputs(const Eigen::Ref<const Matrix>& D,
                                                 const Eigen::Ref<const Matrix>& X_batch,
                                                 FlopCounter* flops = nullptr) {
  require_dims(D.rows() == X_batch.rows(), "exact_code_inputs: D and X have different row counts");
  const double p = double(D.rows()), k = double(D.cols()), eta = double(X_batch.cols());
  Matrix G;
  G.noalias() = D.transpose() * D;
  Matrix B;
  B.noalias() = D.transpose() * X_batch;
  count_flops(flops, FlopCounter::Kind::CodeInputs, 2.0 * p * k * k + 2.0 * p * k * eta);
  std::vector<CodeInputs> out;
  out.reserve(static_cast<std::size_t>(X_batch.cols()));
  for (Index b = 0; b < X_batch.cols(); ++b) out.push_back({G, B.col(b)});
  return out;
}

/// Estimators for every sample of a mini-batch sharing one mask. Column b of
/// `X_batch` is sample `sample_indices[b]`. The masked products D^T M D and
/// D^T M X are formed once from the selected rows only.
inline std::vector<CodeInputs> compute_batch_code_inputs(EstimatorVariant variant, const Eigen::Ref<const Matrix>& D,
                                                         const Eigen::Ref<const Matrix>& X_batch,
                                                         std::span<const Index> sample_indices, const Mask& mask,
                                                         SampleCache* cache, const Matrix* maintained_gram,
                                                         FlopCounter* flops = nullptr) {
  const Index k = D.cols();
  const Index eta = X_batch.cols();
  require_dims(D.rows() == mask.p() && X_batch.rows() == mask.p(), "compute_code_inputs: mask/row count mismatch");
  require_dims(static_cast<Index>(sample_indices.size()) == eta, "compute_code_inputs: one index per batch column");
  if (variant != EstimatorVariant::Masked) {
    if (cache == nullptr || cache->variant() != variant) throw std::invalid_argument("compute_code_inputs: cache missing");
    require_dims(cache->k() == k, "compute_code_inputs: cache built for another k");
    for (Index i : sample_indices) {
      if (i < 0 || i >= cache->n()) throw std::out_of_range("compute_code_inputs: sample index out of range");
    }
  }
  if (variant == EstimatorVariant::ExactGram) {
    if (maintained_gram == nullptr) throw std::invalid_argument("compute_code_inputs: exact_gram needs the maintained Gram matrix");
    require_dims(maintained_gram->rows() == k && maintained_gram->cols() == k, "compute_code_inputs: Gram is not k x k");
  }

  const double r = mask.reduction();
  const double q = double(mask.q());
  Matrix masked_G;
  Matrix masked_B;
  if (mask.covers_all()) {
    if (variant != EstimatorVariant::ExactGram) masked_G.noalias() = D.transpose() * D;
    masked_B.noalias() = D.transpose() * X_batch;
  } else {
    const Matrix D_sel = gather_rows(D, mask);
    const Matrix X_sel = gather_rows(X_batch, mask);
    if (variant != EstimatorVariant::ExactGram) masked_G.noalias() = D_sel.transpose() * D_sel;
    masked_B.noalias() = D_sel.transpose() * X_sel;
  }
  if (variant != EstimatorVariant::ExactGram) {
    masked_G *= r;
    count_flops(flops, FlopCounter::Kind::CodeInputs, 2.0 * q * double(k) * double(k));
  }
  masked_B *= r;
  count_flops(flops, FlopCounter::Kind::CodeInputs, 2.0 * q * double(k) * double(eta));

  std::vector<CodeInputs> out;
  out.reserve(static_cast<std::size_t>(eta));
  for (Index b = 0; b < eta; ++b) {
    const Index i = sample_indices[static_cast<std::size_t>(b)];
    switch (variant) {
      case EstimatorVariant::Masked:
        out.push_back({masked_G, masked_B.col(b)});
        break;
      case EstimatorVariant::Averaged: {
        const double gamma = cache->observe(i);
        auto beta = cache->beta(i);
        auto G = cache->gram(i);
        if (gamma == 1.0) {
          beta = masked_B.col(b);
          G = masked_G;
        } else {
          beta = (1.0 - gamma) * beta + gamma * masked_B.col(b);
          G = (1.0 - gamma) * G + gamma * masked_G;
        }
        count_flops(flops, FlopCounter::Kind::CodeInputs, 3.0 * double(k) * double(k + 1));
        out.push_back({G, beta});
        break;
      }
      case EstimatorVariant::ExactGram: {
        const double gamma = cache->observe(i);
        auto beta = cache->beta(i);
        if (gamma == 1.0) {
          beta = masked_B.col(b);
        } else {
          beta = (1.0 - gamma) * beta + gamma * masked_B.col(b);
        }
        count_flops(flops, FlopCounter::Kind::CodeInputs, 3.0 * double(k));
        out.push_back({*maintained_gram, beta});
        break;
      }
    }
  }
  return out;
}

/// Single-sample form of `compute_batch_code_inputs`.
inline CodeInputs compute_code_inputs(EstimatorVariant variant, const Eigen::Ref<const Matrix>& D,
                                      const Eigen::Ref<const Vector>& x, const Mask& mask, SampleCache* cache,
                                      Index sample_index, const Matrix* maintained_gram,
                                      FlopCounter* flops = nullptr) {
  const Index indices[1] = {sample_index};
  Matrix X(x.size(), 1);
  X.col(0) = x;
  auto batch = compute_batch_code_inputs(variant, D, X, indices, mask, cache, maintained_gram, flops);
  return std::move(batch.front());
}

}  // namespace somf
