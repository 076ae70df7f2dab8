#pragma once

// Outer loops of online matrix factorization (OMF) and its subsampled variant
// (SOMF). One iteration:
//
//   1. take the next mini-batch from a per-epoch shuffled sample stream
//   2. draw a row mask (SOMF) or use every row (OMF)
//   3. estimate (G, beta) per sample and solve the code regressions
//   4. fold the codes into C-bar and the selected rows of B-bar
//   5. partial dictionary update, alongside the update of the other rows of B-bar
//   6. keep D^T D up to date when the estimator needs it
//
// With a fixed seed and sequential execution every run is bit-reproducible.

#include "somf/core.hpp"
#include "somf/data_io.hpp"
#include "somf/dict_update.hpp"
#include "somf/estimators.hpp"
#include "somf/proximal.hpp"
#include "somf/rng.hpp"
#include "somf/subsampling.hpp"
#include "somf/surrogate.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace somf {

enum class Algorithm { OMF, SOMF };

inline std::string_view to_string(Algorithm algorithm) { return algorithm == Algorithm::OMF ? "omf" : "somf"; }

inline Algorithm parse_algorithm(std::string_view name) {
  if (name == "omf") return Algorithm::OMF;
  if (name == "somf") return Algorithm::SOMF;
  throw ConfigError("unknown algorithm '" + std::string(name) + "'");
}

struct FitConfig {
  Index k = 8;
  ElasticNetParams enet{};
  Index batch_size = 0;  // 0 selects k
  double reduction = 1.0;
  EstimatorVariant variant = EstimatorVariant::Averaged;
  Algorithm algorithm = Algorithm::SOMF;
  bool exact_codes = false;  // SOMF with exact D^T D / D^T x codes: subsampling only in the dictionary update
  double u = 0.917;          // surrogate weights t^-u
  double v = 0.751;          // per-sample estimator weights c^-v
  double epochs = 1.0;
  long max_iters = 0;  // overrides epochs when > 0
  std::uint64_t seed = 0;
  CodeSolverOptions code_solver{};
  CodeSolverOptions eval_solver = CodeSolverOptions::oracle_grade();
  bool parallel = false;           // overlap the dictionary update with the complement B-bar update
  bool reinit_dead_atoms = false;  // replace atoms with no curvature by a random batch sample
  bool track_surrogate = false;    // report surrogate values around each dictionary update

  Index effective_batch() const { return batch_size > 0 ? batch_size : k; }
  double effective_reduction() const { return algorithm == Algorithm::OMF ? 1.0 : reduction; }

  long total_iterations(Index n) const {
    if (max_iters > 0) return max_iters;
    return std::max<long>(1, static_cast<long>(std::ceil(epochs * double(n) / double(effective_batch()))));
  }

  bool maintains_gram() const {
    return algorithm == Algorithm::SOMF && (variant == EstimatorVariant::ExactGram || exact_codes);
  }

  /// Throws on invalid settings; returns warnings for settings outside the
  /// range where convergence is guaranteed.
  std::vector<std::string> validate() const {
    enet.validate();
    if (k < 1) throw ConfigError("k must be >= 1");
    if (batch_size < 0) throw ConfigError("batch_size must be >= 0");
    if (!(reduction >= 1.0) || !std::isfinite(reduction)) throw ConfigError("reduction must be >= 1");
    if (!(u > 0.0 && u <= 1.0)) throw ConfigError("u must lie in (0, 1]");
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError("v must lie in (0, 1]");
    if (max_iters <= 0 && !(epochs > 0.0)) throw ConfigError("epochs must be > 0");
    if (code_solver.max_iter < 1 || eval_solver.max_iter < 1) throw ConfigError("solver max_iter must be >= 1");

    std::vector<std::string> warnings;
    if (!(u > 11.0 / 12.0 && u < 1.0)) warnings.emplace_back("u outside (11/12, 1): convergence not guaranteed");
    if (algorithm == Algorithm::SOMF && variant != EstimatorVariant::Masked && !(v > 0.75 && v < 3.0 * u - 2.0)) {
      warnings.emplace_back("v outside (3/4, 3u - 2): convergence not guaranteed");
    }
    if (algorithm == Algorithm::OMF && reduction != 1.0) warnings.emplace_back("omf ignores reduction (forced to 1)");
    return warnings;
  }
};

struct Checkpoint {
  long iter = 0;
  double epoch = 0.0;
  double wall_seconds = 0.0;  // time spent in iterations, evaluation excluded
  std::uint64_t flops = 0;
  std::uint64_t critical_flops = 0;  // flops minus the B-bar complement update
  double train_surrogate = 0.0;
  std::optional<double> test_objective;
};

struct FitReport {
  std::vector<Checkpoint> checkpoints;
  DictionaryState dictionary;
  FlopCounter flops;
  long iterations = 0;
};

/// Per-iteration diagnostics handed to observers.
struct IterationEvent {
  long iter;
  const Mask& mask;
  std::span<const Index> samples;
  const Matrix& codes;
  double weight;
  std::optional<double> surrogate_before;  // after the B-bar/C-bar update, before the dictionary update
  std::optional<double> surrogate_after;
  const DictionaryState& dictionary;
  const SurrogateStats& stats;
};

struct FitHooks {
  std::function<void(const Checkpoint&)> on_checkpoint;
  std::function<void(const IterationEvent&)> on_iteration;
};

/// Cycles through [0, n) in a fresh random order each epoch; batches may
/// straddle epochs.
class SampleStream {
 public:
  SampleStream(Index n, CounterRng rng) : n_(n), rng_(rng) { refill(); }

  std::vector<Index> next(Index count) {
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(count));
    while (static_cast<Index>(out.size()) < count) {
      if (cursor_ == order_.size()) refill();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void refill() {
    order_ = random_permutation(n_, rng_);
    cursor_ = 0;
  }

  Index n_;
  CounterRng rng_;
  std::vector<Index> order_;
  std::size_t cursor_ = 0;
};

/// Stateful OMF/SOMF solver over a fixed sample set. `step()` runs one
/// iteration; `fit()` below wraps it with checkpointing.
class OnlineFactorizer {
 public:
  OnlineFactorizer(const DatasetMatrix& X, FitConfig cfg)
      : X_(X.values()),
        cfg_(std::move(cfg)),
        warnings_(cfg_.validate()),
        eta_(cfg_.effective_batch()),
        stream_(X.n(), CounterRng(cfg_.seed, RngStream::SampleOrder)),
        mask_rng_(cfg_.seed, RngStream::Mask),
        atom_rng_(cfg_.seed, RngStream::AtomOrder),
        stats_(X.p(), cfg_.k),
        cache_(cfg_.algorithm == Algorithm::OMF ? EstimatorVariant::Masked : cfg_.variant, X.n(), cfg_.k, cfg_.v) {
    if (cfg_.algorithm == Algorithm::OMF) cfg_.reduction = 1.0;
    CounterRng init_rng(cfg_.seed, RngStream::Init);
    state_ = init_dictionary(X_, cfg_.k, init_rng, cfg_.enet.mu, cfg_.enet.positive_dict, cfg_.maintains_gram());
    half_sq_norms_.resize(static_cast<std::size_t>(X.n()));
    for (Index i = 0; i < X.n(); ++i) half_sq_norms_[static_cast<std::size_t>(i)] = 0.5 * X_.col(i).squaredNorm();
    if (cache_.stores_beta()) last_codes_ = Matrix::Zero(cfg_.k, X.n());
  }

  void step(const std::function<void(const IterationEvent&)>& observer = {}) {
    const auto start = std::chrono::steady_clock::now();
    const Index p = X_.rows();
    const Index k = cfg_.k;
    const bool omf = cfg_.algorithm == Algorithm::OMF;

    // 1. batch
    const std::vector<Index> samples = stream_.next(eta_);
    Matrix X_batch(p, eta_);
    for (Index b = 0; b < eta_; ++b) X_batch.col(b) = X_.col(samples[static_cast<std::size_t>(b)]);

    // 2. mask
    const Mask mask = omf ? Mask::full(p) : draw_mask(p, cfg_.reduction, mask_rng_);

    // 3. codes
    std::vector<CodeInputs> inputs;
    if (omf) {
      inputs = exact_code_inputs(state_.D, X_batch, &flops_);
    } else if (cfg_.exact_codes) {
      Matrix B;
      B.noalias() = state_.D.transpose() * X_batch;
      count_flops(&flops_, FlopCounter::Kind::CodeInputs, 2.0 * double(p) * double(k) * double(eta_));
      for (Index b = 0; b < eta_; ++b) inputs.push_back({*state_.gram, B.col(b)});
    } else {
      inputs = compute_batch_code_inputs(cfg_.variant, state_.D, X_batch, samples, mask, &cache_,
                                         state_.gram ? &*state_.gram : nullptr, &flops_);
    }
    if (state_.gram) {
      for (auto& in : inputs) drop_dead_atoms(in);
    }
    Matrix codes(k, eta_);
    for (Index b = 0; b < eta_; ++b) {
      const auto& in = inputs[static_cast<std::size_t>(b)];
      const Index i = samples[static_cast<std::size_t>(b)];
      if (last_codes_.size() > 0) {
        codes.col(b) = solve_code(in.G, in.beta, cfg_.enet, last_codes_.col(i), cfg_.code_solver, &flops_);
        last_codes_.col(i) = codes.col(b);
      } else {
        codes.col(b) = solve_code(in.G, in.beta, cfg_.enet, cfg_.code_solver, &flops_);
      }
    }

    // 4. surrogate statistics
    ++stats_.t;
    const double w = weight(stats_.t, cfg_.u);
    update_C(stats_, codes, w, &flops_);
    std::vector<double> half_norms(static_cast<std::size_t>(eta_));
    for (Index b = 0; b < eta_; ++b) {
      half_norms[static_cast<std::size_t>(b)] = half_sq_norms_[static_cast<std::size_t>(samples[static_cast<std::size_t>(b)])];
    }
    update_constant(stats_, half_norms, codes, cfg_.enet, w);
    update_B_selected(stats_, mask, X_batch, codes, w, &flops_);

    // 5. dictionary update and remaining rows of B-bar
    const std::vector<Index> order = random_permutation(k, atom_rng_);
    std::optional<double> before;
    std::optional<double> after;
    std::vector<Index> skipped;
    if (cfg_.track_surrogate) {
      update_B_complement(stats_, mask, X_batch, codes, w, &flops_);
      before = surrogate_value(stats_, state_.D);
      skipped = partial_dictionary_update(state_, mask, stats_.C, stats_.B, order, &flops_);
      after = surrogate_value(stats_, state_.D);
    } else if (cfg_.parallel && !mask.covers_all()) {
      FlopCounter side;
      std::thread worker([&] { update_B_complement(stats_, mask, X_batch, codes, w, &side); });
      try {
        skipped = partial_dictionary_update(state_, mask, stats_.C, stats_.B, order, &flops_);
      } catch (...) {
        worker.join();
        throw;
      }
      worker.join();
      flops_ += side;
    } else {
      skipped = partial_dictionary_update(state_, mask, stats_.C, stats_.B, order, &flops_);
      update_B_complement(stats_, mask, X_batch, codes, w, &flops_);
    }

    if (cfg_.reinit_dead_atoms && !skipped.empty()) reinit_atoms(skipped, X_batch);

    ++iter_;
    wall_seconds_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (observer) {
      observer(IterationEvent{iter_, mask, samples, codes, w, before, after, state_, stats_});
    }
  }

  long iteration() const { return iter_; }
  double epoch() const { return double(iter_) * double(eta_) / double(X_.cols()); }
  double wall_seconds() const { return wall_seconds_; }
  const FlopCounter& flops() const { return flops_; }
  const DictionaryState& dictionary() const { return state_; }
  const SurrogateStats& stats() const { return stats_; }
  const SampleCache& cache() const { return cache_; }
  const FitConfig& config() const { return cfg_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  Index batch_size() const { return eta_; }

  double train_surrogate() const { return surrogate_value(stats_, state_.D); }

 private:
  // The online Gram drifts by rounding, so an atom that has shrunk to zero can
  // show a tiny or negative diagonal next to a stale averaged beta. Its code
  // coordinate is pinned to zero.
  static void drop_dead_atoms(CodeInputs& in) {
    for (Index j = 0; j < in.G.rows(); ++j) {
      if (in.G(j, j) > kDeadAtomCurvature) continue;
      in.G.row(j).setZero();
      in.G.col(j).setZero();
      in.beta[j] = 0.0;
    }
  }

  static constexpr double kDeadAtomCurvature = 1e-12;

  void reinit_atoms(const std::vector<Index>& atoms, const Matrix& X_batch) {
    for (Index j : atoms) {
      const auto b = static_cast<Index>(mask_rng_.below(static_cast<std::uint64_t>(X_batch.cols())));
      state_.D.col(j) = enet_projection(X_batch.col(b), 1.0, state_.mu, state_.positive_dict);
      state_.slack[j] = std::clamp(1.0 - atom_norm(state_.D.col(j), state_.mu), 0.0, 1.0);
    }
    if (state_.gram) state_.refresh_gram();
  }

  const Matrix& X_;
  FitConfig cfg_;
  std::vector<std::string> warnings_;
  Index eta_;
  SampleStream stream_;
  CounterRng mask_rng_;
  CounterRng atom_rng_;
  DictionaryState state_;
  SurrogateStats stats_;
  SampleCache cache_;
  Matrix last_codes_;
  std::vector<double> half_sq_norms_;
  FlopCounter flops_;
  long iter_ = 0;
  double wall_seconds_ = 0.0;
};

/// Runs the configured number of iterations, recording a checkpoint at
/// iteration 0, every `checkpoint_every` iterations and at the end.
inline FitReport fit(const DatasetMatrix& X, const DatasetMatrix* X_test, const FitConfig& cfg, long checkpoint_every,
                     const FitHooks& hooks = {}) {
  if (X_test != nullptr && X_test->p() != X.p()) throw DimensionError("fit: test set has a different row count");
  OnlineFactorizer solver(X, cfg);
  const long total = cfg.total_iterations(X.n());
  const long every = checkpoint_every > 0 ? checkpoint_every : total;

  FitReport report;
  auto record = [&] {
    Checkpoint cp;
    cp.iter = solver.iteration();
    cp.epoch = solver.epoch();
    cp.wall_seconds = solver.wall_seconds();
    cp.flops = solver.flops().total();
    cp.critical_flops = solver.flops().critical_path();
    cp.train_surrogate = solver.train_surrogate();
    if (X_test != nullptr) {
      cp.test_objective = empirical_objective(X_test->values(), solver.dictionary().D, cfg.enet, cfg.eval_solver);
    }
    report.checkpoints.push_back(cp);
    if (hooks.on_checkpoint) hooks.on_checkpoint(cp);
  };

  record();
  for (long t = 1; t <= total; ++t) {
    solver.step(hooks.on_iteration);
    if (t % every == 0 || t == total) record();
  }
  report.dictionary = solver.dictionary();
  report.flops = solver.flops();
  report.iterations = solver.iteration();
  return report;
}

struct OracleResult {
  DictionaryState dictionary;
  Matrix codes;
  double objective = 0.0;      // empirical objective of the final dictionary
  std::vector<double> trace;   // joint objective after each alternation
  int outer_iterations = 0;
};

/// Full-batch alternate minimization from the same initial dictionary as
/// `fit`: exact codes for every column, then block coordinate descent on the
/// dictionary until it stalls. Stops when the relative decrease of the joint
/// objective falls below `outer_tol`.
inline OracleResult alternate_minimization_oracle(const DatasetMatrix& X, const FitConfig& cfg, double outer_tol,
                                                  int max_outer = 1000, int max_bcd_passes = 500) {
  (void)cfg.validate();
  const Matrix& data = X.values();
  const Index n = X.n();
  const Index k = cfg.k;
  CounterRng init_rng(cfg.seed, RngStream::Init);
  OracleResult result;
  result.dictionary = init_dictionary(data, k, init_rng, cfg.enet.mu, cfg.enet.positive_dict, false);
  DictionaryState& state = result.dictionary;
  Matrix A = Matrix::Zero(k, n);

  std::vector<Index> order(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) order[static_cast<std::size_t>(j)] = j;

  auto joint_objective = [&] {
    double total = 0.0;
    for (Index i = 0; i < n; ++i) {
      total += 0.5 * (data.col(i) - state.D * A.col(i)).squaredNorm() +
               cfg.enet.lambda * elastic_net_value(A.col(i), cfg.enet.nu);
    }
    return total / double(n);
  };

  const CodeSolverOptions exact = CodeSolverOptions::oracle_grade();
  double previous = std::numeric_limits<double>::infinity();
  for (int outer = 0; outer < max_outer; ++outer) {
    Matrix G;
    G.noalias() = state.D.transpose() * state.D;
    Matrix Bx;
    Bx.noalias() = state.D.transpose() * data;
    for (Index i = 0; i < n; ++i) A.col(i) = solve_code(G, Bx.col(i), cfg.enet, A.col(i), exact);

    SurrogateStats stats(X.p(), k);
    stats.C.noalias() = A * A.transpose() / double(n);
    stats.C = 0.5 * (stats.C + stats.C.transpose()).eval();
    stats.B.noalias() = data * A.transpose() / double(n);
    double value = surrogate_value(stats, state.D, 0.0);
    for (int pass = 0; pass < max_bcd_passes; ++pass) {
      full_dictionary_update(state, stats.C, stats.B, order);
      const double next = surrogate_value(stats, state.D, 0.0);
      const bool stalled = value - next <= 1e-14 * std::max(1.0, std::abs(next));
      value = next;
      if (stalled) break;
    }
    state.refresh_slack();

    const double current = joint_objective();
    result.trace.push_back(current);
    result.outer_iterations = outer + 1;
    if (previous - current <= outer_tol * std::abs(current)) break;
    previous = current;
  }
  result.codes = A;
  result.objective = empirical_objective(data, state.D, cfg.enet, exact);
  return result;
}

}  // namespace somf
