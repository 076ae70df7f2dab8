// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero when a blocking criterion fails. Pass criterion numbers as
// arguments to run a subset.

#include "somf/data_io.hpp"
#include "somf/dict_update.hpp"
#include "somf/driver.hpp"
#include "somf/estimators.hpp"
#include "somf/proximal.hpp"
#include "somf/subsampling.hpp"
#include "somf/surrogate.hpp"

#include "../oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace somf;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double time_limit;  // seconds
  bool blocking;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double linf(const Vector& a, const Vector& b) { return (a - b).lpNorm<Eigen::Infinity>(); }

// ---------------------------------------------------------------- 1

Outcome omf_reduction_identity() {
  SyntheticSpec spec;
  spec.p = 20;
  spec.n = 50;
  spec.true_k = 5;
  spec.seed = 101;
  const auto data = generate_synthetic(spec);

  FitConfig somf_cfg;
  somf_cfg.k = 5;
  somf_cfg.enet.lambda = 0.1;
  somf_cfg.seed = 101;
  somf_cfg.algorithm = Algorithm::SOMF;
  somf_cfg.variant = EstimatorVariant::Masked;
  somf_cfg.reduction = 1.0;
  FitConfig omf_cfg = somf_cfg;
  omf_cfg.algorithm = Algorithm::OMF;

  OnlineFactorizer a(data.X, somf_cfg), b(data.X, omf_cfg);
  for (int t = 1; t <= 100; ++t) {
    a.step();
    b.step();
    if (a.dictionary().D != b.dictionary().D) return {false, fmt("dictionaries differ at iteration %d", t)};
  }
  return {true, "dictionaries bit-identical over 100 iterations"};
}

// ---------------------------------------------------------------- 2 and 8

// OMF for 50 epochs against the alternate-minimization oracle from the same
// initial dictionary. Both are scored on the held-out columns.
Outcome oracle_proximity(bool positive, bool check_signs) {
  SyntheticSpec spec;
  spec.p = 64;
  spec.n = 600;
  spec.true_k = 8;
  spec.noise_sigma = 0.05;
  spec.nonnegative = positive;
  spec.seed = 202;
  const auto data = generate_synthetic(spec);
  const auto [train, test] = train_test_split(data.X, 100.0 / 600.0, 202);

  FitConfig cfg;
  cfg.k = 8;
  cfg.enet.lambda = 0.1;
  cfg.enet.nu = 0.0;
  cfg.enet.positive_code = positive;
  cfg.enet.positive_dict = positive;
  cfg.algorithm = Algorithm::OMF;
  cfg.epochs = 50;
  cfg.seed = 202;

  bool signs_ok = true;
  FitHooks hooks;
  if (check_signs) {
    hooks.on_iteration = [&](const IterationEvent& e) {
      if (e.codes.minCoeff() < 0.0 || e.dictionary.D.minCoeff() < 0.0) signs_ok = false;
    };
  }
  const auto report = fit(train, nullptr, cfg, 0, hooks);
  const auto oracle_run = alternate_minimization_oracle(train, cfg, 1e-9, 5000);

  const double online = empirical_objective(test.values(), report.dictionary.D, cfg.enet, cfg.eval_solver);
  const double reference = empirical_objective(test.values(), oracle_run.dictionary.D, cfg.enet, cfg.eval_solver);
  const double online_train = empirical_objective(train.values(), report.dictionary.D, cfg.enet, cfg.eval_solver);
  const double rel = std::abs(online - reference) / reference;
  if (check_signs && (oracle_run.dictionary.D.minCoeff() < 0.0 || oracle_run.codes.minCoeff() < 0.0)) signs_ok = false;

  std::string detail = fmt("test objective omf %.6f oracle %.6f (rel %.4f); train omf %.6f oracle %.6f; oracle %d alternations",
                           online, reference, rel, online_train, oracle_run.objective, oracle_run.outer_iterations);
  if (check_signs) detail += signs_ok ? "; all codes and atoms >= 0" : "; NEGATIVE entry seen";
  return {rel <= 0.05 && signs_ok, detail};
}

// ---------------------------------------------------------------- 3 and 9

struct SweepRun {
  std::string label;
  FitReport report;
  std::optional<Checkpoint> reached;
};

struct Sweep {
  double threshold = 0.0;
  std::map<std::string, SweepRun> runs;
};

// Redundant instance: 256-dimensional atoms with every row repeated 16 times.
const Sweep& redundant_sweep() {
  static std::optional<Sweep> cache;
  if (cache) return *cache;

  SyntheticSpec spec;
  spec.p = 4096;
  spec.row_repeat = 16;
  spec.n = 10500;
  spec.true_k = 16;
  spec.noise_sigma = 0.05;
  spec.seed = 1;
  const auto data = generate_synthetic(spec);
  const auto [train, test] = train_test_split(data.X, 500.0 / 10500.0, 1);

  auto config = [](Algorithm algorithm, double r, bool exact_codes) {
    FitConfig cfg;
    cfg.k = 16;
    cfg.batch_size = 16;
    cfg.enet.lambda = 0.5;
    cfg.algorithm = algorithm;
    cfg.reduction = r;
    cfg.variant = EstimatorVariant::Averaged;
    cfg.exact_codes = exact_codes;
    cfg.epochs = 3;
    cfg.seed = 1;
    return cfg;
  };
  const std::vector<std::pair<std::string, FitConfig>> plan = {
      {"omf", config(Algorithm::OMF, 1.0, false)},
      {"somf_r8_averaged", config(Algorithm::SOMF, 8.0, false)},
      {"somf_r12_averaged", config(Algorithm::SOMF, 12.0, false)},
      {"somf_r12_exact_codes", config(Algorithm::SOMF, 12.0, true)},
  };

  Sweep sweep;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [label, cfg] : plan) {
    SweepRun run{label, fit(train, &test, cfg, 25), std::nullopt};
    best = std::min(best, *run.report.checkpoints.back().test_objective);
    sweep.runs.emplace(label, std::move(run));
  }
  sweep.threshold = 1.01 * best;
  for (auto& [label, run] : sweep.runs) {
    for (const auto& cp : run.report.checkpoints) {
      if (*cp.test_objective <= sweep.threshold) {
        run.reached = cp;
        break;
      }
    }
  }
  cache = std::move(sweep);
  return *cache;
}

std::string describe(const SweepRun& run) {
  if (!run.reached) return fmt("%s not reached (final %.5f)", run.label.c_str(), *run.report.checkpoints.back().test_objective);
  return fmt("%s at iter %ld, %.3g flops (%.3g on the critical path)", run.label.c_str(), run.reached->iter,
             double(run.reached->flops), double(run.reached->critical_flops));
}

Outcome flop_speedup() {
  const auto& sweep = redundant_sweep();
  const auto& omf = sweep.runs.at("omf");
  const auto& somf = sweep.runs.at("somf_r8_averaged");
  std::string detail = fmt("threshold %.5f; ", sweep.threshold) + describe(omf) + "; " + describe(somf);
  if (!omf.reached || !somf.reached) return {false, detail};
  const double ratio = double(somf.reached->flops) / double(omf.reached->flops);
  const double critical = double(somf.reached->critical_flops) / double(omf.reached->critical_flops);
  detail += fmt("; flop ratio %.3f (critical path %.3f)", ratio, critical);
  return {ratio <= 0.5, detail};
}

Outcome variant_ordering() {
  const auto& sweep = redundant_sweep();
  const auto& averaged = sweep.runs.at("somf_r12_averaged");
  const auto& exact = sweep.runs.at("somf_r12_exact_codes");
  std::string detail = fmt("threshold %.5f; ", sweep.threshold) + describe(averaged) + "; " + describe(exact);
  if (!averaged.reached) return {false, detail};
  if (!exact.reached) return {true, detail};
  const double ratio = double(averaged.reached->flops) / double(exact.reached->flops);
  detail += fmt("; flop ratio %.3f (tolerance 1.10)", ratio);
  return {ratio <= 1.10, detail};
}

// ---------------------------------------------------------------- 4

Outcome estimator_consistency() {
  std::mt19937_64 gen(404);
  const Index p = 4096, k = 16;
  Matrix D = oracle::random_matrix(p, k, gen);
  D.colwise().normalize();
  const Vector x = D * oracle::random_vector(k, gen) + oracle::random_vector(p, gen, 0.05);
  const Vector truth = D.transpose() * x;
  const Matrix gram = D.transpose() * D;

  SampleCache averaged(EstimatorVariant::Averaged, 1, k, 0.751);
  SampleCache exact(EstimatorVariant::ExactGram, 1, k, 0.751);
  CounterRng rng(404, RngStream::Mask);
  double err_b = 0.0, err_50 = 0.0;
  double worst_gram = 0.0;
  for (int t = 1; t <= 500; ++t) {
    const Mask mask = draw_mask(p, 4.0, rng);
    const auto b = compute_code_inputs(EstimatorVariant::Averaged, D, x, mask, &averaged, 0, &gram);
    const auto c = compute_code_inputs(EstimatorVariant::ExactGram, D, x, mask, &exact, 0, &gram);
    err_b = (b.beta - truth).norm() / truth.norm();
    if (t == 50) err_50 = err_b;
    worst_gram = std::max(worst_gram, (c.G - gram).norm());
  }

  // Gram maintained by an ExactGram fit, checked against D^T D after every step.
  SyntheticSpec spec;
  spec.p = 200;
  spec.n = 300;
  spec.true_k = 10;
  spec.seed = 404;
  const auto data = generate_synthetic(spec);
  FitConfig cfg;
  cfg.k = 10;
  cfg.enet.lambda = 0.1;
  cfg.reduction = 4.0;
  cfg.variant = EstimatorVariant::ExactGram;
  cfg.seed = 404;
  OnlineFactorizer solver(data.X, cfg);
  for (int t = 0; t < 500; ++t) {
    solver.step();
    const auto& state = solver.dictionary();
    worst_gram = std::max(worst_gram, (*state.gram - state.D.transpose() * state.D).norm());
  }

  return {err_b < 1e-2 && worst_gram <= 1e-10,
          fmt("variant b relative error %.4g after 50, %.4g after 500 observations; worst variant c Gram error %.3g",
              err_50, err_b, worst_gram)};
}

// ---------------------------------------------------------------- 5 and 8

Outcome surrogate_monotonicity(bool positive) {
  SyntheticSpec spec;
  spec.p = 120;
  spec.n = 200;
  spec.true_k = 8;
  spec.nonnegative = positive;
  spec.seed = 505;
  const auto data = generate_synthetic(spec);

  double worst = -std::numeric_limits<double>::infinity();
  bool signs_ok = true;
  int runs = 0;
  for (double r : {2.0, 4.0, 12.0}) {
    for (auto variant : {EstimatorVariant::Masked, EstimatorVariant::Averaged, EstimatorVariant::ExactGram}) {
      FitConfig cfg;
      cfg.k = 8;
      cfg.enet.lambda = 0.1;
      cfg.enet.positive_code = positive;
      cfg.enet.positive_dict = positive;
      cfg.reduction = r;
      cfg.variant = variant;
      cfg.track_surrogate = true;
      cfg.seed = 505 + static_cast<std::uint64_t>(runs);
      OnlineFactorizer solver(data.X, cfg);
      for (int t = 0; t < 1000; ++t) {
        solver.step([&](const IterationEvent& e) {
          worst = std::max(worst, *e.surrogate_after - *e.surrogate_before);
          if (positive && (e.codes.minCoeff() < 0.0 || e.dictionary.D.minCoeff() < 0.0)) signs_ok = false;
        });
      }
      ++runs;
    }
  }
  std::string detail = fmt("%d runs x 1000 iterations; largest surrogate increase %.3g", runs, worst);
  if (positive) detail += signs_ok ? "; all codes and atoms >= 0" : "; NEGATIVE entry seen";
  return {worst <= 1e-12 && signs_ok, detail};
}

// ---------------------------------------------------------------- 6

Outcome proximal_correctness() {
  std::mt19937_64 gen(606);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst_proj = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index q = 1 + static_cast<Index>(gen() % 40);
    const Vector u = oracle::random_vector(q, gen, 0.1 + 3.0 * unit(gen));
    const double radius = 2.0 * unit(gen);
    const double mix = trial % 4 == 0 ? 0.0 : (trial % 4 == 1 ? 1.0 : unit(gen));
    const bool positive = trial % 3 == 0;
    worst_proj = std::max(worst_proj, linf(enet_projection(u, radius, mix, positive), oracle::project(u, radius, mix, positive)));
  }

  double worst_code = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const Index k = 2 + static_cast<Index>(gen() % 15);
    const Matrix G = oracle::random_spd(k, gen);
    const Vector beta = oracle::random_vector(k, gen);
    ElasticNetParams params;
    params.lambda = 0.5 * unit(gen);
    params.nu = trial % 5 == 0 ? 0.0 : unit(gen);
    params.positive_code = trial % 2 == 1;
    const Vector a = solve_code(G, beta, params, CodeSolverOptions::oracle_grade());
    const Vector ref = oracle::lasso_fista(G, beta, params.lambda, params.nu, params.positive_code);
    worst_code = std::max(worst_code, linf(a, ref));
  }
  return {worst_proj <= 1e-6 && worst_code <= 1e-6,
          fmt("projection worst l-inf %.3g over 1000 cases; solve_code worst l-inf %.3g over 500 cases", worst_proj,
              worst_code)};
}

// ---------------------------------------------------------------- 7

Outcome gram_and_b_identities() {
  std::mt19937_64 gen(707);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Index p = 150, k = 12;
  CounterRng init_rng(707, RngStream::Init);
  DictionaryState state = init_dictionary(oracle::random_matrix(p, 40, gen), k, init_rng, 0.5, false, true);
  CounterRng mask_rng(707, RngStream::Mask);
  std::vector<Index> order(static_cast<std::size_t>(k));
  for (Index j = 0; j < k; ++j) order[static_cast<std::size_t>(j)] = j;
  for (int t = 0; t < 1000; ++t) {
    const Matrix C = oracle::random_spd(k, gen);
    const Matrix B = oracle::random_matrix(p, k, gen);
    std::shuffle(order.begin(), order.end(), gen);
    partial_dictionary_update(state, draw_mask(p, 1.0 + 15.0 * unit(gen), mask_rng), C, B, order);
  }
  const double gram_err = (*state.gram - state.D.transpose() * state.D).norm();

  int mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Index rows = 1 + static_cast<Index>(gen() % 300);
    const Index kk = 1 + static_cast<Index>(gen() % 20);
    const Index eta = 1 + static_cast<Index>(gen() % 10);
    SurrogateStats split(rows, kk);
    split.B = oracle::random_matrix(rows, kk, gen);
    SurrogateStats full = split;
    const Matrix x = oracle::random_matrix(rows, eta, gen);
    Matrix codes = oracle::random_matrix(kk, eta, gen);
    for (Index i = 0; i < codes.size(); ++i) {
      if (unit(gen) < 0.3) codes.data()[i] = 0.0;
    }
    const double w = unit(gen);
    const Mask mask = draw_mask(rows, 1.0 + 20.0 * unit(gen), mask_rng);
    update_B_selected(split, mask, x, codes, w);
    update_B_complement(split, mask, x, codes, w);
    update_B_full(full, x, codes, w);
    if (split.B != full.B) ++mismatches;
  }
  return {gram_err <= 1e-10 && mismatches == 0,
          fmt("Gram error %.3g after 1000 partial updates; split B-bar mismatches %d of 200", gram_err, mismatches)};
}

// ---------------------------------------------------------------- 8

Outcome nonnegative_mode() {
  const Outcome proximity = oracle_proximity(true, true);
  const Outcome monotone = surrogate_monotonicity(true);
  return {proximity.pass && monotone.pass, "proximity: " + proximity.detail + " | monotonicity: " + monotone.detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "OMF-reduction identity", 5, true, omf_reduction_identity},
      {2, "oracle proximity", 60, true, [] { return oracle_proximity(false, false); }},
      {3, "subsampling FLOP speed-up", 600, true, flop_speedup},
      {4, "estimator consistency", 10, true, estimator_consistency},
      {5, "surrogate monotonicity", 60, true, [] { return surrogate_monotonicity(false); }},
      {6, "proximal correctness", 120, true, proximal_correctness},
      {7, "Gram and B-bar identities", 30, true, gram_and_b_identities},
      {8, "non-negative mode", 90, true, nonnegative_mode},
      {9, "variant ordering (non-blocking)", 600, false, variant_ordering},
  };

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  bool blocking_failure = false;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = seconds <= c.time_limit;
    const bool pass = outcome.pass && in_time;
    if (!pass && c.blocking) blocking_failure = true;
    std::printf("criterion %d %s: %s (%.1f s of %.0f s) %s%s\n", c.id, c.name, pass ? "PASS" : "FAIL", seconds,
                c.time_limit, outcome.detail.c_str(), in_time ? "" : " [over time limit]");
    std::fflush(stdout);
  }
  return blocking_failure ? 1 : 0;
}
