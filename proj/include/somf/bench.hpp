#pragma once

// Benchmark commands behind the `somf` executable: reduction/variant sweeps
// with line-delimited metric streams, the full-batch oracle, and the
// time-to-1% summary of a metrics directory.

#include "somf/config.hpp"
#include "somf/core.hpp"
#include "somf/data_io.hpp"
#include "somf/driver.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace somf {

/// Worker thread cap from SOMF_THREADS (unset or invalid: hardware concurrency).
inline unsigned thread_budget() {
  unsigned fallback = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("SOMF_THREADS");
  if (env == nullptr) return fallback;
  char* end = nullptr;
  const long value = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || value < 1) return fallback;
  return static_cast<unsigned>(value);
}

struct MetricRecord {
  std::string run_id;
  std::string algorithm;
  double r = 1.0;
  std::string variant;
  long iter = 0;
  double epoch = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t flops = 0;
  std::optional<double> test_objective;
  std::optional<double> train_surrogate;
};

inline nlohmann::json to_json(const MetricRecord& m) {
  nlohmann::json j = {{"run_id", m.run_id}, {"algorithm", m.algorithm}, {"r", m.r},
                      {"variant", m.variant}, {"iter", m.iter}, {"epoch", m.epoch},
                      {"wall_seconds", m.wall_seconds}, {"flops", m.flops}};
  j["test_objective"] = m.test_objective ? nlohmann::json(*m.test_objective) : nlohmann::json(nullptr);
  if (m.train_surrogate) j["train_surrogate"] = *m.train_surrogate;
  return j;
}

inline MetricRecord metric_from_json(const nlohmann::json& j) {
  MetricRecord m;
  m.run_id = j.at("run_id").get<std::string>();
  m.algorithm = j.at("algorithm").get<std::string>();
  m.r = j.at("r").get<double>();
  m.variant = j.at("variant").get<std::string>();
  m.iter = j.at("iter").get<long>();
  m.epoch = j.at("epoch").get<double>();
  m.wall_seconds = j.at("wall_seconds").get<double>();
  m.flops = j.at("flops").get<std::uint64_t>();
  if (j.contains("test_objective") && !j.at("test_objective").is_null()) m.test_objective = j.at("test_objective").get<double>();
  if (j.contains("train_surrogate")) m.train_surrogate = j.at("train_surrogate").get<double>();
  return m;
}

/// Appends one JSON object per line and flushes after each, so a run that dies
/// midway leaves a parseable prefix.
class MetricWriter {
 public:
  explicit MetricWriter(const std::filesystem::path& path) : out_(path, std::ios::out | std::ios::trunc) {
    if (!out_) throw InputError("cannot open metrics file " + path.string());
  }

  void write(const MetricRecord& m) {
    out_ << to_json(m).dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

/// Metrics file of one run; a truncated last line is ignored.
inline std::vector<MetricRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open metrics file " + path.string());
  std::vector<MetricRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    records.push_back(metric_from_json(j));
  }
  return records;
}

struct RunSpec {
  std::string run_id;
  FitConfig fit;
  std::string label;  // "OMF-equivalent" for the r = 1 run
};

inline std::string format_reduction(double r) {
  std::ostringstream os;
  os << r;
  return os.str();
}

/// Expands the sweep: one plain OMF run for r = 1 (whatever the variants), one
/// SOMF run per (r > 1, variant). Duplicates are dropped.
inline std::vector<RunSpec> expand_sweep(const RunConfig& rc) {
  std::vector<RunSpec> runs;
  auto seen = [&](const std::string& id) {
    return std::any_of(runs.begin(), runs.end(), [&](const RunSpec& s) { return s.run_id == id; });
  };
  for (double r : rc.reductions) {
    if (r == 1.0) {
      if (seen("omf_r1")) continue;
      FitConfig fit = rc.fit;
      fit.algorithm = Algorithm::OMF;
      fit.reduction = 1.0;
      runs.push_back({"omf_r1", fit, "OMF-equivalent"});
      continue;
    }
    for (auto variant : rc.variants) {
      const std::string id = "somf_r" + format_reduction(r) + "_" + std::string(to_string(variant));
      if (seen(id)) continue;
      FitConfig fit = rc.fit;
      fit.algorithm = Algorithm::SOMF;
      fit.reduction = r;
      fit.variant = variant;
      runs.push_back({id, fit, ""});
    }
  }
  return runs;
}

struct RunSummary {
  std::string run_id;
  std::string algorithm;
  double r = 1.0;
  std::string variant;
  std::string label;
  std::optional<double> final_objective;
  std::optional<double> time_to_threshold;
  std::optional<std::uint64_t> flops_to_threshold;
  std::optional<long> iter_to_threshold;
  std::optional<double> speedup_time;
  std::optional<double> speedup_flops;
};

struct SweepSummary {
  std::optional<double> best_final;
  std::optional<double> threshold;
  std::vector<RunSummary> runs;
};

/// Threshold = 1.01 x the smallest final test objective; per run, the first
/// checkpoint at or below it and the speed-ups against the r = 1 run.
inline SweepSummary summarize_runs(const std::vector<std::vector<MetricRecord>>& traces) {
  SweepSummary summary;
  for (const auto& trace : traces) {
    if (trace.empty()) continue;
    RunSummary rs;
    rs.run_id = trace.front().run_id;
    rs.algorithm = trace.front().algorithm;
    rs.r = trace.front().r;
    rs.variant = trace.front().variant;
    if (rs.r == 1.0) rs.label = "OMF-equivalent";
    for (auto it = trace.rbegin(); it != trace.rend(); ++it) {
      if (it->test_objective) {
        rs.final_objective = it->test_objective;
        break;
      }
    }
    if (rs.final_objective && (!summary.best_final || *rs.final_objective < *summary.best_final)) {
      summary.best_final = rs.final_objective;
    }
    summary.runs.push_back(rs);
  }
  if (!summary.best_final) return summary;
  summary.threshold = 1.01 * *summary.best_final;

  for (std::size_t i = 0, t = 0; i < traces.size(); ++i) {
    if (traces[i].empty()) continue;
    auto& rs = summary.runs[t++];
    for (const auto& m : traces[i]) {
      if (m.test_objective && *m.test_objective <= *summary.threshold) {
        rs.time_to_threshold = m.wall_seconds;
        rs.flops_to_threshold = m.flops;
        rs.iter_to_threshold = m.iter;
        break;
      }
    }
  }

  const auto base = std::find_if(summary.runs.begin(), summary.runs.end(), [](const RunSummary& s) { return s.r == 1.0; });
  if (base == summary.runs.end() || !base->time_to_threshold) return summary;
  for (auto& rs : summary.runs) {
    if (!rs.time_to_threshold) continue;
    if (&rs == &*base) {
      rs.speedup_time = 1.0;
      rs.speedup_flops = 1.0;
      continue;
    }
    auto ratio = [](double num, double den) { return den > 0.0 ? num / den : std::numeric_limits<double>::infinity(); };
    rs.speedup_time = ratio(*base->time_to_threshold, *rs.time_to_threshold);
    rs.speedup_flops = ratio(double(*base->flops_to_threshold), double(*rs.flops_to_threshold));
  }
  return summary;
}

inline nlohmann::json to_json(const SweepSummary& s) {
  auto opt = [](const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json("not reached"); };
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : s.runs) {
    runs.push_back({{"run_id", r.run_id},
                    {"algorithm", r.algorithm},
                    {"r", r.r},
                    {"variant", r.variant},
                    {"label", r.label},
                    {"final_test_objective", r.final_objective ? nlohmann::json(*r.final_objective) : nlohmann::json(nullptr)},
                    {"time_to_threshold", opt(r.time_to_threshold)},
                    {"flops_to_threshold", opt(r.flops_to_threshold)},
                    {"iter_to_threshold", opt(r.iter_to_threshold)},
                    {"speedup_time", r.speedup_time ? nlohmann::json(*r.speedup_time) : nlohmann::json(nullptr)},
                    {"speedup_flops", r.speedup_flops ? nlohmann::json(*r.speedup_flops) : nlohmann::json(nullptr)}});
  }
  nlohmann::json j = {{"runs", runs}};
  j["best_final_test_objective"] = s.best_final ? nlohmann::json(*s.best_final) : nlohmann::json(nullptr);
  j["threshold"] = s.threshold ? nlohmann::json(*s.threshold) : nlohmann::json(nullptr);
  return j;
}

inline std::string format_summary_table(const SweepSummary& s) {
  std::ostringstream os;
  os << "# time to reach 1% of the best final test objective";
  if (s.threshold) os << " (threshold " << std::setprecision(10) << *s.threshold << ")";
  os << '\n';
  os << std::left << std::setw(28) << "run" << std::setw(7) << "algo" << std::setw(6) << "r" << std::setw(12) << "variant"
     << std::setw(16) << "final_obj" << std::setw(14) << "time_s" << std::setw(16) << "flops" << std::setw(12)
     << "speedup_t" << std::setw(12) << "speedup_f" << "note\n";
  for (const auto& r : s.runs) {
    auto cell = [&](auto value, int width) {
      std::ostringstream c;
      if (value) {
        c << std::setprecision(6) << *value;
      } else {
        c << "not reached";
      }
      os << std::setw(width) << c.str();
    };
    os << std::setw(28) << r.run_id << std::setw(7) << r.algorithm << std::setw(6) << r.r << std::setw(12) << r.variant;
    cell(r.final_objective, 16);
    cell(r.time_to_threshold, 14);
    cell(r.flops_to_threshold ? std::optional<double>(double(*r.flops_to_threshold)) : std::nullopt, 16);
    auto ratio = [&](const std::optional<double>& v) {
      std::ostringstream c;
      if (v) c << std::setprecision(4) << *v;
      else c << "-";
      os << std::setw(12) << c.str();
    };
    ratio(r.speedup_time);
    ratio(r.speedup_flops);
    os << r.label << '\n';
  }
  return os.str();
}

/// Reads every *.jsonl in `dir`, writes summary.txt and summary.json there.
inline SweepSummary write_summary(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  if (files.empty()) throw InputError("no metrics files (*.jsonl) in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<std::vector<MetricRecord>> traces;
  for (const auto& f : files) traces.push_back(read_metrics(f));
  // r = 1 first, then by r and id, independent of file naming
  std::stable_sort(traces.begin(), traces.end(), [](const auto& a, const auto& b) {
    const double ra = a.empty() ? 0.0 : a.front().r;
    const double rb = b.empty() ? 0.0 : b.front().r;
    return ra < rb;
  });
  const auto summary = summarize_runs(traces);
  write_file(dir / "summary.txt", format_summary_table(summary));
  write_file(dir / "summary.json", to_json(summary).dump(2) + "\n");
  return summary;
}

namespace detail {

inline void execute_run(const RunSpec& spec, const DatasetMatrix& train, const DatasetMatrix& test, long checkpoint_every,
                        const std::filesystem::path& out_dir, std::mutex& log_mutex) {
  MetricWriter writer(out_dir / (spec.run_id + ".jsonl"));
  FitHooks hooks;
  hooks.on_checkpoint = [&](const Checkpoint& cp) {
    MetricRecord m;
    m.run_id = spec.run_id;
    m.algorithm = std::string(to_string(spec.fit.algorithm));
    m.r = spec.fit.effective_reduction();
    m.variant = spec.fit.algorithm == Algorithm::OMF ? std::string("none") : std::string(to_string(spec.fit.variant));
    m.iter = cp.iter;
    m.epoch = cp.epoch;
    m.wall_seconds = cp.wall_seconds;
    m.flops = cp.flops;
    m.test_objective = cp.test_objective;
    m.train_surrogate = cp.train_surrogate;
    writer.write(m);
  };
  {
    std::lock_guard lock(log_mutex);
    std::cerr << "[somf] " << spec.run_id << ": start\n";
    for (const auto& w : spec.fit.validate()) std::cerr << "[somf] " << spec.run_id << ": warning: " << w << '\n';
  }
  const auto report = fit(train, &test, spec.fit, checkpoint_every, hooks);
  std::lock_guard lock(log_mutex);
  std::cerr << "[somf] " << spec.run_id << ": " << report.iterations << " iterations, final test objective "
            << std::setprecision(8) << report.checkpoints.back().test_objective.value_or(0.0) << '\n';
}

}  // namespace detail

struct RunOptions {
  std::optional<bool> parallel;        // overrides run.parallel
  std::optional<bool> parallel_runs;   // overrides run.parallel_runs
  std::optional<std::filesystem::path> output_dir;
};

/// Executes the sweep of `rc`; every run sees the same data and sample order.
inline SweepSummary run_sweep(RunConfig rc, const RunOptions& opts = {}) {
  if (opts.parallel) rc.fit.parallel = *opts.parallel;
  if (opts.parallel_runs) rc.parallel_runs = *opts.parallel_runs;
  if (opts.output_dir) rc.output_dir = *opts.output_dir;
  const unsigned threads = thread_budget();
  if (threads < 2) rc.fit.parallel = false;

  std::filesystem::create_directories(rc.output_dir);
  const auto split = load_dataset(rc.data);
  const DatasetMatrix& train = split.first;
  const DatasetMatrix& test = split.second;
  auto runs = expand_sweep(rc);
  const long every = rc.checkpoint_every > 0
                         ? rc.checkpoint_every
                         : std::max<long>(1, static_cast<long>(train.n() / rc.fit.effective_batch() / 10));
  std::mutex log_mutex;

  if (rc.parallel_runs && threads > 1 && runs.size() > 1) {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(runs.size());
    auto worker = [&] {
      for (std::size_t i = next++; i < runs.size(); i = next++) {
        try {
          detail::execute_run(runs[i], train, test, every, rc.output_dir, log_mutex);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < std::min<std::size_t>(threads, runs.size()); ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  } else {
    for (const auto& run : runs) detail::execute_run(run, train, test, every, rc.output_dir, log_mutex);
  }
  return write_summary(rc.output_dir);
}

struct OracleOutcome {
  OracleResult result;
  double test_objective = 0.0;
};

/// Full-batch oracle on the training split. Writes oracle.json (objective and
/// trace), oracle_trace.txt and oracle_dictionary.dmat.
inline OracleOutcome run_oracle(const RunConfig& rc) {
  std::filesystem::create_directories(rc.output_dir);
  const auto [train, test] = load_dataset(rc.data);
  OracleOutcome out;
  out.result = alternate_minimization_oracle(train, rc.fit, rc.oracle_outer_tol, rc.oracle_max_outer);
  out.test_objective = empirical_objective(test.values(), out.result.dictionary.D, rc.fit.enet, rc.fit.eval_solver);

  std::ostringstream trace;
  trace << std::setprecision(17);
  for (double v : out.result.trace) trace << v << '\n';
  write_file(rc.output_dir / "oracle_trace.txt", trace.str());
  const nlohmann::json j = {{"objective", out.result.objective},
                            {"test_objective", out.test_objective},
                            {"outer_iterations", out.result.outer_iterations},
                            {"trace", out.result.trace}};
  write_file(rc.output_dir / "oracle.json", j.dump(2) + "\n");
  save_matrix(rc.output_dir / "oracle_dictionary.dmat", out.result.dictionary.D, MatrixFormat::Binary);
  return out;
}

inline constexpr double kOracleSizeLimit = 1e6;

inline bool oracle_too_large(const RunConfig& rc) {
  Index p = 0;
  Index n = 0;
  if (rc.data.kind == DataSourceKind::Synthetic) {
    p = rc.data.synthetic.p;
    n = rc.data.synthetic.n;
  } else {
    const auto [train, test] = load_dataset(rc.data);
    p = train.p();
    n = train.n() + test.n();
  }
  return double(p) * double(n) > kOracleSizeLimit;
}

// Command entry points. They return process exit codes and report errors on `err`.

inline int cmd_run(const std::filesystem::path& config, const RunOptions& opts = {}, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  RunConfig rc;
  try {
    rc = load_run_config(config);
  } catch (const std::exception& e) {
    err << "somf run: " << e.what() << '\n';
    return 1;
  }
  try {
    const auto summary = run_sweep(rc, opts);
    out << format_summary_table(summary);
  } catch (const std::exception& e) {
    err << "somf run: " << e.what() << '\n';
    return 3;
  }
  return 0;
}

inline int cmd_oracle(const std::filesystem::path& config, bool force, std::ostream& out = std::cout,
                      std::ostream& err = std::cerr) {
  RunConfig rc;
  try {
    rc = load_run_config(config);
    if (!force && !rc.oracle_force && oracle_too_large(rc)) {
      err << "somf oracle: instance has p * n > 1e6; pass --force to run it anyway\n";
      return 2;
    }
  } catch (const std::exception& e) {
    err << "somf oracle: " << e.what() << '\n';
    return 1;
  }
  try {
    const auto outcome = run_oracle(rc);
    out << std::setprecision(12) << "objective " << outcome.result.objective << "\ntest_objective "
        << outcome.test_objective << "\nouter_iterations " << outcome.result.outer_iterations << '\n';
  } catch (const std::exception& e) {
    err << "somf oracle: " << e.what() << '\n';
    return 3;
  }
  return 0;
}

inline int cmd_summarize(const std::filesystem::path& dir, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    out << format_summary_table(write_summary(dir));
  } catch (const std::exception& e) {
    err << "somf summarize: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

/// Writes the configured dataset (all columns, before the split) to `path`.
/// With `truth`, synthetic sources also get <stem>_dict and <stem>_codes.
inline int cmd_gen(const std::filesystem::path& spec, const std::filesystem::path& path, bool truth,
                   std::ostream& err = std::cerr) {
  try {
    const auto rc = load_run_config(spec);
    const auto format = format_from_path(path);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (rc.data.kind == DataSourceKind::Synthetic) {
      const auto data = generate_synthetic(rc.data.synthetic);
      save_matrix(path, data.X.values(), format);
      if (truth) {
        const auto base = path.parent_path() / path.stem();
        save_matrix(base.string() + "_dict" + path.extension().string(), data.D_true, format);
        save_matrix(base.string() + "_codes" + path.extension().string(), data.A_true, format);
      }
    } else if (rc.data.kind == DataSourceKind::Image) {
      save_matrix(path, extract_patches(load_pgm(rc.data.path), rc.data.patch, rc.data.stride).values(), format);
    } else {
      save_matrix(path, load_matrix(rc.data.path, rc.data.format.value_or(format_from_path(rc.data.path))).values(), format);
    }
  } catch (const std::exception& e) {
    err << "somf gen: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace somf
