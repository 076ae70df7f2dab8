#pragma once

// Run configuration files.
//
// Plain text, one `key = value` per line, grouped under `[section]` headers.
// Sections nest with dots (`[data.synthetic]`). `#` and `;` start comments.
// Lists are comma separated. Every accepted key is listed in `config_schema()`;
// unknown keys are rejected.

#include "somf/core.hpp"
#include "somf/data_io.hpp"
#include "somf/driver.hpp"
#include "somf/estimators.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace somf {

struct SchemaEntry {
  std::string_view key;
  std::string_view type;
  std::string_view fallback;
  std::string_view help;
};

/// Every key accepted in a run configuration, with its type and default.
inline const std::vector<SchemaEntry>& config_schema() {
  static const std::vector<SchemaEntry> schema = {
      {"run.name", "string", "run", "label used in output file names"},
      {"run.output_dir", "path", "somf_out", "directory receiving metrics and summaries"},
      {"run.seed", "uint", "0", "seed of every random stream"},
      {"run.checkpoint_every", "int", "0", "iterations between checkpoints (0: about 10 per epoch)"},
      {"run.parallel", "bool", "false", "overlap dictionary and B-bar complement updates"},
      {"run.parallel_runs", "bool", "false", "execute the runs of a sweep concurrently"},
      {"data.source", "enum", "synthetic", "synthetic | file | image"},
      {"data.path", "path", "", "matrix file when source = file"},
      {"data.format", "enum", "auto", "binary | csv | auto (from extension)"},
      {"data.test_fraction", "real", "0.1", "held-out column fraction, in (0, 1)"},
      {"data.split_seed", "uint", "run.seed", "seed of the train/test split"},
      {"data.center", "bool", "false", "subtract the mean of each column"},
      {"data.normalize", "bool", "false", "scale each column to unit l2 norm"},
      {"data.synthetic.p", "int", "64", "features"},
      {"data.synthetic.n", "int", "500", "samples (before the split)"},
      {"data.synthetic.true_k", "int", "8", "rank of the generating model"},
      {"data.synthetic.noise_sigma", "real", "0.05", "Gaussian noise level"},
      {"data.synthetic.dict_sparsity", "real", "0", "expected fraction of zeros per true atom"},
      {"data.synthetic.code_sparsity", "real", "0", "expected fraction of zeros per true code"},
      {"data.synthetic.nonnegative", "bool", "false", "nonnegative factors and noise"},
      {"data.synthetic.seed", "uint", "run.seed", "generator seed"},
      {"data.synthetic.row_repeat", "int", "1", "duplicate each underlying row this many times"},
      {"data.synthetic.mu", "real", "fit.mu", "constraint mix the true atoms satisfy"},
      {"data.image.path", "path", "", "binary PGM (P5) image when source = image"},
      {"data.image.patch_rows", "int", "8", "patch height"},
      {"data.image.patch_cols", "int", "8", "patch width"},
      {"data.image.stride_rows", "int", "1", "vertical stride"},
      {"data.image.stride_cols", "int", "1", "horizontal stride"},
      {"fit.k", "int", "8", "number of atoms"},
      {"fit.lambda", "real", "0.1", "regularization strength"},
      {"fit.nu", "real", "0", "code penalty mix (0: lasso, 1: ridge)"},
      {"fit.mu", "real", "1", "atom constraint mix (0: l1 ball, 1: l2 ball)"},
      {"fit.positive_code", "bool", "false", "nonnegative codes"},
      {"fit.positive_dict", "bool", "false", "nonnegative dictionary"},
      {"fit.batch_size", "int", "0", "mini-batch size (0: k)"},
      {"fit.u", "real", "0.917", "surrogate weight exponent"},
      {"fit.v", "real", "0.751", "estimator weight exponent"},
      {"fit.epochs", "real", "5", "passes over the training columns"},
      {"fit.max_iters", "int", "0", "iteration budget overriding epochs when > 0"},
      {"fit.exact_codes", "bool", "false", "exact codes, subsampling only in the dictionary update"},
      {"fit.code_tol", "real", "1e-4", "in-loop coordinate descent tolerance"},
      {"fit.code_max_iter", "int", "100", "in-loop coordinate descent sweeps"},
      {"fit.eval_tol", "real", "1e-8", "test objective solver tolerance"},
      {"fit.eval_max_iter", "int", "10000", "test objective solver sweeps"},
      {"fit.reinit_dead_atoms", "bool", "false", "replace atoms that receive no weight"},
      {"sweep.reductions", "real list", "1", "reduction factors; r = 1 runs plain OMF once"},
      {"sweep.variants", "enum list", "averaged", "masked | averaged | exact_gram"},
      {"oracle.outer_tol", "real", "1e-6", "relative decrease stopping the alternation"},
      {"oracle.max_outer", "int", "1000", "maximum alternations"},
      {"oracle.force", "bool", "false", "allow instances with p * n > 1e6"},
  };
  return schema;
}

/// Flat `section.key -> value` view of a configuration file.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text) {
    KeyValueConfig cfg;
    std::string section;
    std::size_t line_no = 0;
    while (!text.empty()) {
      const auto eol = text.find('\n');
      std::string_view line = text.substr(0, eol);
      text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
      ++line_no;
      if (const auto hash = line.find_first_of("#;"); hash != std::string_view::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const std::string where = "config line " + std::to_string(line_no) + ": ";
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(where + "unterminated section header");
        section = std::string(detail::trim(line.substr(1, line.size() - 2)));
        if (section.empty()) throw ConfigError(where + "empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
      const auto key = detail::trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError(where + "missing key");
      const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
      if (cfg.values_.count(full) != 0) throw ConfigError(where + "duplicate key '" + full + "'");
      cfg.values_[full] = std::string(detail::trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  /// Rejects keys absent from the schema.
  void check_against_schema() const {
    for (const auto& [key, value] : values_) {
      const auto& schema = config_schema();
      const bool known = std::any_of(schema.begin(), schema.end(), [&](const SchemaEntry& e) { return e.key == key; });
      if (!known) throw ConfigError("unknown configuration key '" + key + "'");
    }
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_real(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : to_real(key, it->second);
  }

  long get_int(const std::string& key, long fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    long value = 0;
    const auto& s = it->second;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("'" + key + "' expects an integer, got '" + s + "'");
    return value;
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::uint64_t value = 0;
    const auto& s = it->second;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("'" + key + "' expects a nonnegative integer, got '" + s + "'");
    }
    return value;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& s = it->second;
    if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
    if (s == "false" || s == "no" || s == "off" || s == "0") return false;
    throw ConfigError("'" + key + "' expects a boolean, got '" + s + "'");
  }

  std::vector<std::string> get_list(const std::string& key, const std::string& fallback) const {
    std::vector<std::string> items;
    std::string_view rest = values_.count(key) != 0 ? std::string_view(values_.at(key)) : std::string_view(fallback);
    while (!rest.empty()) {
      const auto comma = rest.find(',');
      const auto item = detail::trim(rest.substr(0, comma));
      if (!item.empty()) items.emplace_back(item);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    return items;
  }

  static double to_real(const std::string& key, const std::string& s) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("'" + key + "' expects a number, got '" + s + "'");
    return value;
  }

 private:
  std::map<std::string, std::string> values_;
};

enum class DataSourceKind { Synthetic, File, Image };

struct DataSourceConfig {
  DataSourceKind kind = DataSourceKind::Synthetic;
  std::filesystem::path path;
  std::optional<MatrixFormat> format;  // empty: from extension
  SyntheticSpec synthetic{};
  Extent patch{8, 8};
  Extent stride{1, 1};
  double test_fraction = 0.1;
  std::uint64_t split_seed = 0;
  bool center = false;
  bool normalize = false;
};

struct RunConfig {
  std::string name = "run";
  std::filesystem::path output_dir = "somf_out";
  DataSourceConfig data{};
  FitConfig fit{};
  long checkpoint_every = 0;
  bool parallel_runs = false;
  std::vector<double> reductions{1.0};
  std::vector<EstimatorVariant> variants{EstimatorVariant::Averaged};
  double oracle_outer_tol = 1e-6;
  int oracle_max_outer = 1000;
  bool oracle_force = false;
};

/// Builds a RunConfig; relative paths resolve against `base_dir`.
inline RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir = {}) {
  const auto kv = KeyValueConfig::parse(text);
  kv.check_against_schema();

  auto resolve = [&](const std::string& raw) {
    std::filesystem::path path(raw);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };

  RunConfig rc;
  rc.name = kv.get_string("run.name", "run");
  rc.output_dir = resolve(kv.get_string("run.output_dir", "somf_out"));
  const std::uint64_t seed = kv.get_uint("run.seed", 0);
  rc.checkpoint_every = kv.get_int("run.checkpoint_every", 0);
  rc.fit.parallel = kv.get_bool("run.parallel", false);
  rc.parallel_runs = kv.get_bool("run.parallel_runs", false);

  auto& fit = rc.fit;
  fit.seed = seed;
  fit.k = kv.get_int("fit.k", 8);
  fit.enet.lambda = kv.get_real("fit.lambda", 0.1);
  fit.enet.nu = kv.get_real("fit.nu", 0.0);
  fit.enet.mu = kv.get_real("fit.mu", 1.0);
  fit.enet.positive_code = kv.get_bool("fit.positive_code", false);
  fit.enet.positive_dict = kv.get_bool("fit.positive_dict", false);
  fit.batch_size = kv.get_int("fit.batch_size", 0);
  fit.u = kv.get_real("fit.u", 0.917);
  fit.v = kv.get_real("fit.v", 0.751);
  fit.epochs = kv.get_real("fit.epochs", 5.0);
  fit.max_iters = kv.get_int("fit.max_iters", 0);
  fit.exact_codes = kv.get_bool("fit.exact_codes", false);
  fit.code_solver.tol = kv.get_real("fit.code_tol", 1e-4);
  fit.code_solver.max_iter = static_cast<int>(kv.get_int("fit.code_max_iter", 100));
  fit.eval_solver.tol = kv.get_real("fit.eval_tol", 1e-8);
  fit.eval_solver.max_iter = static_cast<int>(kv.get_int("fit.eval_max_iter", 10000));
  fit.reinit_dead_atoms = kv.get_bool("fit.reinit_dead_atoms", false);

  auto& data = rc.data;
  const std::string source = kv.get_string("data.source", "synthetic");
  if (source == "synthetic") {
    data.kind = DataSourceKind::Synthetic;
  } else if (source == "file") {
    data.kind = DataSourceKind::File;
  } else if (source == "image") {
    data.kind = DataSourceKind::Image;
  } else {
    throw ConfigError("data.source must be synthetic, file or image");
  }
  const std::string format = kv.get_string("data.format", "auto");
  if (format != "auto") data.format = parse_matrix_format(format);
  data.test_fraction = kv.get_real("data.test_fraction", 0.1);
  data.split_seed = kv.get_uint("data.split_seed", seed);
  data.center = kv.get_bool("data.center", false);
  data.normalize = kv.get_bool("data.normalize", false);
  if (data.kind == DataSourceKind::File) {
    if (!kv.has("data.path")) throw ConfigError("data.path is required when data.source = file");
    data.path = resolve(kv.get_string("data.path", ""));
  }
  if (data.kind == DataSourceKind::Image) {
    if (!kv.has("data.image.path")) throw ConfigError("data.image.path is required when data.source = image");
    data.path = resolve(kv.get_string("data.image.path", ""));
    data.patch = {kv.get_int("data.image.patch_rows", 8), kv.get_int("data.image.patch_cols", 8)};
    data.stride = {kv.get_int("data.image.stride_rows", 1), kv.get_int("data.image.stride_cols", 1)};
  }
  auto& syn = data.synthetic;
  syn.p = kv.get_int("data.synthetic.p", 64);
  syn.n = kv.get_int("data.synthetic.n", 500);
  syn.true_k = kv.get_int("data.synthetic.true_k", 8);
  syn.noise_sigma = kv.get_real("data.synthetic.noise_sigma", 0.05);
  syn.dict_sparsity = kv.get_real("data.synthetic.dict_sparsity", 0.0);
  syn.code_sparsity = kv.get_real("data.synthetic.code_sparsity", 0.0);
  syn.nonnegative = kv.get_bool("data.synthetic.nonnegative", false);
  syn.seed = kv.get_uint("data.synthetic.seed", seed);
  syn.row_repeat = kv.get_int("data.synthetic.row_repeat", 1);
  syn.mu = kv.get_real("data.synthetic.mu", fit.enet.mu);
  if (data.kind == DataSourceKind::Synthetic) syn.validate();

  rc.reductions.clear();
  for (const auto& item : kv.get_list("sweep.reductions", "1")) rc.reductions.push_back(KeyValueConfig::to_real("sweep.reductions", item));
  rc.variants.clear();
  for (const auto& item : kv.get_list("sweep.variants", "averaged")) rc.variants.push_back(parse_estimator_variant(item));
  if (rc.reductions.empty() || rc.variants.empty()) throw ConfigError("sweep needs at least one reduction and one variant");
  for (double r : rc.reductions) {
    if (!(r >= 1.0)) throw ConfigError("sweep.reductions entries must be >= 1");
  }

  rc.oracle_outer_tol = kv.get_real("oracle.outer_tol", 1e-6);
  rc.oracle_max_outer = static_cast<int>(kv.get_int("oracle.max_outer", 1000));
  rc.oracle_force = kv.get_bool("oracle.force", false);

  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) throw ConfigError("data.test_fraction must lie in (0, 1)");
  (void)fit.validate();
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), path.parent_path());
}

/// Materializes the configured dataset and splits it into (train, test).
inline std::pair<DatasetMatrix, DatasetMatrix> load_dataset(const DataSourceConfig& data) {
  auto prepare = [&](DatasetMatrix X) {
    if (data.center || data.normalize) X = normalize_columns(X, data.center, data.normalize);
    return train_test_split(X, data.test_fraction, data.split_seed);
  };
  switch (data.kind) {
    case DataSourceKind::Synthetic:
      return prepare(generate_synthetic(data.synthetic).X);
    case DataSourceKind::File:
      return prepare(load_matrix(data.path, data.format.value_or(format_from_path(data.path))));
    case DataSourceKind::Image:
      return prepare(extract_patches(load_pgm(data.path), data.patch, data.stride));
  }
  throw ConfigError("unknown data source");
}

}  // namespace somf
