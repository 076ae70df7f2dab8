// somf: sweeps, oracle runs and summaries from configuration files.

#include "somf/bench.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <string>

int main(int argc, char** argv) {
  CLI::App app{"Online matrix factorization with subsampling: benchmark driver"};
  app.require_subcommand(1);

  std::string config;
  bool parallel = false;
  bool parallel_runs = false;
  std::string output_dir;
  auto* run = app.add_subcommand("run", "run every (r, variant) combination of a config file");
  run->add_option("config", config, "configuration file")->required()->check(CLI::ExistingFile);
  run->add_flag("--parallel", parallel, "overlap the dictionary update with the B-bar complement update");
  run->add_flag("--parallel-runs", parallel_runs, "execute the runs of the sweep concurrently");
  run->add_option("-o,--output", output_dir, "override run.output_dir");

  bool force = false;
  auto* oracle = app.add_subcommand("oracle", "full-batch alternate minimization on the configured data");
  oracle->add_option("config", config, "configuration file")->required()->check(CLI::ExistingFile);
  oracle->add_flag("--force", force, "allow instances with p * n > 1e6");

  std::string dir;
  auto* summarize = app.add_subcommand("summarize", "time-to-1% table of a metrics directory");
  summarize->add_option("dir", dir, "directory of *.jsonl metric files")->required()->check(CLI::ExistingDirectory);

  std::string spec;
  std::string out_path;
  bool truth = false;
  auto* gen = app.add_subcommand("gen", "write the configured dataset to a matrix file");
  gen->add_option("spec", spec, "configuration file with a [data] section")->required()->check(CLI::ExistingFile);
  gen->add_option("-o,--output", out_path, "output matrix (.dmat or .csv)")->required();
  gen->add_flag("--truth", truth, "also write the generating dictionary and codes");

  CLI11_PARSE(app, argc, argv);

  if (*run) {
    somf::RunOptions opts;
    if (parallel) opts.parallel = true;
    if (parallel_runs) opts.parallel_runs = true;
    if (!output_dir.empty()) opts.output_dir = output_dir;
    return somf::cmd_run(config, opts);
  }
  if (*oracle) return somf::cmd_oracle(config, force);
  if (*summarize) return somf::cmd_summarize(dir);
  if (*gen) return somf::cmd_gen(spec, out_path, truth);
  return 1;
}
