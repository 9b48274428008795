#include <exception>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nlab/errors.hpp"
#include "nlab/experiment.hpp"

namespace {

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const nlab::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return nlab::kExitUsage;
  } catch (const nlab::DegenerateClassError& e) {
    std::cerr << "degenerate class: " << e.what() << "\n";
    return nlab::kExitDegenerate;
  } catch (const nlab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return nlab::kExitError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return nlab::kExitError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return nlab::kExitCrash;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nlab: label-noise experiments for text classifiers"};
  app.require_subcommand(1);

  nlab::InjectArgs inject;
  double level = 0.0;
  std::string matrix, rules;
  auto* inj = app.add_subcommand("inject", "Corrupt the labels of a JSONL dataset");
  inj->add_option("input", inject.input, "Input JSONL with clean_label")->required();
  inj->add_option("-o,--output", inject.output, "Output JSONL")->required();
  inj->add_option("-k,--k", inject.k, "Number of classes")->required();
  inj->add_option("--type", inject.type, "uniform | sflip | matrix | rules")->required();
  auto* level_opt = inj->add_option("--level", level, "Noise level for uniform/sflip");
  auto* matrix_opt = inj->add_option("--matrix", matrix, "Transition matrix CSV");
  auto* rules_opt = inj->add_option("--rules", rules, "Keyword rules JSONL");
  inj->add_option("--seed", inject.seed, "Injection seed");
  inj->add_flag("--drop-abstain", inject.drop_abstain, "Drop examples no rule fires on");

  std::string config;
  nlab::RunOptions run_opts;
  auto* run = app.add_subcommand("run", "Run every strategy x trial of an experiment config");
  run->add_option("config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("-j,--jobs", run_opts.jobs, "Parallel runs")->check(CLI::PositiveNumber);

  std::vector<std::string> report_dirs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "Aggregate completed runs into a CSV table");
  rep->add_option("dirs", report_dirs, "Run directories or sweep roots")->required();
  auto* report_out_opt = rep->add_option("-o,--output", report_out, "Write CSV here instead of stdout");

  std::string run_dir;
  std::size_t bins = 50;
  auto* diag = app.add_subcommand("diagnose", "Write loss histogram and ROC CSVs for a run");
  diag->add_option("run_dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
  diag->add_option("--bins", bins, "Histogram bins")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : nlab::kExitUsage;
  }

  if (*inj) {
    return guarded([&] {
      if (*level_opt) inject.level = level;
      if (*matrix_opt) inject.matrix = matrix;
      if (*rules_opt) inject.rules = rules;
      return nlab::cmd_inject(inject, std::cout);
    });
  }
  if (*run) return guarded([&] { return nlab::cmd_run(config, run_opts, std::cerr); });
  if (*rep) {
    return guarded([&] {
      std::vector<std::filesystem::path> dirs(report_dirs.begin(), report_dirs.end());
      std::optional<std::filesystem::path> out;
      if (*report_out_opt) out = report_out;
      return nlab::cmd_report(dirs, out, std::cout, std::cerr);
    });
  }
  return guarded([&] { return nlab::cmd_diagnose(run_dir, bins, std::cerr); });
}
