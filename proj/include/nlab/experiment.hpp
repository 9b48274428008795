#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlab/data.hpp"
#include "nlab/noise.hpp"
#include "nlab/trainer.hpp"

namespace nlab {

namespace fs = std::filesystem;

// Environment variable naming the default output root for `run`.
inline constexpr const char* kOutputRootEnv = "NLAB_OUTPUT_ROOT";

// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDegenerate = 3;
inline constexpr int kExitRunFailed = 4;
inline constexpr int kExitCrash = 70;

struct SynthSpec {
  std::size_t k = 4;
  std::size_t n = 4000;
  double margin = 0.75;
  std::size_t dims = 256;
  std::uint64_t seed = 0;
};

struct DataSpec {
  std::optional<SynthSpec> synth;
  std::optional<fs::path> jsonl;  // single file, split by `split`
  std::optional<fs::path> train, val, test;
  std::size_t k = 0;
  std::size_t feature_dims = kDefaultFeatureDims;
  SplitSpec split;
};

enum class NoiseType { none, given, uniform, sflip, matrix, rules };

struct NoiseSpec {
  NoiseType type = NoiseType::none;
  double level = 0.0;
  std::vector<ClassIndex> flip_map;  // sflip; empty = cyclic
  fs::path matrix;
  fs::path rules;
  bool abstain_to_clean = true;
  std::uint64_t seed = 0;
};

// One strategy entry. Hyperparameters given as a list are swept and the
// value with the best validation accuracy is kept.
struct StrategySpec {
  std::string name;   // vanilla | nv | nmat | nmwr | ct | ls
  std::string label;  // output directory / report row; defaults to name
  std::vector<double> sweep;  // nmwr lambda, ls alpha, ct eps
  std::size_t ramp_epochs = 5;
  std::optional<fs::path> matrix;  // nmat; default: empirical matrix of the training set
};

struct ExperimentConfig {
  DataSpec data;
  NoiseSpec noise;
  std::vector<StrategySpec> strategies;
  TrainConfig train;
  std::size_t trials = 1;
  std::uint64_t seed = 0;  // trial t trains with seed + t
  fs::path output;
};

// Strict: unknown keys anywhere in the tree are rejected. Relative paths are
// resolved against base_dir.
ExperimentConfig parse_experiment_config(const nlohmann::json& j, const fs::path& base_dir);
ExperimentConfig load_experiment_config(const fs::path& path);

struct PreparedData {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Loads or generates data, featurizes, splits, and corrupts train and val.
// The test split keeps clean labels only.
PreparedData prepare_data(const ExperimentConfig& cfg);

struct RunOptions {
  std::size_t jobs = 1;
};

// Runs every strategy x trial; returns kExitOk or kExitRunFailed.
int run_experiment(const ExperimentConfig& cfg, const RunOptions& opts, std::ostream& log);
int cmd_run(const fs::path& config, const RunOptions& opts, std::ostream& log);

struct ReportCell {
  std::string strategy;
  std::size_t trials = 0;
  double mean_acc = 0.0;  // percent
  double std_acc = 0.0;   // sample std, percent
  double mean_gap = 0.0;  // percent
  std::optional<double> mean_auc;
};

// Aggregates completed runs found under the given directories (searched
// recursively). Runs with a RUNNING or FAILED marker are skipped with a warning.
std::vector<ReportCell> aggregate_runs(const std::vector<fs::path>& dirs, std::ostream& log);
std::string report_table_csv(const std::vector<ReportCell>& cells);
// "91.00±1.41"
std::string format_mean_std(double mean, double std);
int cmd_report(const std::vector<fs::path>& dirs, const std::optional<fs::path>& out,
               std::ostream& stdout_stream, std::ostream& log);

// Writes histogram.csv, roc.csv and separability.csv into the run directory.
int cmd_diagnose(const fs::path& run_dir, std::size_t bins, std::ostream& log);

struct InjectArgs {
  fs::path input;
  fs::path output;
  std::size_t k = 0;
  std::string type;
  std::optional<double> level;
  std::optional<fs::path> matrix;
  std::optional<fs::path> rules;
  std::uint64_t seed = 0;
  bool drop_abstain = false;
};

int cmd_inject(const InjectArgs& args, std::ostream& out);

// Marker files inside a run directory.
inline constexpr const char* kRunningMarker = "RUNNING";
inline constexpr const char* kFailedMarker = "FAILED";

}  // namespace nlab
