#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nlab/data.hpp"
#include "nlab/model.hpp"
#include "nlab/strategies.hpp"

namespace nlab {

enum class ValPolicy { noisy, clean };

struct TrainConfig {
  double lr = 0.1;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t eval_every = 50;  // steps
  std::size_t patience = 10;    // evaluations
  std::uint64_t seed = 0;
  ValPolicy val_policy = ValPolicy::noisy;
  // No-Validation stops once the epoch-mean train loss improves by less than
  // this for two consecutive epochs.
  double convergence_tol = 1e-4;
  ModelConfig model;
};

struct EvalEntry {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean strategy loss over batches since the previous evaluation
  double val_acc = 0.0;     // on the label set selected by val_policy
  double test_acc = 0.0;    // clean labels; never read by the stopping rule
};

struct RunRecord {
  std::string strategy;
  std::vector<EvalEntry> entries;
  std::size_t best_index = 0;
  bool scored_at_final = false;  // No-Validation reports the last step

  const EvalEntry& best() const { return entries.at(best_index); }
  const EvalEntry& final() const { return entries.back(); }
  std::size_t best_step() const { return best().step; }
  std::size_t final_step() const { return final().step; }
  double reported_test_acc() const { return scored_at_final ? final().test_acc : best().test_acc; }
  // best - final clean test accuracy
  double memorization_gap() const { return best().test_acc - final().test_acc; }
};

struct TrainResult {
  RunRecord record;
  Params best;
  Params final;
  std::optional<LearnedMatrix> noise_matrix;  // NMwR only, at the final step
};

// Requires noisy labels on train and val (plus clean val labels under the
// clean policy) and clean labels on test.
TrainResult train(const Dataset& train_set, const Dataset& val, const Dataset& test,
                  const Strategy& strategy, const TrainConfig& cfg);

struct PolicyComparison {
  double noisy_policy_acc = 0.0;
  double clean_policy_acc = 0.0;
  double gap = 0.0;  // |clean - noisy|
};

PolicyComparison compare_val_policies(const Dataset& train_set, const Dataset& val,
                                      const Dataset& test, const Strategy& strategy,
                                      TrainConfig cfg);

std::string to_jsonl(const RunRecord& r);

}  // namespace nlab
