#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "nlab/data.hpp"
#include "nlab/model.hpp"
#include "nlab/trainer.hpp"

namespace nlab {

// Per-example plain cross-entropy against the noisy label, with the
// wrong-label indicator taken from the clean labels.
struct LossSnapshot {
  std::vector<double> losses;
  std::vector<bool> is_wrong;
  std::size_t step = 0;

  std::size_t size() const noexcept { return losses.size(); }
};

// Always uses uncorrected CE so that strategies share one loss scale.
LossSnapshot snapshot_losses(const Params& p, const Dataset& ds, std::size_t step = 0);

struct Histogram {
  std::vector<double> edges;  // bins + 1 edges over [0, max loss]
  std::vector<std::size_t> correct;
  std::vector<std::size_t> wrong;
};

inline constexpr std::size_t kDefaultHistogramBins = 50;

Histogram histogram(const LossSnapshot& snap, std::size_t bins = kDefaultHistogramBins);

struct RocPoint {
  double threshold;  // predict "wrong" when loss >= threshold; +inf for the origin
  double fpr;
  double tpr;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

// Higher loss predicts a wrong label. Thresholds sweep the distinct losses in
// descending order; AUC is the trapezoid over the resulting staircase, which
// gives tied scores half credit.
RocCurve roc(const LossSnapshot& snap);

struct SeparabilityRow {
  std::string strategy;
  double auc = 0.0;
  double best_val_acc = 0.0;
  double best_test_acc = 0.0;
  double final_test_acc = 0.0;
  Histogram hist;
};

struct RunSnapshot {
  std::string strategy;
  RunRecord record;
  LossSnapshot snapshot;
};

// One row per run sorted by strategy name. All snapshots must describe the
// same examples (same length and wrong-label mask).
std::vector<SeparabilityRow> separability_report(const std::vector<RunSnapshot>& runs,
                                                 std::size_t bins = kDefaultHistogramBins);

// CSV writers: histogram `bin_left,bin_right,count_correct,count_wrong`,
// ROC `threshold,fpr,tpr`, report `strategy,auc,best_val_acc,best_test_acc,final_test_acc`.
std::string histogram_csv(const Histogram& h);
std::string roc_csv(const RocCurve& r);
std::string report_csv(const std::vector<SeparabilityRow>& rows);

// Snapshot artifact: `index,loss,is_wrong` with a `# step=N` first line.
std::string snapshot_csv(const LossSnapshot& s);
LossSnapshot parse_snapshot_csv(const std::string& content);

// Formats a double with up to 17 significant digits, locale independent.
std::string format_double(double v);

}  // namespace nlab
