#include "nlab/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "nlab/errors.hpp"

namespace nlab {

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

LossSnapshot snapshot_losses(const Params& p, const Dataset& ds, std::size_t step) {
  if (!ds.has(LabelSet::clean))
    throw ConfigError("loss snapshot needs clean labels to know which labels are wrong");
  const auto& clean = ds.labels(LabelSet::clean);
  const auto& noisy = ds.labels(LabelSet::noisy);
  LossSnapshot s;
  s.step = step;
  s.losses = per_example_ce(p, ds, LabelSet::noisy);
  s.is_wrong.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) s.is_wrong[i] = clean[i] != noisy[i];
  return s;
}

namespace {

void check_snapshot(const LossSnapshot& s) {
  if (s.losses.empty()) throw SizeError("empty loss snapshot");
  if (s.losses.size() != s.is_wrong.size()) throw ShapeError("snapshot losses/is_wrong mismatch");
  for (double l : s.losses) {
    if (!std::isfinite(l) || l < 0.0) throw DomainError("snapshot losses must be finite and >= 0");
  }
}

}  // namespace

Histogram histogram(const LossSnapshot& snap, std::size_t bins) {
  check_snapshot(snap);
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  const double hi = *std::max_element(snap.losses.begin(), snap.losses.end());
  Histogram h;
  h.edges.resize(bins + 1);
  const double width = hi / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = width * static_cast<double>(b);
  h.edges[bins] = hi;
  h.correct.assign(bins, 0);
  h.wrong.assign(bins, 0);
  for (std::size_t i = 0; i < snap.size(); ++i) {
    std::size_t b = 0;
    if (width > 0.0) {
      b = static_cast<std::size_t>(snap.losses[i] / width);
      b = std::min(b, bins - 1);
    }
    (snap.is_wrong[i] ? h.wrong : h.correct)[b] += 1;
  }
  return h;
}

RocCurve roc(const LossSnapshot& snap) {
  check_snapshot(snap);
  const auto n = snap.size();
  const auto pos = static_cast<std::size_t>(std::count(snap.is_wrong.begin(), snap.is_wrong.end(), true));
  const auto neg = n - pos;
  if (pos == 0 || neg == 0)
    throw DegenerateClassError("ROC needs both wrongly and correctly labelled examples (wrong=" +
                               std::to_string(pos) + ", correct=" + std::to_string(neg) + ")");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return snap.losses[a] > snap.losses[b]; });

  RocCurve r;
  r.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    const double thr = snap.losses[order[i]];
    while (i < n && snap.losses[order[i]] == thr) {
      (snap.is_wrong[order[i]] ? tp : fp) += 1;
      ++i;
    }
    r.points.push_back({thr, static_cast<double>(fp) / static_cast<double>(neg),
                        static_cast<double>(tp) / static_cast<double>(pos)});
  }
  double area = 0.0;
  for (std::size_t i = 1; i < r.points.size(); ++i) {
    const auto& a = r.points[i - 1];
    const auto& b = r.points[i];
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
  }
  r.auc = area;
  return r;
}

std::vector<SeparabilityRow> separability_report(const std::vector<RunSnapshot>& runs,
                                                 std::size_t bins) {
  std::vector<SeparabilityRow> rows;
  rows.reserve(runs.size());
  for (const auto& run : runs) {
    if (run.snapshot.size() != runs.front().snapshot.size() ||
        run.snapshot.is_wrong != runs.front().snapshot.is_wrong)
      throw ConfigError("run '" + run.strategy + "' was evaluated on a different dataset");
    SeparabilityRow row;
    row.strategy = run.strategy;
    row.auc = roc(run.snapshot).auc;
    row.best_val_acc = run.record.best().val_acc;
    row.best_test_acc = run.record.best().test_acc;
    row.final_test_acc = run.record.final().test_acc;
    row.hist = histogram(run.snapshot, bins);
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& a, const auto& b) { return a.strategy < b.strategy; });
  return rows;
}

std::string histogram_csv(const Histogram& h) {
  std::string out = "bin_left,bin_right,count_correct,count_wrong\n";
  for (std::size_t b = 0; b < h.correct.size(); ++b) {
    out += format_double(h.edges[b]) + ',' + format_double(h.edges[b + 1]) + ',' +
           std::to_string(h.correct[b]) + ',' + std::to_string(h.wrong[b]) + '\n';
  }
  return out;
}

std::string roc_csv(const RocCurve& r) {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : r.points)
    out += format_double(p.threshold) + ',' + format_double(p.fpr) + ',' + format_double(p.tpr) + '\n';
  return out;
}

std::string report_csv(const std::vector<SeparabilityRow>& rows) {
  std::string out = "strategy,auc,best_val_acc,best_test_acc,final_test_acc\n";
  for (const auto& r : rows) {
    out += r.strategy + ',' + format_double(r.auc) + ',' + format_double(r.best_val_acc) + ',' +
           format_double(r.best_test_acc) + ',' + format_double(r.final_test_acc) + '\n';
  }
  return out;
}

std::string snapshot_csv(const LossSnapshot& s) {
  std::string out = "# step=" + std::to_string(s.step) + "\nindex,loss,is_wrong\n";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += std::to_string(i) + ',' + format_double(s.losses[i]) + ',' + (s.is_wrong[i] ? "1" : "0") + '\n';
  return out;
}

LossSnapshot parse_snapshot_csv(const std::string& content) {
  LossSnapshot s;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# step=", 0) == 0) {
      s.step = std::stoull(line.substr(7));
      continue;
    }
    if (!header) {
      if (line != "index,loss,is_wrong") throw ParseError("unexpected snapshot header", line_no);
      header = true;
      continue;
    }
    auto c1 = line.find(',');
    auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) throw ParseError("expected 3 columns", line_no);
    const auto loss_str = line.substr(c1 + 1, c2 - c1 - 1);
    double loss = 0.0;
    auto res = std::from_chars(loss_str.data(), loss_str.data() + loss_str.size(), loss);
    if (res.ec != std::errc{} || res.ptr != loss_str.data() + loss_str.size())
      throw ParseError("bad loss value '" + loss_str + "'", line_no);
    const auto flag = line.substr(c2 + 1);
    if (flag != "0" && flag != "1") throw ParseError("is_wrong must be 0 or 1", line_no);
    s.losses.push_back(loss);
    s.is_wrong.push_back(flag == "1");
  }
  if (!header) throw ParseError("missing snapshot header", line_no);
  return s;
}

}  // namespace nlab
