// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradcheck.hpp"
#include "nlab/data.hpp"
#include "nlab/diagnostics.hpp"
#include "nlab/experiment.hpp"
#include "nlab/noise.hpp"
#include "nlab/rng.hpp"
#include "nlab/strategies.hpp"
#include "nlab/trainer.hpp"
#include "test_util.hpp"

using namespace nlab;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

const std::vector<double> kLevels{0.0, 0.2, 0.4, 0.45, 0.6, 0.7};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

// ---------------------------------------------------------------------------
// 1

Outcome noise_model_exactness() {
  Outcome o;
  std::size_t checked = 0;
  for (std::size_t k : {2, 3, 4, 10}) {
    for (double eps : kLevels) {
      const auto u = uniform_matrix(k, eps);
      const auto s = single_flip_matrix(k, eps);
      for (std::size_t i = 0; i < k; ++i) {
        double su = 0.0, ss = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          const double want_u = i == j ? 1.0 - eps : eps / static_cast<double>(k - 1);
          const double want_s = i == j ? 1.0 - eps : (j == (i + 1) % k ? eps : 0.0);
          o.pass &= u(i, j) == want_u && s(i, j) == want_s;
          su += u(i, j);
          ss += s(i, j);
          checked += 2;
        }
        o.pass &= std::abs(su - 1.0) <= 1e-9 && std::abs(ss - 1.0) <= 1e-9;
      }
    }
  }
  o.detail = std::to_string(checked) + " entries, k in {2,3,4,10}, 6 levels, uniform + single-flip";
  return o;
}

// ---------------------------------------------------------------------------
// 2

Outcome injection_statistics() {
  Outcome o;
  const std::size_t n = 100000, k = 4;
  Labels clean(n);
  for (std::size_t i = 0; i < n; ++i) clean[i] = i % k;
  double worst_z = 0.0, worst_entry = 0.0;
  std::uint64_t seed = 1;
  for (double eps : kLevels) {
    for (const auto& gen : {uniform_matrix(k, eps), single_flip_matrix(k, eps)}) {
      const auto noisy = inject(clean, gen, seed++);
      const double f = fdr(clean, noisy);
      const double bound = 3.0 * std::sqrt(eps * (1.0 - eps) / static_cast<double>(n));
      o.pass &= std::abs(f - eps) <= bound;
      if (bound > 0.0) worst_z = std::max(worst_z, std::abs(f - eps) / (bound / 3.0));
      const auto est = matrix_from_pairs(clean, noisy, k);
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) worst_entry = std::max(worst_entry, std::abs(est(i, j) - gen(i, j)));
    }
  }
  o.pass &= worst_entry <= 0.01;
  o.detail = "n=1e5, k=4: worst FDR deviation " + fmt("%.2f", worst_z) + " sigma (limit 3), worst matrix entry error " +
             fmt("%.4f", worst_entry) + " (limit 0.01)";
  return o;
}

// ---------------------------------------------------------------------------
// 3

std::vector<double> random_probs(Rng& rng, std::size_t k) {
  std::vector<double> logits(k);
  for (auto& v : logits) v = rng.uniform(-2.0, 2.0);
  return softmax(logits);
}

// NMwR data term from its definition: u = p^T M, clamp, renormalise, CE.
double nmwr_value(const std::vector<double>& p, const LearnedMatrix& m, ClassIndex y) {
  const auto k = m.k();
  std::vector<double> u(k, 0.0);
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < k; ++i) u[j] += p[i] * m(i, j);
  double s = 0.0;
  for (double v : u) s += std::max(v, 1e-12);
  return -std::log(std::max(std::max(u[y], 1e-12) / s, 1e-12));
}

LearnedMatrix random_matrix(Rng& rng, std::size_t k) {
  LearnedMatrix m(k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) m(i, j) = i == j ? rng.uniform(0.5, 1.5) : rng.uniform(-0.05, 0.4);
  return m;
}

Outcome gradient_correctness() {
  Outcome o;
  const int kInstances = 100;
  double worst[5] = {0, 0, 0, 0, 0};
  for (int t = 0; t < kInstances; ++t) {
    const auto arch = t % 2 ? Architecture::mlp : Architecture::linear;
    auto inst = nlab_test::random_instance(10000 + t, arch);
    const auto k = inst.params.k;
    auto b = inst.batch();
    Rng rng(20000 + t);
    const double alpha = rng.uniform(0.0, 0.9);
    std::vector<std::vector<double>> rows(k, std::vector<double>(k));
    for (auto& r : rows) {
      double s = 0.0;
      for (auto& v : r) s += (v = rng.uniform(0.05, 1.0));
      for (auto& v : r) v /= s;
    }
    for (auto& r : rows) {  // exact row sums
      double s = 0.0;
      for (std::size_t j = 0; j + 1 < k; ++j) s += r[j];
      r[k - 1] = 1.0 - s;
    }
    const TransitionMatrix T(rows);
    const auto M = random_matrix(rng, k);
    const double lambda = rng.uniform(0.0, 0.1);

    auto check = [&](int slot, const LossFn& fn, const nlab_test::ExampleLoss& value) {
      auto an = nlab_test::flatten(backward(inst.params, b, fn).dense(inst.params));
      auto num = nlab_test::numeric_gradient(inst.params, b, value);
      worst[slot] = std::max(worst[slot], nlab_test::relative_error(an, num));
    };
    check(0, ce_objective(), [](const std::vector<double>& p, ClassIndex y) { return -std::log(p[y]); });
    check(1, ls_objective(alpha), [&](const std::vector<double>& p, ClassIndex y) {
      double l = 0.0;
      for (std::size_t j = 0; j < p.size(); ++j)
        l -= ((j == y ? 1.0 - alpha : 0.0) + alpha / double(p.size())) * std::log(p[j]);
      return l;
    });
    check(2, nmat_objective(T), [&](const std::vector<double>& p, ClassIndex y) {
      double q = 0.0;
      for (std::size_t i = 0; i < k; ++i) q += p[i] * T(i, y);
      return -std::log(q);
    });
    check(3, nmwr_objective(M, nullptr, b.size()),
          [&](const std::vector<double>& p, ClassIndex y) { return nmwr_value(p, M, y); });

    // dM of the full NMwR batch objective: mean data term + lambda ||M||_F^2.
    LearnedMatrix dm(k);
    backward(inst.params, b, nmwr_objective(M, &dm, b.size()));
    for (std::size_t i = 0; i < dm.data().size(); ++i) dm.data()[i] += 2.0 * lambda * M.data()[i];
    std::vector<std::vector<double>> probs;
    for (const auto& x : inst.xs) probs.push_back(forward(inst.params, x));
    auto objective = [&](const LearnedMatrix& m) {
      double s = 0.0;
      for (std::size_t e = 0; e < probs.size(); ++e) s += nmwr_value(probs[e], m, inst.ys[e]);
      double reg = 0.0;
      for (double v : m.data()) reg += v * v;
      return s / double(probs.size()) + lambda * reg;
    };
    std::vector<double> num;
    for (std::size_t i = 0; i < M.data().size(); ++i) {
      auto up = M, down = M;
      up.data()[i] += nlab_test::kFdStep;
      down.data()[i] -= nlab_test::kFdStep;
      num.push_back((objective(up) - objective(down)) / (2.0 * nlab_test::kFdStep));
    }
    worst[4] = std::max(worst[4], nlab_test::relative_error(dm.data(), num));
  }
  for (double w : worst) o.pass &= w < 1e-5;
  o.detail = "100 instances each, worst relative error CE " + fmt("%.1e", worst[0]) + ", LS " + fmt("%.1e", worst[1]) +
             ", NMat " + fmt("%.1e", worst[2]) + ", NMwR params " + fmt("%.1e", worst[3]) + ", NMwR dM " +
             fmt("%.1e", worst[4]) + " (limit 1e-5)";
  return o;
}

// ---------------------------------------------------------------------------
// 4

Outcome degeneracy_identities() {
  Outcome o;
  auto ds = synth_dataset(4, 700, 0.7, 31, {64});
  auto s = split(ds, {500.0 / 700.0, 100.0 / 700.0, 100.0 / 700.0, 1});
  auto T = uniform_matrix(4, 0.3);
  auto tr = s.train.with_noisy_labels(inject(s.train.labels(LabelSet::clean), T, 2));
  auto va = s.val.with_noisy_labels(inject(s.val.labels(LabelSet::clean), T, 3));
  TrainConfig cfg;
  cfg.model = {Architecture::mlp, 16};
  cfg.max_epochs = 10;
  cfg.eval_every = 10;
  cfg.patience = 1000;
  cfg.seed = 5;

  auto base = train(tr, va, s.test, Vanilla{}, cfg);
  double worst = 0.0;
  bool same_len = true;
  auto compare = [&](const RunRecord& r, std::size_t upto) {
    same_len &= r.entries.size() >= upto;
    for (std::size_t i = 0; i < std::min(upto, r.entries.size()); ++i) {
      const auto &a = base.record.entries[i], &b = r.entries[i];
      same_len &= a.step == b.step;
      worst = std::max({worst, std::abs(a.train_loss - b.train_loss), std::abs(a.val_acc - b.val_acc),
                        std::abs(a.test_acc - b.test_acc)});
    }
  };
  const auto n_eval = base.record.entries.size();
  auto nmat = train(tr, va, s.test, NoiseMatrix{TransitionMatrix::identity(4)}, cfg);
  compare(nmat.record, n_eval);
  same_len &= nmat.record.entries.size() == n_eval;
  auto ls = train(tr, va, s.test, LabelSmoothing{0.0}, cfg);
  compare(ls.record, n_eval);
  same_len &= ls.record.entries.size() == n_eval;

  // NMwR moves M away from the identity after the first update, so the
  // identity holds at step 0 only: first-batch gradient and first step.
  Params p0 = Params::init(cfg.model, tr.dims(), 4, derive_seed(cfg.seed, 1));
  std::vector<std::size_t> first(cfg.batch_size);
  for (std::size_t i = 0; i < first.size(); ++i) first[i] = i;
  auto batch = make_batch(tr, first, LabelSet::noisy);
  auto g_ce = nlab_test::flatten(backward(p0, batch, ce_objective()).dense(p0));
  auto m = LearnedMatrix::identity(4);
  auto g_nm = nlab_test::flatten(backward(p0, batch, nmwr_objective(m, nullptr, batch.size())).dense(p0));
  double worst_grad = 0.0;
  for (std::size_t i = 0; i < g_ce.size(); ++i) worst_grad = std::max(worst_grad, std::abs(g_ce[i] - g_nm[i]));
  auto step1 = cfg;
  step1.eval_every = 1;
  step1.max_epochs = 1;
  auto v1 = train(tr, va, s.test, Vanilla{}, step1);
  auto n1 = train(tr, va, s.test, NoiseMatrixReg{0.0}, step1);
  const auto &a = v1.record.entries.front(), &b = n1.record.entries.front();
  const double worst_nmwr = std::max({worst_grad, std::abs(a.train_loss - b.train_loss),
                                      std::abs(a.val_acc - b.val_acc), std::abs(a.test_acc - b.test_acc)});

  o.pass = same_len && worst <= 1e-12 && worst_nmwr <= 1e-12;
  o.detail = "500 train examples, " + std::to_string(n_eval) + " evaluations: NMat(I)/LS(0) max deviation " +
             fmt("%.1e", worst) + ", NMwR(I, 0) step-0 max deviation " + fmt("%.1e", worst_nmwr) + " (limit 1e-12)";
  return o;
}

// ---------------------------------------------------------------------------
// 5, 8, 9: the uniform-40% memorization fixture

struct MemoFixture {
  Dataset train, val, test;
  TrainConfig cfg;
};

const MemoFixture& memo_fixture() {
  static const MemoFixture f = [] {
    auto s = split(synth_dataset(4, 4000, 0.75, 11, {256}), {0.8, 0.1, 0.1, 3});
    const auto T = uniform_matrix(4, 0.4);
    TrainConfig cfg;
    cfg.model = {Architecture::mlp, 64};
    cfg.lr = 0.1;
    cfg.batch_size = 32;
    cfg.max_epochs = 60;
    cfg.eval_every = 50;
    // The whole trajectory is recorded so that memorization is visible.
    cfg.patience = 1000000;
    cfg.seed = 1;
    return MemoFixture{s.train.with_noisy_labels(inject(s.train.labels(LabelSet::clean), T, 5)),
                       s.val.with_noisy_labels(inject(s.val.labels(LabelSet::clean), T, 6)), s.test, cfg};
  }();
  return f;
}

const TrainResult& memo_vanilla() {
  static const TrainResult r = [] {
    const auto& f = memo_fixture();
    return train(f.train, f.val, f.test, Vanilla{}, f.cfg);
  }();
  return r;
}

Outcome memorization() {
  Outcome o;
  const auto& f = memo_fixture();
  const auto& v = memo_vanilla();
  auto nv = train(f.train, f.val, f.test, NoValidation{}, f.cfg);
  const double gap = v.record.memorization_gap();
  o.pass = gap >= 0.05 && nv.record.reported_test_acc() < v.record.reported_test_acc();
  o.detail = "Vanilla best " + fmt("%.4f", v.record.best().test_acc) + " at step " +
             std::to_string(v.record.best_step()) + ", final " + fmt("%.4f", v.record.final().test_acc) +
             " at step " + std::to_string(v.record.final_step()) + ", gap " + fmt("%.4f", gap) +
             " (limit 0.05); NV " + fmt("%.4f", nv.record.reported_test_acc()) + " at step " +
             std::to_string(nv.record.final_step());
  return o;
}

double train_auc(const TrainResult& r, const Dataset& tr) {
  return roc(snapshot_losses(r.best, tr, r.record.best_step())).auc;
}

Outcome separability_non_improvement() {
  Outcome o;
  const auto& f = memo_fixture();
  const double vanilla = train_auc(memo_vanilla(), f.train);
  const auto& c = f.train.labels(LabelSet::clean);
  const auto& n = f.train.labels(LabelSet::noisy);
  struct Named {
    std::string name;
    std::vector<Strategy> sweep;
  };
  const std::vector<Named> others{
      {"nmat", {NoiseMatrix{matrix_from_pairs(c, n, 4)}}},
      {"nmwr", {NoiseMatrixReg{1e-4}, NoiseMatrixReg{1e-3}, NoiseMatrixReg{1e-2}}},
      {"ct", {CoTeaching{fdr(c, n), 5}}},
      {"ls", {LabelSmoothing{0.1}}},
  };
  double best_other = -1.0;
  std::string detail = "vanilla " + fmt("%.4f", vanilla);
  for (const auto& s : others) {
    std::optional<TrainResult> chosen;
    for (const auto& cand : s.sweep) {
      auto r = train(f.train, f.val, f.test, cand, f.cfg);
      if (!chosen || r.record.best().val_acc > chosen->record.best().val_acc) chosen = std::move(r);
    }
    const double auc = train_auc(*chosen, f.train);
    best_other = std::max(best_other, auc);
    detail += ", " + s.name + " " + fmt("%.4f", auc);
  }
  o.pass = best_other - vanilla <= 0.05;
  o.detail = "train-set AUC at best step: " + detail + "; max - vanilla " + fmt("%.4f", best_other - vanilla) +
             " (limit 0.05)";
  return o;
}

Outcome validation_policy_gap() {
  Outcome o;
  const auto& f = memo_fixture();
  const double memo_gap = memo_vanilla().record.memorization_gap();
  auto cmp = compare_val_policies(f.train, f.val, f.test, Vanilla{}, f.cfg);
  o.pass = cmp.gap < memo_gap;
  o.detail = "noisy-policy " + fmt("%.4f", cmp.noisy_policy_acc) + ", clean-policy " +
             fmt("%.4f", cmp.clean_policy_acc) + ", gap " + fmt("%.4f", cmp.gap) + " < memorization gap " +
             fmt("%.4f", memo_gap);
  return o;
}

// ---------------------------------------------------------------------------
// 6

Outcome auc_oracle() {
  Outcome o;
  Rng rng(606);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng.below(199);
    LossSnapshot s;
    const bool coarse = t % 3 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool wrong = rng.uniform() < 0.35;
      double l = rng.uniform(0.0, 2.0) + (wrong ? rng.uniform(0.0, 1.0) : 0.0);
      if (coarse) l = std::round(l * 3.0) / 3.0;
      s.losses.push_back(l);
      s.is_wrong.push_back(wrong);
    }
    s.is_wrong[0] = true;
    s.is_wrong[1] = false;
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (!s.is_wrong[i] || s.is_wrong[j]) continue;
        pairs += 1.0;
        wins += s.losses[i] > s.losses[j] ? 1.0 : (s.losses[i] == s.losses[j] ? 0.5 : 0.0);
      }
    worst = std::max(worst, std::abs(roc(s).auc - wins / pairs));
  }
  o.pass = worst <= 1e-9;
  o.detail = "50 snapshots of <= 200 examples (one third heavily tied), worst |trapezoid - pairwise| " +
             fmt("%.1e", worst) + " (limit 1e-9)";
  return o;
}

// ---------------------------------------------------------------------------
// 7

// Topic corpus: each text mixes words from its class vocabulary with shared
// filler. A class keyword appears in 30% of the texts of its class; the rule
// set maps it to the next class.
struct KeywordCorpus {
  Dataset train, val, test;
  RuleSet rules;
};

KeywordCorpus keyword_corpus() {
  const std::size_t k = 4, n = 4000, vocab = 40, filler = 60;
  Rng rng(7007);
  std::vector<Example> ex;
  Labels y;
  RuleSet rules;
  for (std::size_t c = 0; c < k; ++c) rules.rules.push_back({"kw" + std::to_string(c), (c + 1) % k});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % k;
    std::string text;
    for (int w = 0; w < 6; ++w) text += "t" + std::to_string(c) + "w" + std::to_string(rng.below(vocab)) + " ";
    for (int w = 0; w < 6; ++w) text += "f" + std::to_string(rng.below(filler)) + " ";
    if (rng.uniform() < 0.3) text += "kw" + std::to_string(c);
    ex.push_back({"k" + std::to_string(i), text, {}});
    y.push_back(c);
  }
  auto ds = featurize(Dataset(std::move(ex), k, y, std::nullopt), 1 << 12);
  auto s = split(ds, {0.8, 0.1, 0.1, 9});
  return {s.train, s.val, s.test, rules};
}

Outcome separability_trend() {
  Outcome o;
  const auto corpus = keyword_corpus();
  const auto rtr = inject_rules(corpus.train, corpus.rules);
  const auto rva = inject_rules(corpus.val, corpus.rules);
  const double rule_fdr = fdr(rtr.labels(LabelSet::clean), rtr.labels(LabelSet::noisy));
  // uniform noise at the realised rule FDR
  const auto T = uniform_matrix(4, rule_fdr);
  const auto utr = corpus.train.with_noisy_labels(inject(corpus.train.labels(LabelSet::clean), T, 71));
  const auto uva = corpus.val.with_noisy_labels(inject(corpus.val.labels(LabelSet::clean), T, 72));
  const double uni_fdr = fdr(utr.labels(LabelSet::clean), utr.labels(LabelSet::noisy));

  TrainConfig cfg;
  cfg.model = {Architecture::mlp, 64};
  cfg.max_epochs = 30;
  cfg.eval_every = 50;
  cfg.patience = 10;
  cfg.seed = 3;
  const auto ru = train(utr, uva, corpus.test, Vanilla{}, cfg);
  const auto rr = train(rtr, rva, corpus.test, Vanilla{}, cfg);
  const double auc_u = train_auc(ru, utr);
  const double auc_r = train_auc(rr, rtr);
  o.pass = std::abs(rule_fdr - 0.3) <= 0.03 && auc_u - auc_r >= 0.05;
  o.detail = "FDR uniform " + fmt("%.4f", uni_fdr) + " / rules " + fmt("%.4f", rule_fdr) + "; AUC uniform " +
             fmt("%.4f", auc_u) + " vs rules " + fmt("%.4f", auc_r) + ", margin " + fmt("%.4f", auc_u - auc_r) +
             " (limit 0.05)";
  return o;
}

// ---------------------------------------------------------------------------
// 10

Outcome determinism() {
  Outcome o;
  const auto dir = nlab_test::scratch_dir("acceptance_determinism");
  const auto cfg_json = json::parse(R"({
    "data": {"synth": {"k": 3, "n": 600, "margin": 0.7, "dims": 32, "seed": 8}},
    "noise": {"type": "sflip", "level": 0.3, "seed": 9},
    "strategies": [{"name": "vanilla"}, {"name": "nv"}, {"name": "nmat"},
                   {"name": "nmwr", "lambda": [0.001, 0.01]}, {"name": "ct"}, {"name": "ls"}],
    "train": {"backbone": "mlp", "hidden": 16, "max_epochs": 6, "eval_every": 10, "patience": 5},
    "trials": 3,
    "seed": 100
  })");
  std::string reports[2];
  for (int rep = 0; rep < 2; ++rep) {
    auto j = cfg_json;
    j["output"] = (dir / ("sweep" + std::to_string(rep))).string();
    std::ostringstream log;
    const int rc = run_experiment(parse_experiment_config(j, dir), {rep == 0 ? 1u : 3u}, log);
    o.pass &= rc == kExitOk;
    std::ostringstream rlog;
    reports[rep] = report_table_csv(aggregate_runs({dir / ("sweep" + std::to_string(rep))}, rlog));
  }
  o.pass &= reports[0] == reports[1] && !reports[0].empty();
  o.detail = "6 strategies x 3 trials, serial vs 3 jobs: report CSVs " +
             std::string(reports[0] == reports[1] ? "byte-identical" : "DIFFER") + " (" +
             std::to_string(reports[0].size()) + " bytes)";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"noise-model exactness", noise_model_exactness},
      {"injection statistics", injection_statistics},
      {"gradient correctness", gradient_correctness},
      {"strategy degeneracy identities", degeneracy_identities},
      {"memorization gap and no-validation baseline", memorization},
      {"AUC equals pairwise Mann-Whitney", auc_oracle},
      {"separability: uniform above rule-based noise", separability_trend},
      {"separability: no strategy raises AUC", separability_non_improvement},
      {"validation-policy gap below memorization gap", validation_policy_gap},
      {"end-to-end determinism", determinism},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += !o.pass;
    std::printf("[%s] %zu. %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
