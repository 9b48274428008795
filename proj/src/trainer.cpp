#include "nlab/trainer.hpp"

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "nlab/errors.hpp"
#include "nlab/rng.hpp"

namespace nlab {

namespace {

// Seed streams derived from the run seed.
constexpr std::uint64_t kInitStreamA = 1;
constexpr std::uint64_t kInitStreamB = 2;
constexpr std::uint64_t kShuffleStreamBase = 1000;

// Owns the trainable state for one strategy and performs one update per batch.
class Learner {
 public:
  Learner(const Strategy& s, const TrainConfig& cfg, std::size_t dims, std::size_t k)
      : strategy_(s), cfg_(cfg) {
    net_a_ = Params::init(cfg.model, dims, k, derive_seed(cfg.seed, kInitStreamA));
    if (std::holds_alternative<CoTeaching>(s))
      net_b_ = Params::init(cfg.model, dims, k, derive_seed(cfg.seed, kInitStreamB));
    if (std::holds_alternative<NoiseMatrixReg>(s)) m_ = LearnedMatrix::identity(k);
    if (auto* ls = std::get_if<LabelSmoothing>(&s)) objective_ = ls_objective(ls->alpha);
    else if (auto* nm = std::get_if<NoiseMatrix>(&s)) objective_ = nmat_objective(nm->t);
    else objective_ = ce_objective();
  }

  const Params& params() const noexcept { return net_a_; }
  const std::optional<LearnedMatrix>& noise_matrix() const noexcept { return m_; }

  double step(const Dataset& ds, std::span<const std::size_t> idx, std::size_t epoch) {
    if (auto* reg = std::get_if<NoiseMatrixReg>(&strategy_)) return step_nmwr(ds, idx, reg->lambda);
    if (auto* ct = std::get_if<CoTeaching>(&strategy_)) return step_coteach(ds, idx, epoch, *ct);
    auto batch = make_batch(ds, idx, LabelSet::noisy);
    return sgd_step(net_a_, batch, cfg_.lr, objective_);
  }

 private:
  double step_nmwr(const Dataset& ds, std::span<const std::size_t> idx, double lambda) {
    auto batch = make_batch(ds, idx, LabelSet::noisy);
    LearnedMatrix dm(m_->k());
    auto g = backward(net_a_, batch, nmwr_objective(*m_, &dm, batch.size()));
    const double loss = g.mean_loss() + lambda * m_->frobenius_sq();
    for (std::size_t i = 0; i < dm.data().size(); ++i) {
      const double grad = dm.data()[i] + 2.0 * lambda * m_->data()[i];
      if (!std::isfinite(grad)) throw NumericError("non-finite gradient", "noise_matrix");
      dm.data()[i] = grad;
    }
    g.apply(net_a_, cfg_.lr);
    for (std::size_t i = 0; i < dm.data().size(); ++i) m_->data()[i] -= cfg_.lr * dm.data()[i];
    return loss;
  }

  double step_coteach(const Dataset& ds, std::span<const std::size_t> idx, std::size_t epoch,
                      const CoTeaching& ct) {
    const auto& noisy = ds.labels(LabelSet::noisy);
    std::vector<double> la(idx.size()), lb(idx.size());
    for (std::size_t s = 0; s < idx.size(); ++s) {
      const auto& x = ds[idx[s]].features;
      la[s] = ce_loss(forward(net_a_, x), noisy[idx[s]]);
      lb[s] = ce_loss(forward(*net_b_, x), noisy[idx[s]]);
    }
    const auto sel = coteach_select(la, lb, keep_fraction(epoch, ct.eps, ct.ramp_epochs));
    auto pick = [&](const std::vector<std::size_t>& local) {
      std::vector<std::size_t> global;
      global.reserve(local.size());
      for (auto s : local) global.push_back(idx[s]);
      return global;
    };
    const auto ia = pick(sel.for_a);
    const auto ib = pick(sel.for_b);
    // Both selections use the losses from before either update.
    const double loss = sgd_step(net_a_, make_batch(ds, ia, LabelSet::noisy), cfg_.lr, objective_);
    sgd_step(*net_b_, make_batch(ds, ib, LabelSet::noisy), cfg_.lr, objective_);
    return loss;
  }

  const Strategy& strategy_;
  const TrainConfig& cfg_;
  Params net_a_;
  std::optional<Params> net_b_;
  std::optional<LearnedMatrix> m_;
  LossFn objective_;
};

void check_inputs(const Dataset& tr, const Dataset& val, const Dataset& test,
                  const TrainConfig& cfg) {
  if (!tr.has(LabelSet::noisy)) throw ConfigError("training set needs noisy labels");
  if (!val.has(LabelSet::noisy)) throw ConfigError("validation set needs noisy labels");
  if (cfg.val_policy == ValPolicy::clean && !val.has(LabelSet::clean))
    throw ConfigError("clean validation policy needs clean validation labels");
  if (!test.has(LabelSet::clean)) throw ConfigError("test set needs clean labels");
  if (tr.empty() || val.empty() || test.empty()) throw SizeError("train/val/test must be non-empty");
  if (tr.dims() == 0) throw ConfigError("training set is not featurized");
  if (val.dims() != tr.dims() || test.dims() != tr.dims())
    throw ShapeError("train/val/test feature dims differ");
  if (val.k() != tr.k() || test.k() != tr.k()) throw ShapeError("train/val/test class counts differ");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("lr must be a finite non-negative real");
  if (cfg.batch_size == 0 || cfg.max_epochs == 0 || cfg.eval_every == 0 || cfg.patience == 0)
    throw ConfigError("batch_size, max_epochs, eval_every and patience must be positive");
  if (!(cfg.convergence_tol > 0.0)) throw ConfigError("convergence_tol must be positive");
  const auto steps_per_epoch = (tr.size() + cfg.batch_size - 1) / cfg.batch_size;
  if (cfg.eval_every > steps_per_epoch * cfg.max_epochs)
    throw ConfigError("eval_every exceeds the total number of training steps");
}

}  // namespace

TrainResult train(const Dataset& tr, const Dataset& val, const Dataset& test,
                  const Strategy& strategy, const TrainConfig& cfg) {
  check_inputs(tr, val, test, cfg);
  validate(strategy, tr.k());

  const bool no_validation = std::holds_alternative<NoValidation>(strategy);
  const LabelSet val_labels = cfg.val_policy == ValPolicy::clean ? LabelSet::clean : LabelSet::noisy;

  Learner learner(strategy, cfg, tr.dims(), tr.k());
  TrainResult result{RunRecord{strategy_name(strategy), {}, 0, no_validation},
                     learner.params(), learner.params(), std::nullopt};

  std::size_t step = 0;
  double window_loss = 0.0;
  std::size_t window_batches = 0;
  double best_val = -1.0;
  std::size_t since_best = 0;
  bool stop = false;

  auto record_eval = [&](std::size_t epoch) {
    EvalEntry e;
    e.step = step;
    e.epoch = epoch;
    e.train_loss = window_batches ? window_loss / static_cast<double>(window_batches) : 0.0;
    e.val_acc = evaluate(learner.params(), val, val_labels);
    e.test_acc = evaluate(learner.params(), test, LabelSet::clean);
    window_loss = 0.0;
    window_batches = 0;
    result.record.entries.push_back(e);
    // Ties keep the earlier step.
    if (e.val_acc > best_val) {
      best_val = e.val_acc;
      result.record.best_index = result.record.entries.size() - 1;
      result.best = learner.params();
      since_best = 0;
    } else {
      ++since_best;
    }
    if (!no_validation && since_best >= cfg.patience) stop = true;
  };

  std::vector<std::size_t> order(tr.size());
  double prev_epoch_loss = 0.0;
  std::size_t flat_epochs = 0;
  std::size_t epoch = 0;
  for (; epoch < cfg.max_epochs && !stop; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, kShuffleStreamBase + epoch));
    rng.shuffle(order.begin(), order.end());

    double epoch_loss = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t start = 0; start < order.size() && !stop; start += cfg.batch_size) {
      const auto len = std::min(cfg.batch_size, order.size() - start);
      const double loss = learner.step(tr, std::span(order).subspan(start, len), epoch);
      ++step;
      window_loss += loss;
      ++window_batches;
      epoch_loss += loss;
      ++epoch_batches;
      if (step % cfg.eval_every == 0) record_eval(epoch);
    }
    if (stop) break;

    if (no_validation) {
      const double mean = epoch_loss / static_cast<double>(epoch_batches);
      if (epoch > 0 && prev_epoch_loss - mean < cfg.convergence_tol) {
        if (++flat_epochs >= 2) stop = true;
      } else {
        flat_epochs = 0;
      }
      prev_epoch_loss = mean;
    }
  }
  if (result.record.entries.empty() || result.record.entries.back().step != step) {
    record_eval(std::min(epoch, cfg.max_epochs - 1));
  }

  result.final = learner.params();
  result.noise_matrix = learner.noise_matrix();
  return result;
}

PolicyComparison compare_val_policies(const Dataset& tr, const Dataset& val, const Dataset& test,
                                      const Strategy& strategy, TrainConfig cfg) {
  if (!val.has(LabelSet::clean) || !val.has(LabelSet::noisy))
    throw ConfigError("validation set needs both clean and noisy labels");
  PolicyComparison out;
  cfg.val_policy = ValPolicy::noisy;
  out.noisy_policy_acc = train(tr, val, test, strategy, cfg).record.best().test_acc;
  cfg.val_policy = ValPolicy::clean;
  out.clean_policy_acc = train(tr, val, test, strategy, cfg).record.best().test_acc;
  out.gap = std::abs(out.clean_policy_acc - out.noisy_policy_acc);
  return out;
}

std::string to_jsonl(const RunRecord& r) {
  std::string out;
  for (const auto& e : r.entries) {
    nlohmann::ordered_json j;
    j["step"] = e.step;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_acc"] = e.val_acc;
    j["test_acc"] = e.test_acc;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace nlab
