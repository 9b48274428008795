#include <doctest.h>

#include <cmath>

#include "nlab/data.hpp"
#include "nlab/errors.hpp"
#include "nlab/noise.hpp"
#include "nlab/trainer.hpp"

using namespace nlab;

namespace {

struct Fixture {
  Dataset train, val, test;
};

Fixture make_fixture(double eps, std::size_t n = 400, double margin = 0.8) {
  auto s = split(synth_dataset(3, n, margin, 4, {32}), {0.7, 0.15, 0.15, 2});
  auto T = uniform_matrix(3, eps);
  return {s.train.with_noisy_labels(inject(s.train.labels(LabelSet::clean), T, 1)),
          s.val.with_noisy_labels(inject(s.val.labels(LabelSet::clean), T, 2)), s.test};
}

TrainConfig small_cfg() {
  TrainConfig c;
  c.lr = 0.2;
  c.batch_size = 16;
  c.max_epochs = 8;
  c.eval_every = 5;
  c.patience = 1000;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("record invariants and best checkpoint reproduction") {
  auto f = make_fixture(0.3);
  for (const Strategy& s : std::vector<Strategy>{Vanilla{}, NoiseMatrix{uniform_matrix(3, 0.3)},
                                                NoiseMatrixReg{1e-3}, CoTeaching{0.3, 2},
                                                LabelSmoothing{0.1}}) {
    auto r = train(f.train, f.val, f.test, s, small_cfg());
    const auto& rec = r.record;
    REQUIRE_FALSE(rec.entries.empty());
    for (std::size_t i = 1; i < rec.entries.size(); ++i) CHECK(rec.entries[i].step > rec.entries[i - 1].step);
    for (const auto& e : rec.entries) CHECK(rec.best().val_acc >= e.val_acc);
    // earliest of the maxima
    for (std::size_t i = 0; i < rec.best_index; ++i) CHECK(rec.entries[i].val_acc < rec.best().val_acc);
    CHECK(std::abs(evaluate(r.best, f.val, LabelSet::noisy) - rec.best().val_acc) <= 1e-12);
    CHECK(std::abs(evaluate(r.best, f.test, LabelSet::clean) - rec.best().test_acc) <= 1e-12);
    CHECK(std::abs(evaluate(r.final, f.test, LabelSet::clean) - rec.final().test_acc) <= 1e-12);
    CHECK(rec.strategy == strategy_name(s));
    CHECK(r.noise_matrix.has_value() == std::holds_alternative<NoiseMatrixReg>(s));
  }
}

TEST_CASE("evaluations happen every eval_every steps plus a final one") {
  auto f = make_fixture(0.2);
  auto cfg = small_cfg();
  cfg.max_epochs = 3;
  cfg.eval_every = 7;
  auto r = train(f.train, f.val, f.test, Vanilla{}, cfg);
  const std::size_t steps_per_epoch = (f.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = steps_per_epoch * 3;
  const auto& e = r.record.entries;
  for (std::size_t i = 0; i + 1 < e.size(); ++i) CHECK(e[i].step == (i + 1) * 7);
  CHECK(r.record.final_step() == total);
  CHECK(e.size() == total / 7 + (total % 7 ? 1 : 0));
}

TEST_CASE("patience stops after the configured number of flat evaluations") {
  auto f = make_fixture(0.3);
  auto cfg = small_cfg();
  cfg.lr = 0.0;  // val accuracy never changes
  cfg.patience = 1;
  auto r = train(f.train, f.val, f.test, Vanilla{}, cfg);
  CHECK(r.record.entries.size() == 2);
  CHECK(r.record.final_step() == 2 * cfg.eval_every);
  CHECK(r.record.best_index == 0);

  cfg.patience = 3;
  CHECK(train(f.train, f.val, f.test, Vanilla{}, cfg).record.entries.size() == 4);
}

TEST_CASE("same config and seed give identical records") {
  auto f = make_fixture(0.4);
  auto cfg = small_cfg();
  for (const Strategy& s : std::vector<Strategy>{Vanilla{}, CoTeaching{0.4, 2}, NoiseMatrixReg{1e-2}}) {
    auto a = train(f.train, f.val, f.test, s, cfg);
    auto b = train(f.train, f.val, f.test, s, cfg);
    CHECK(to_jsonl(a.record) == to_jsonl(b.record));
    CHECK(a.best == b.best);
    CHECK(a.final == b.final);
  }
  cfg.seed = 4;
  CHECK(to_jsonl(train(f.train, f.val, f.test, Vanilla{}, cfg).record) !=
        to_jsonl(train(f.train, f.val, f.test, Vanilla{}, small_cfg()).record));
}

TEST_CASE("no-validation runs to convergence and reports the last step") {
  auto f = make_fixture(0.0);
  auto cfg = small_cfg();
  cfg.max_epochs = 400;
  cfg.eval_every = 20;
  cfg.patience = 1;
  cfg.convergence_tol = 1e-3;
  auto r = train(f.train, f.val, f.test, NoValidation{}, cfg);
  CHECK(r.record.scored_at_final);
  CHECK(r.record.reported_test_acc() == r.record.final().test_acc);
  const std::size_t steps_per_epoch = (f.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  // converged well before max_epochs, and patience did not stop it
  CHECK(r.record.final_step() < 400 * steps_per_epoch);
  CHECK(r.record.entries.size() > 2);
  CHECK(r.record.final().epoch + 1 >= 3);
}

TEST_CASE("zero noise on a separable set leaves no memorization gap") {
  auto s = split(synth_dataset(3, 600, 1.0, 9, {32}), {0.7, 0.15, 0.15, 1});
  auto tr = s.train.with_noisy_labels(s.train.labels(LabelSet::clean));
  auto va = s.val.with_noisy_labels(s.val.labels(LabelSet::clean));
  auto cfg = small_cfg();
  cfg.max_epochs = 20;
  auto r = train(tr, va, s.test, Vanilla{}, cfg);
  CHECK(std::abs(r.record.memorization_gap()) <= 0.01);
}

TEST_CASE("validation policy comparison") {
  auto f = make_fixture(0.0);
  auto cmp = compare_val_policies(f.train, f.val, f.test, Vanilla{}, small_cfg());
  CHECK(cmp.gap == 0.0);
  CHECK(cmp.noisy_policy_acc == cmp.clean_policy_acc);

  auto g = make_fixture(0.4);
  auto c2 = compare_val_policies(g.train, g.val, g.test, Vanilla{}, small_cfg());
  CHECK(c2.gap == std::abs(c2.clean_policy_acc - c2.noisy_policy_acc));

  auto no_clean = Dataset(g.val.examples(), 3, std::nullopt, g.val.labels(LabelSet::noisy), g.val.dims());
  CHECK_THROWS_AS(compare_val_policies(g.train, no_clean, g.test, Vanilla{}, small_cfg()), ConfigError);
}

TEST_CASE("input checks") {
  auto f = make_fixture(0.2);
  auto cfg = small_cfg();
  auto no_noisy = Dataset(f.train.examples(), 3, f.train.labels(LabelSet::clean), std::nullopt, f.train.dims());
  CHECK_THROWS_AS(train(no_noisy, f.val, f.test, Vanilla{}, cfg), ConfigError);
  auto test_noisy_only = Dataset(f.test.examples(), 3, std::nullopt, f.test.labels(LabelSet::clean), f.test.dims());
  CHECK_THROWS_AS(train(f.train, f.val, test_noisy_only, Vanilla{}, cfg), ConfigError);
  cfg.eval_every = 100000;
  CHECK_THROWS_AS(train(f.train, f.val, f.test, Vanilla{}, cfg), ConfigError);
  cfg = small_cfg();
  cfg.batch_size = 0;
  CHECK_THROWS_AS(train(f.train, f.val, f.test, Vanilla{}, cfg), ConfigError);
  CHECK_THROWS_AS(train(f.train, f.val, f.test, NoiseMatrix{uniform_matrix(4, 0.1)}, small_cfg()), ShapeError);
}

TEST_CASE("run record jsonl has one line per evaluation") {
  auto f = make_fixture(0.2);
  auto r = train(f.train, f.val, f.test, Vanilla{}, small_cfg());
  auto text = to_jsonl(r.record);
  CHECK(std::count(text.begin(), text.end(), '\n') == long(r.record.entries.size()));
  CHECK(text.rfind("{\"step\":", 0) == 0);
}
