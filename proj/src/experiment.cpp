#include "nlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "nlab/diagnostics.hpp"
#include "nlab/errors.hpp"
#include "nlab/rng.hpp"

namespace nlab {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// config parsing

namespace {

void check_keys(const json& obj, std::initializer_list<std::string_view> allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

double get_double(const json& obj, const char* key, double def, const std::string& where) {
  if (!obj.contains(key)) return def;
  if (!obj[key].is_number()) throw ConfigError(where + "." + key + " must be a number");
  return obj[key].get<double>();
}

std::uint64_t get_u64(const json& obj, const char* key, std::uint64_t def, const std::string& where) {
  if (!obj.contains(key)) return def;
  const auto& v = obj[key];
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    throw ConfigError(where + "." + key + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

std::string get_string(const json& obj, const char* key, const std::string& def,
                       const std::string& where) {
  if (!obj.contains(key)) return def;
  if (!obj[key].is_string()) throw ConfigError(where + "." + key + " must be a string");
  return obj[key].get<std::string>();
}

fs::path get_path(const json& obj, const char* key, const fs::path& base, const std::string& where) {
  fs::path p = get_string(obj, key, "", where);
  if (p.empty()) throw ConfigError(where + "." + key + " must be a non-empty path");
  return p.is_absolute() ? p : base / p;
}

std::vector<double> get_sweep(const json& obj, const char* key, std::vector<double> def,
                              const std::string& where) {
  if (!obj.contains(key)) return def;
  const auto& v = obj[key];
  if (v.is_number()) return {v.get<double>()};
  if (!v.is_array() || v.empty())
    throw ConfigError(where + "." + key + " must be a number or a non-empty list of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError(where + "." + key + " must contain numbers only");
    out.push_back(x.get<double>());
  }
  return out;
}

SynthSpec parse_synth(const json& j) {
  check_keys(j, {"k", "n", "margin", "dims", "seed"}, "data.synth");
  SynthSpec s;
  s.k = get_u64(j, "k", s.k, "data.synth");
  s.n = get_u64(j, "n", s.n, "data.synth");
  s.margin = get_double(j, "margin", s.margin, "data.synth");
  s.dims = get_u64(j, "dims", s.dims, "data.synth");
  s.seed = get_u64(j, "seed", s.seed, "data.synth");
  return s;
}

DataSpec parse_data(const json& j, const fs::path& base) {
  check_keys(j, {"synth", "jsonl", "train", "val", "test", "k", "feature_dims", "split"}, "data");
  DataSpec d;
  if (j.contains("synth")) d.synth = parse_synth(j["synth"]);
  if (j.contains("jsonl")) d.jsonl = get_path(j, "jsonl", base, "data");
  for (auto [key, slot] : {std::pair{"train", &d.train}, std::pair{"val", &d.val},
                           std::pair{"test", &d.test}}) {
    if (j.contains(key)) *slot = get_path(j, key, base, "data");
  }
  const bool files = d.train || d.val || d.test;
  const int sources = int(d.synth.has_value()) + int(d.jsonl.has_value()) + int(files);
  if (sources != 1)
    throw ConfigError("data needs exactly one of: synth, jsonl, or train/val/test files");
  if (files && !(d.train && d.val && d.test))
    throw ConfigError("data.train, data.val and data.test must be given together");
  d.k = get_u64(j, "k", d.synth ? d.synth->k : 0, "data");
  if (d.synth && d.k != d.synth->k) throw ConfigError("data.k disagrees with data.synth.k");
  if (d.k < 2) throw ConfigError("data.k must be >= 2");
  d.feature_dims = get_u64(j, "feature_dims", d.feature_dims, "data");
  if (j.contains("split")) {
    const auto& s = j["split"];
    check_keys(s, {"train", "val", "test", "seed"}, "data.split");
    d.split.train = get_double(s, "train", d.split.train, "data.split");
    d.split.val = get_double(s, "val", d.split.val, "data.split");
    d.split.test = get_double(s, "test", d.split.test, "data.split");
    d.split.seed = get_u64(s, "seed", d.split.seed, "data.split");
  }
  return d;
}

NoiseSpec parse_noise(const json& j, const fs::path& base) {
  check_keys(j, {"type", "level", "flip_map", "matrix", "rules", "abstain_to_clean", "seed"}, "noise");
  NoiseSpec n;
  const auto type = get_string(j, "type", "none", "noise");
  static const std::map<std::string, NoiseType> types = {
      {"none", NoiseType::none},       {"given", NoiseType::given},
      {"uniform", NoiseType::uniform}, {"sflip", NoiseType::sflip},
      {"matrix", NoiseType::matrix},   {"rules", NoiseType::rules}};
  auto it = types.find(type);
  if (it == types.end()) throw ConfigError("unknown noise.type '" + type + "'");
  n.type = it->second;
  n.seed = get_u64(j, "seed", 0, "noise");

  const bool parametric = n.type == NoiseType::uniform || n.type == NoiseType::sflip;
  if (parametric != j.contains("level"))
    throw ConfigError("noise.level is required for uniform/sflip noise and not allowed otherwise");
  if ((n.type == NoiseType::matrix) != j.contains("matrix"))
    throw ConfigError("noise.matrix is required for matrix noise and not allowed otherwise");
  if ((n.type == NoiseType::rules) != j.contains("rules"))
    throw ConfigError("noise.rules is required for rules noise and not allowed otherwise");
  if (j.contains("flip_map") && n.type != NoiseType::sflip)
    throw ConfigError("noise.flip_map only applies to sflip noise");
  if (j.contains("abstain_to_clean") && n.type != NoiseType::rules)
    throw ConfigError("noise.abstain_to_clean only applies to rules noise");

  n.level = get_double(j, "level", 0.0, "noise");
  if (j.contains("flip_map")) {
    if (!j["flip_map"].is_array()) throw ConfigError("noise.flip_map must be a list");
    for (const auto& v : j["flip_map"]) {
      if (!v.is_number_unsigned()) throw ConfigError("noise.flip_map entries must be class indices");
      n.flip_map.push_back(v.get<ClassIndex>());
    }
  }
  if (n.type == NoiseType::matrix) n.matrix = get_path(j, "matrix", base, "noise");
  if (n.type == NoiseType::rules) n.rules = get_path(j, "rules", base, "noise");
  if (j.contains("abstain_to_clean")) {
    if (!j["abstain_to_clean"].is_boolean()) throw ConfigError("noise.abstain_to_clean must be a boolean");
    n.abstain_to_clean = j["abstain_to_clean"].get<bool>();
  }
  return n;
}

StrategySpec parse_strategy(const json& j, const fs::path& base, std::size_t index) {
  const std::string where = "strategies[" + std::to_string(index) + "]";
  if (!j.is_object() || !j.contains("name")) throw ConfigError(where + " needs a name");
  StrategySpec s;
  s.name = get_string(j, "name", "", where);
  s.label = get_string(j, "label", s.name, where);
  if (s.label.empty() || s.label.find_first_of("/\\,") != std::string::npos || s.label == "." ||
      s.label == "..")
    throw ConfigError(where + ".label is not a valid directory name");
  if (s.name == "vanilla" || s.name == "nv") {
    check_keys(j, {"name", "label"}, where);
  } else if (s.name == "nmat") {
    check_keys(j, {"name", "label", "matrix"}, where);
    if (j.contains("matrix")) s.matrix = get_path(j, "matrix", base, where);
  } else if (s.name == "nmwr") {
    check_keys(j, {"name", "label", "lambda"}, where);
    s.sweep = get_sweep(j, "lambda", {1e-4, 1e-3, 1e-2}, where);
  } else if (s.name == "ls") {
    check_keys(j, {"name", "label", "alpha"}, where);
    s.sweep = get_sweep(j, "alpha", {0.1}, where);
  } else if (s.name == "ct") {
    check_keys(j, {"name", "label", "eps", "ramp_epochs"}, where);
    s.sweep = get_sweep(j, "eps", {}, where);
    s.ramp_epochs = get_u64(j, "ramp_epochs", s.ramp_epochs, where);
  } else {
    throw ConfigError(where + ": unknown strategy '" + s.name + "'");
  }
  return s;
}

TrainConfig parse_train(const json& j) {
  check_keys(j, {"lr", "batch_size", "max_epochs", "eval_every", "patience", "val_policy",
                 "convergence_tol", "backbone", "hidden"},
             "train");
  TrainConfig t;
  t.lr = get_double(j, "lr", t.lr, "train");
  t.batch_size = get_u64(j, "batch_size", t.batch_size, "train");
  t.max_epochs = get_u64(j, "max_epochs", t.max_epochs, "train");
  t.eval_every = get_u64(j, "eval_every", t.eval_every, "train");
  t.patience = get_u64(j, "patience", t.patience, "train");
  t.convergence_tol = get_double(j, "convergence_tol", t.convergence_tol, "train");
  const auto policy = get_string(j, "val_policy", "noisy", "train");
  if (policy == "noisy") t.val_policy = ValPolicy::noisy;
  else if (policy == "clean") t.val_policy = ValPolicy::clean;
  else throw ConfigError("train.val_policy must be 'noisy' or 'clean'");
  const auto backbone = get_string(j, "backbone", "linear", "train");
  if (backbone == "linear") t.model.arch = Architecture::linear;
  else if (backbone == "mlp") t.model.arch = Architecture::mlp;
  else throw ConfigError("train.backbone must be 'linear' or 'mlp'");
  t.model.hidden = get_u64(j, "hidden", t.model.hidden, "train");
  return t;
}

fs::path default_output(const std::string& stem) {
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / stem;
  return fs::path("runs") / stem;
}

}  // namespace

ExperimentConfig parse_experiment_config(const json& j, const fs::path& base_dir) {
  check_keys(j, {"data", "noise", "strategies", "train", "trials", "seed", "output"}, "config");
  if (!j.contains("data")) throw ConfigError("config needs a data section");
  if (!j.contains("strategies") || !j["strategies"].is_array() || j["strategies"].empty())
    throw ConfigError("config needs a non-empty strategies list");
  ExperimentConfig c;
  c.data = parse_data(j["data"], base_dir);
  c.noise = j.contains("noise") ? parse_noise(j["noise"], base_dir) : NoiseSpec{};
  std::set<std::string> labels;
  for (std::size_t i = 0; i < j["strategies"].size(); ++i) {
    auto s = parse_strategy(j["strategies"][i], base_dir, i);
    if (!labels.insert(s.label).second)
      throw ConfigError("duplicate strategy label '" + s.label + "'; set distinct labels");
    c.strategies.push_back(std::move(s));
  }
  c.train = j.contains("train") ? parse_train(j["train"]) : TrainConfig{};
  c.trials = get_u64(j, "trials", 1, "config");
  if (c.trials == 0) throw ConfigError("trials must be >= 1");
  c.seed = get_u64(j, "seed", 0, "config");
  if (j.contains("output")) {
    fs::path out = get_string(j, "output", "", "config");
    if (out.empty()) throw ConfigError("output must be a non-empty path");
    if (out.is_relative()) {
      const char* root = std::getenv(kOutputRootEnv);
      out = (root && *root ? fs::path(root) : base_dir) / out;
    }
    c.output = out;
  } else {
    c.output = default_output("experiment");
  }

  auto require_file = [](const fs::path& p) {
    if (!fs::exists(p)) throw ConfigError("referenced file does not exist: " + p.string());
  };
  for (const auto& p : {c.data.jsonl, c.data.train, c.data.val, c.data.test})
    if (p) require_file(*p);
  if (c.noise.type == NoiseType::matrix) require_file(c.noise.matrix);
  if (c.noise.type == NoiseType::rules) require_file(c.noise.rules);
  for (const auto& s : c.strategies)
    if (s.matrix) require_file(*s.matrix);
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  auto cfg = parse_experiment_config(j, fs::absolute(path).parent_path());
  if (!j.contains("output")) cfg.output = default_output(path.stem().string());
  return cfg;
}

// ---------------------------------------------------------------------------
// data preparation

namespace {

TransitionMatrix noise_matrix_for(const NoiseSpec& n, std::size_t k) {
  switch (n.type) {
    case NoiseType::uniform:
      return uniform_matrix(k, n.level);
    case NoiseType::sflip:
      return n.flip_map.empty() ? single_flip_matrix(k, n.level)
                                : single_flip_matrix(k, n.level, n.flip_map);
    case NoiseType::matrix: {
      auto t = read_matrix_csv(n.matrix);
      if (t.k() != k) throw ShapeError("noise matrix size does not match k");
      return t;
    }
    default:
      throw ConfigError("noise type has no transition matrix");
  }
}

Dataset corrupt(const Dataset& ds, const NoiseSpec& n, std::uint64_t stream) {
  switch (n.type) {
    case NoiseType::none:
      return ds.with_noisy_labels(ds.labels(LabelSet::clean));
    case NoiseType::given:
      ds.labels(LabelSet::noisy);
      return ds;
    case NoiseType::rules:
      return inject_rules(ds, read_rules_jsonl(n.rules, ds.k(), n.abstain_to_clean));
    default:
      return ds.with_noisy_labels(
          inject(ds.labels(LabelSet::clean), noise_matrix_for(n, ds.k()), derive_seed(n.seed, stream)));
  }
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  std::optional<Splits> s;
  if (d.synth) {
    s = split(synth_dataset(d.synth->k, d.synth->n, d.synth->margin, d.synth->seed, {d.synth->dims}),
              d.split);
  } else if (d.jsonl) {
    s = split(featurize(load_jsonl(*d.jsonl, d.k), d.feature_dims), d.split);
  } else {
    s = Splits{featurize(load_jsonl(*d.train, d.k), d.feature_dims),
               featurize(load_jsonl(*d.val, d.k), d.feature_dims),
               featurize(load_jsonl(*d.test, d.k), d.feature_dims)};
  }
  if (cfg.noise.type != NoiseType::given) {
    if (!s->train.has(LabelSet::clean) || !s->val.has(LabelSet::clean))
      throw ConfigError("noise injection needs clean labels on train and val");
  }
  s->test.labels(LabelSet::clean);
  return PreparedData{corrupt(s->train, cfg.noise, 0), corrupt(s->val, cfg.noise, 1), s->test};
}

// ---------------------------------------------------------------------------
// run

namespace {

struct Candidate {
  Strategy strategy;
  ojson hyper;
};

std::vector<Candidate> candidates_for(const StrategySpec& spec, const PreparedData& data) {
  std::vector<Candidate> out;
  const auto k = data.train.k();
  if (spec.name == "vanilla") {
    out.push_back({Vanilla{}, ojson::object()});
  } else if (spec.name == "nv") {
    out.push_back({NoValidation{}, ojson::object()});
  } else if (spec.name == "nmat") {
    // Default: the ground-truth matrix counted on the training set.
    auto t = spec.matrix ? read_matrix_csv(*spec.matrix)
                         : matrix_from_pairs(data.train.labels(LabelSet::clean),
                                             data.train.labels(LabelSet::noisy), k);
    ojson h;
    h["matrix"] = spec.matrix ? spec.matrix->string() : std::string("train_pairs");
    out.push_back({NoiseMatrix{std::move(t)}, h});
  } else if (spec.name == "nmwr") {
    for (double l : spec.sweep) out.push_back({NoiseMatrixReg{l}, ojson{{"lambda", l}}});
  } else if (spec.name == "ls") {
    for (double a : spec.sweep) out.push_back({LabelSmoothing{a}, ojson{{"alpha", a}}});
  } else if (spec.name == "ct") {
    auto eps = spec.sweep;
    if (eps.empty()) {
      if (!data.train.has(LabelSet::clean))
        throw ConfigError("co-teaching needs clean training labels or an explicit eps");
      eps.push_back(fdr(data.train.labels(LabelSet::clean), data.train.labels(LabelSet::noisy)));
    }
    for (double e : eps)
      out.push_back({CoTeaching{e, spec.ramp_epochs}, ojson{{"eps", e}, {"ramp_epochs", spec.ramp_epochs}}});
  }
  return out;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ArtifactError("cannot write " + p.string());
  out << s;
  if (!out) throw ArtifactError("write failed for " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void run_one(const ExperimentConfig& cfg, const PreparedData& data, const StrategySpec& spec,
             std::size_t trial, const fs::path& dir) {
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed + trial;

  std::optional<TrainResult> best;
  ojson best_hyper;
  for (auto& cand : candidates_for(spec, data)) {
    auto r = train(data.train, data.val, data.test, cand.strategy, tc);
    if (!best || r.record.best().val_acc > best->record.best().val_acc) {
      best = std::move(r);
      best_hyper = cand.hyper;
    }
  }

  const auto& rec = best->record;
  write_text(dir / "record.jsonl", to_jsonl(rec));
  save_checkpoint(best->best, dir / "best.ckpt");
  save_checkpoint(best->final, dir / "final.ckpt");

  ojson summary;
  summary["strategy"] = spec.name;
  summary["label"] = spec.label;
  summary["trial"] = trial;
  summary["seed"] = tc.seed;
  summary["hyperparameters"] = best_hyper;
  summary["best_step"] = rec.best_step();
  summary["final_step"] = rec.final_step();
  summary["best_val_acc"] = rec.best().val_acc;
  summary["best_test_acc"] = rec.best().test_acc;
  summary["final_test_acc"] = rec.final().test_acc;
  summary["reported_test_acc"] = rec.reported_test_acc();
  summary["scored_at"] = rec.scored_at_final ? "final" : "best";
  summary["memorization_gap"] = rec.memorization_gap();

  // Separability is measured on the training set, where the wrong-label mask
  // is known by construction.
  summary["snapshot_split"] = "train";
  summary["snapshot_step"] = rec.best_step();
  if (data.train.has(LabelSet::clean)) {
    auto snap = snapshot_losses(best->best, data.train, rec.best_step());
    write_text(dir / "snapshot.csv", snapshot_csv(snap));
    try {
      summary["auc"] = roc(snap).auc;
    } catch (const DegenerateClassError&) {
      summary["auc"] = nullptr;
    }
  } else {
    summary["auc"] = nullptr;
  }
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace

int run_experiment(const ExperimentConfig& cfg, const RunOptions& opts, std::ostream& log) {
  const auto data = prepare_data(cfg);
  fs::create_directories(cfg.output);

  {
    ojson info;
    info["train_size"] = data.train.size();
    info["val_size"] = data.val.size();
    info["test_size"] = data.test.size();
    if (data.train.has(LabelSet::clean)) {
      const auto& c = data.train.labels(LabelSet::clean);
      const auto& n = data.train.labels(LabelSet::noisy);
      info["train_fdr"] = fdr(c, n);
      info["train_diag_dominant"] = diag_dominant(matrix_from_pairs(c, n, data.train.k()));
    }
    if (data.val.has(LabelSet::clean))
      info["val_fdr"] = fdr(data.val.labels(LabelSet::clean), data.val.labels(LabelSet::noisy));
    write_text(cfg.output / "data_summary.json", info.dump(2) + "\n");
  }

  struct Task {
    const StrategySpec* spec;
    std::size_t trial;
    fs::path dir;
  };
  std::vector<Task> tasks;
  for (const auto& s : cfg.strategies)
    for (std::size_t t = 0; t < cfg.trials; ++t)
      tasks.push_back({&s, t, cfg.output / s.label / ("trial_" + std::to_string(t))});

  std::mutex log_mu;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> failures{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const auto& task = tasks[i];
      fs::create_directories(task.dir);
      fs::remove(task.dir / kFailedMarker);
      write_text(task.dir / kRunningMarker, "");
      try {
        run_one(cfg, data, *task.spec, task.trial, task.dir);
        fs::remove(task.dir / kRunningMarker);
        std::lock_guard lock(log_mu);
        log << "done " << task.spec->label << " trial " << task.trial << "\n";
      } catch (const std::exception& e) {
        ++failures;
        try {
          write_text(task.dir / kFailedMarker, std::string(e.what()) + "\n");
          fs::remove(task.dir / kRunningMarker);
        } catch (...) {
        }
        std::lock_guard lock(log_mu);
        log << "FAILED " << task.spec->label << " trial " << task.trial << ": " << e.what() << "\n";
      }
    }
  };
  const auto jobs = std::max<std::size_t>(1, std::min(opts.jobs, tasks.size()));
  std::vector<std::jthread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  pool.clear();
  return failures ? kExitRunFailed : kExitOk;
}

int cmd_run(const fs::path& config, const RunOptions& opts, std::ostream& log) {
  return run_experiment(load_experiment_config(config), opts, log);
}

// ---------------------------------------------------------------------------
// report

std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f±%.2f", mean, std);
  return buf;
}

namespace {

bool is_run_dir(const fs::path& p) {
  return fs::exists(p / "summary.json") || fs::exists(p / kRunningMarker) ||
         fs::exists(p / kFailedMarker);
}

}  // namespace

std::vector<ReportCell> aggregate_runs(const std::vector<fs::path>& dirs, std::ostream& log) {
  std::set<fs::path> runs;
  for (const auto& d : dirs) {
    if (!fs::is_directory(d)) throw ArtifactError("not a directory: " + d.string());
    if (is_run_dir(d)) runs.insert(d);
    for (const auto& entry : fs::recursive_directory_iterator(d)) {
      if (entry.is_directory() && is_run_dir(entry.path())) runs.insert(entry.path());
    }
  }

  struct Acc {
    std::vector<double> acc, gap, auc;
  };
  std::map<std::string, Acc> groups;
  for (const auto& r : runs) {
    if (fs::exists(r / kRunningMarker) || fs::exists(r / kFailedMarker) ||
        !fs::exists(r / "summary.json")) {
      log << "warning: skipping incomplete run " << r.string() << "\n";
      continue;
    }
    json s;
    try {
      s = json::parse(read_text(r / "summary.json"));
    } catch (const json::parse_error& e) {
      throw ArtifactError("bad summary in " + r.string() + ": " + e.what());
    }
    auto& g = groups[s.at("label").get<std::string>()];
    g.acc.push_back(s.at("reported_test_acc").get<double>());
    g.gap.push_back(s.at("memorization_gap").get<double>());
    if (!s.at("auc").is_null()) g.auc.push_back(s.at("auc").get<double>());
  }
  if (groups.empty()) throw ArtifactError("no completed runs to report");

  std::vector<ReportCell> cells;
  for (const auto& [label, g] : groups) {
    ReportCell c;
    c.strategy = label;
    c.trials = g.acc.size();
    const double n = static_cast<double>(g.acc.size());
    double sum = 0.0;
    for (double a : g.acc) sum += a;
    c.mean_acc = 100.0 * sum / n;
    if (g.acc.size() > 1) {
      double ss = 0.0;
      for (double a : g.acc) ss += (100.0 * a - c.mean_acc) * (100.0 * a - c.mean_acc);
      c.std_acc = std::sqrt(ss / (n - 1.0));
    } else {
      log << "warning: " << label << " has a single trial; std reported as 0.00\n";
    }
    double gs = 0.0;
    for (double v : g.gap) gs += v;
    c.mean_gap = 100.0 * gs / n;
    if (!g.auc.empty()) {
      double as = 0.0;
      for (double v : g.auc) as += v;
      c.mean_auc = as / static_cast<double>(g.auc.size());
    }
    cells.push_back(c);
  }
  return cells;
}

std::string report_table_csv(const std::vector<ReportCell>& cells) {
  std::string out = "strategy,trials,test_acc,memorization_gap,auc\n";
  char buf[64];
  for (const auto& c : cells) {
    out += c.strategy + ',' + std::to_string(c.trials) + ',' + format_mean_std(c.mean_acc, c.std_acc) + ',';
    std::snprintf(buf, sizeof(buf), "%.2f", c.mean_gap);
    out += buf;
    out += ',';
    if (c.mean_auc) {
      std::snprintf(buf, sizeof(buf), "%.4f", *c.mean_auc);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

int cmd_report(const std::vector<fs::path>& dirs, const std::optional<fs::path>& out,
               std::ostream& stdout_stream, std::ostream& log) {
  const auto csv = report_table_csv(aggregate_runs(dirs, log));
  if (out) write_text(*out, csv);
  else stdout_stream << csv;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// diagnose

int cmd_diagnose(const fs::path& run_dir, std::size_t bins, std::ostream& log) {
  const auto snap_path = run_dir / "snapshot.csv";
  if (!fs::exists(snap_path)) throw ArtifactError("no loss snapshot in " + run_dir.string());
  if (!fs::exists(run_dir / "summary.json")) throw ArtifactError("no summary in " + run_dir.string());
  const auto snap = parse_snapshot_csv(read_text(snap_path));
  const auto summary = json::parse(read_text(run_dir / "summary.json"));

  write_text(run_dir / "histogram.csv", histogram_csv(histogram(snap, bins)));
  const auto curve = roc(snap);
  write_text(run_dir / "roc.csv", roc_csv(curve));

  SeparabilityRow row;
  row.strategy = summary.at("label").get<std::string>();
  row.auc = curve.auc;
  row.best_val_acc = summary.at("best_val_acc").get<double>();
  row.best_test_acc = summary.at("best_test_acc").get<double>();
  row.final_test_acc = summary.at("final_test_acc").get<double>();
  write_text(run_dir / "separability.csv", report_csv({row}));
  log << "auc " << format_double(curve.auc) << " (" << snap.losses.size() << " examples, step "
      << snap.step << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// inject

int cmd_inject(const InjectArgs& a, std::ostream& out) {
  static const std::set<std::string> types = {"uniform", "sflip", "matrix", "rules"};
  if (!types.contains(a.type))
    throw UsageError("--type must be one of uniform, sflip, matrix, rules");
  const bool parametric = a.type == "uniform" || a.type == "sflip";
  if (parametric && (!a.level || a.matrix || a.rules))
    throw UsageError("--type " + a.type + " takes --level and no --matrix/--rules");
  if (a.type == "matrix" && (!a.matrix || a.level || a.rules))
    throw UsageError("--type matrix takes --matrix and no --level/--rules");
  if (a.type == "rules" && (!a.rules || a.level || a.matrix))
    throw UsageError("--type rules takes --rules and no --level/--matrix");
  if (a.drop_abstain && a.type != "rules") throw UsageError("--drop-abstain only applies to rules");
  if (a.k < 2) throw UsageError("--k must be >= 2");

  const auto ds = load_jsonl(a.input, a.k);
  const auto& clean = ds.labels(LabelSet::clean);

  Dataset noisy = ds;
  std::optional<TransitionMatrix> generator;
  if (a.type == "rules") {
    noisy = inject_rules(ds, read_rules_jsonl(*a.rules, a.k, !a.drop_abstain));
  } else {
    if (a.type == "uniform") generator = uniform_matrix(a.k, *a.level);
    else if (a.type == "sflip") generator = single_flip_matrix(a.k, *a.level);
    else {
      generator = read_matrix_csv(*a.matrix);
      if (generator->k() != a.k) throw ShapeError("matrix size does not match --k");
    }
    noisy = ds.with_noisy_labels(inject(clean, *generator, a.seed));
  }
  write_jsonl(noisy, a.output);

  const auto& nc = noisy.labels(LabelSet::clean);
  const auto& nn = noisy.labels(LabelSet::noisy);
  // Parametric noise is judged on its generator; rule noise on the counted matrix.
  const auto effective = generator ? *generator : matrix_from_pairs(nc, nn, a.k);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", fdr(nc, nn));
  out << "examples " << noisy.size() << "\n";
  out << "fdr " << buf << "\n";
  out << "diag_dominant " << (diag_dominant(effective) ? "true" : "false") << "\n";
  out << "matrix " << (generator ? "generator" : "empirical") << "\n" << to_csv(effective);
  return kExitOk;
}

}  // namespace nlab
