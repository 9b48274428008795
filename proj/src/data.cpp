#include "nlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "nlab/errors.hpp"
#include "nlab/rng.hpp"

namespace nlab {

using json = nlohmann::json;

std::string_view to_string(LabelSet s) noexcept {
  return s == LabelSet::clean ? "clean" : "noisy";
}

double squared_norm(const SparseVector& v) noexcept {
  double s = 0.0;
  for (const auto& e : v) s += e.value * e.value;
  return s;
}

namespace {

void check_labels(const Labels& labels, std::size_t n, std::size_t k,
                  const std::vector<Example>& examples, std::string_view which) {
  if (labels.size() != n) {
    throw ShapeError(std::string(which) + " label count " + std::to_string(labels.size()) +
                     " != example count " + std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= k) {
      throw DomainError(std::string(which) + " label " + std::to_string(labels[i]) +
                        " out of range for k=" + std::to_string(k) + " (id " +
                        examples[i].id + ")");
    }
  }
}

}  // namespace

Dataset::Dataset(std::vector<Example> examples, std::size_t k, std::optional<Labels> clean,
                 std::optional<Labels> noisy, std::size_t dims)
    : examples_(std::move(examples)),
      k_(k),
      clean_(std::move(clean)),
      noisy_(std::move(noisy)),
      dims_(dims) {
  if (k_ < 2) throw DomainError("class count must be >= 2, got " + std::to_string(k_));
  if (!clean_ && !noisy_) throw ConfigError("dataset needs at least one label sequence");
  if (clean_) check_labels(*clean_, examples_.size(), k_, examples_, "clean");
  if (noisy_) check_labels(*noisy_, examples_.size(), k_, examples_, "noisy");

  std::unordered_set<std::string_view> seen;
  seen.reserve(examples_.size());
  for (const auto& ex : examples_) {
    if (!seen.insert(ex.id).second) throw DomainError("duplicate example id '" + ex.id + "'");
    if (dims_ > 0) {
      for (const auto& e : ex.features) {
        if (e.index >= dims_) {
          throw ShapeError("feature index " + std::to_string(e.index) + " >= dims " +
                           std::to_string(dims_) + " (id " + ex.id + ")");
        }
      }
    }
  }
}

bool Dataset::has(LabelSet s) const noexcept {
  return s == LabelSet::clean ? clean_.has_value() : noisy_.has_value();
}

const Labels& Dataset::labels(LabelSet s) const {
  const auto& seq = s == LabelSet::clean ? clean_ : noisy_;
  if (!seq) throw ConfigError("dataset has no " + std::string(to_string(s)) + " labels");
  return *seq;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  std::vector<Example> ex;
  ex.reserve(indices.size());
  std::optional<Labels> c, nz;
  if (clean_) c.emplace().reserve(indices.size());
  if (noisy_) nz.emplace().reserve(indices.size());
  for (auto i : indices) {
    ex.push_back(examples_.at(i));
    if (c) c->push_back((*clean_)[i]);
    if (nz) nz->push_back((*noisy_)[i]);
  }
  return Dataset(std::move(ex), k_, std::move(c), std::move(nz), dims_);
}

Dataset Dataset::with_noisy_labels(Labels noisy) const {
  return Dataset(examples_, k_, clean_, std::move(noisy), dims_);
}

Dataset Dataset::with_features(std::vector<SparseVector> features, std::size_t dims) const {
  if (features.size() != examples_.size()) throw ShapeError("feature count != example count");
  auto ex = examples_;
  for (std::size_t i = 0; i < ex.size(); ++i) ex[i].features = std::move(features[i]);
  return Dataset(std::move(ex), k_, clean_, noisy_, dims);
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

std::optional<ClassIndex> read_label(const json& rec, const char* key, std::size_t line) {
  auto it = rec.find(key);
  if (it == rec.end() || it->is_null()) return std::nullopt;
  if (!it->is_number_integer()) throw ParseError(std::string(key) + " must be an integer", line);
  auto v = it->get<std::int64_t>();
  if (v < 0) throw ParseError(std::string(key) + " must be non-negative", line);
  return static_cast<ClassIndex>(v);
}

}  // namespace

Dataset parse_jsonl(std::string_view content, std::size_t k) {
  std::vector<Example> examples;
  Labels clean, noisy;
  std::size_t n_clean = 0, n_noisy = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    auto line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!rec.is_object()) throw ParseError("record is not an object", line_no);
    if (!rec.contains("id") || !rec["id"].is_string())
      throw ParseError("missing string field 'id'", line_no);
    if (!rec.contains("text") || !rec["text"].is_string())
      throw ParseError("missing string field 'text'", line_no);
    auto c = read_label(rec, "clean_label", line_no);
    auto nz = read_label(rec, "noisy_label", line_no);
    if (!c && !nz) throw ParseError("record has neither clean_label nor noisy_label", line_no);

    Example ex{rec["id"].get<std::string>(), rec["text"].get<std::string>(), {}};
    for (auto [lab, name] : {std::pair{c, "clean_label"}, std::pair{nz, "noisy_label"}}) {
      if (lab && *lab >= k) {
        throw DomainError(std::string(name) + " " + std::to_string(*lab) +
                          " out of range for k=" + std::to_string(k) + " (id " + ex.id + ")");
      }
    }
    n_clean += c.has_value();
    n_noisy += nz.has_value();
    clean.push_back(c.value_or(0));
    noisy.push_back(nz.value_or(0));
    examples.push_back(std::move(ex));
  }

  const auto n = examples.size();
  if (n_clean != 0 && n_clean != n)
    throw ConfigError("clean_label present on only " + std::to_string(n_clean) + " of " +
                      std::to_string(n) + " records");
  if (n_noisy != 0 && n_noisy != n)
    throw ConfigError("noisy_label present on only " + std::to_string(n_noisy) + " of " +
                      std::to_string(n) + " records");
  if (n == 0) throw SizeError("no records");

  std::optional<Labels> oc, on;
  if (n_clean) oc = std::move(clean);
  if (n_noisy) on = std::move(noisy);
  return Dataset(std::move(examples), k, std::move(oc), std::move(on));
}

Dataset load_jsonl(const std::filesystem::path& path, std::size_t k) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_jsonl(buf.str(), k);
}

std::string to_jsonl(const Dataset& ds) {
  std::string out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    // ordered_json keeps the documented key order.
    nlohmann::ordered_json rec;
    rec["id"] = ds[i].id;
    rec["text"] = ds[i].text;
    if (ds.clean_labels()) rec["clean_label"] = (*ds.clean_labels())[i];
    if (ds.noisy_labels()) rec["noisy_label"] = (*ds.noisy_labels())[i];
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void write_jsonl(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot write " + path.string());
  out << to_jsonl(ds);
}

// ---------------------------------------------------------------------------
// split

Splits split(const Dataset& ds, const SplitSpec& spec) {
  if (ds.empty()) throw SizeError("cannot split an empty dataset");
  for (double f : {spec.train, spec.val, spec.test}) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
  }
  if (std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");

  const auto n = ds.size();
  auto part = [n](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
  };
  const std::size_t n_val = part(spec.val);
  const std::size_t n_test = part(spec.test);
  if (n_val + n_test > n) throw SizeError("split sizes exceed dataset size");
  const std::size_t n_train = n - n_val - n_test;
  if ((spec.val > 0 && n_val == 0) || (spec.test > 0 && n_test == 0) ||
      (spec.train > 0 && n_train == 0)) {
    throw SizeError("dataset of size " + std::to_string(n) +
                    " too small for the requested split fractions");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.seed);
  rng.shuffle(order.begin(), order.end());

  std::span<const std::size_t> all(order);
  return Splits{ds.subset(all.subspan(0, n_train)), ds.subset(all.subspan(n_train, n_val)),
                ds.subset(all.subspan(n_train + n_val, n_test))};
}

// ---------------------------------------------------------------------------
// featurization

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char ch : text) {
    bool word = (ch >= '0' && ch <= '9') || (ch >= 'a' && ch <= 'z') ||
                (ch >= 'A' && ch <= 'Z') || ch >= 0x80;
    if (word) {
      cur.push_back(ch >= 'A' && ch <= 'Z' ? static_cast<char>(ch - 'A' + 'a')
                                           : static_cast<char>(ch));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

SparseVector featurize_text(std::string_view text, std::size_t dims) {
  if (dims == 0 || (dims & (dims - 1)) != 0)
    throw ConfigError("feature dims must be a power of two, got " + std::to_string(dims));
  if (dims > (std::size_t{1} << 32)) throw ConfigError("feature dims too large");

  const auto tokens = tokenize(text);
  const std::uint64_t mask = dims - 1;
  std::map<std::uint32_t, double> counts;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    counts[static_cast<std::uint32_t>(fnv1a64(tokens[i]) & mask)] += 1.0;
    if (i + 1 < tokens.size()) {
      // Tokens never contain spaces, so the joined bigram cannot collide
      // with a unigram string.
      auto bigram = tokens[i] + ' ' + tokens[i + 1];
      counts[static_cast<std::uint32_t>(fnv1a64(bigram) & mask)] += 1.0;
    }
  }
  SparseVector v;
  v.reserve(counts.size());
  double sq = 0.0;
  for (auto [idx, c] : counts) {
    v.push_back({idx, c});
    sq += c * c;
  }
  if (sq > 0.0) {
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& e : v) e.value *= inv;
  }
  return v;
}

Dataset featurize(const Dataset& ds, std::size_t dims) {
  std::vector<SparseVector> feats;
  feats.reserve(ds.size());
  for (const auto& ex : ds.examples()) {
    if (ex.text.empty()) throw ConfigError("cannot featurize empty text (id " + ex.id + ")");
    auto v = featurize_text(ex.text, dims);
    if (v.empty()) throw ConfigError("text has no tokens (id " + ex.id + ")");
    feats.push_back(std::move(v));
  }
  return ds.with_features(std::move(feats), dims);
}

// ---------------------------------------------------------------------------
// synthetic data

Dataset synth_dataset(std::size_t k, std::size_t n, double margin, std::uint64_t seed,
                      const SynthOptions& opts) {
  if (k < 2) throw DomainError("k must be >= 2");
  if (n < k) throw SizeError("synth_dataset needs n >= k");
  if (!(margin > 0.0 && margin <= 1.0)) throw DomainError("margin must be in (0, 1]");
  const std::size_t d = opts.dims;
  if (d == 0) throw ConfigError("synth dims must be positive");

  Rng rng(seed);
  std::vector<std::vector<double>> protos(k, std::vector<double>(d));
  for (auto& p : protos) {
    double sq = 0.0;
    for (auto& v : p) {
      v = rng.normal();
      sq += v * v;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (auto& v : p) v *= inv;
  }

  Labels labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % k;
  rng.shuffle(labels.begin(), labels.end());

  std::vector<Example> examples;
  examples.reserve(n);
  const double spread = 1.0 - margin;
  for (std::size_t i = 0; i < n; ++i) {
    SparseVector x;
    x.reserve(d);
    const auto& p = protos[labels[i]];
    for (std::size_t j = 0; j < d; ++j) {
      double v = margin * p[j];
      if (spread > 0.0) v += spread * rng.normal();
      x.push_back({static_cast<std::uint32_t>(j), v});
    }
    examples.push_back({"s" + std::to_string(i), "", std::move(x)});
  }
  return Dataset(std::move(examples), k, std::move(labels), std::nullopt, d);
}

}  // namespace nlab
