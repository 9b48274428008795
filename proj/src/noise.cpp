#include "nlab/noise.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "nlab/errors.hpp"
#include "nlab/rng.hpp"

namespace nlab {

TransitionMatrix::TransitionMatrix(std::vector<std::vector<double>> rows)
    : rows_(std::move(rows)) {
  const auto k = rows_.size();
  if (k < 2) throw DomainError("transition matrix needs k >= 2");
  for (std::size_t i = 0; i < k; ++i) {
    if (rows_[i].size() != k)
      throw ShapeError("row " + std::to_string(i) + " has " + std::to_string(rows_[i].size()) +
                       " entries, expected " + std::to_string(k));
    double sum = 0.0;
    for (double v : rows_[i]) {
      if (!(v >= 0.0 && v <= 1.0))
        throw DomainError("row " + std::to_string(i) + " has entry outside [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      std::ostringstream msg;
      msg << "row " << i << " sums to " << std::setprecision(12) << sum << ", not 1";
      throw DomainError(msg.str());
    }
  }
}

TransitionMatrix TransitionMatrix::identity(std::size_t k) {
  std::vector<std::vector<double>> rows(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i) rows[i][i] = 1.0;
  return TransitionMatrix(std::move(rows));
}

namespace {

void check_level(double eps) {
  if (!(eps >= 0.0 && eps < 1.0))
    throw DomainError("noise level must be in [0, 1), got " + std::to_string(eps));
}

}  // namespace

TransitionMatrix uniform_matrix(std::size_t k, double eps) {
  if (k < 2) throw DomainError("k must be >= 2");
  check_level(eps);
  const double off = eps / static_cast<double>(k - 1);
  std::vector<std::vector<double>> rows(k, std::vector<double>(k, off));
  for (std::size_t i = 0; i < k; ++i) rows[i][i] = 1.0 - eps;
  return TransitionMatrix(std::move(rows));
}

std::vector<ClassIndex> cyclic_flip_map(std::size_t k) {
  std::vector<ClassIndex> m(k);
  for (std::size_t i = 0; i < k; ++i) m[i] = (i + 1) % k;
  return m;
}

TransitionMatrix single_flip_matrix(std::size_t k, double eps,
                                    const std::vector<ClassIndex>& flip_map) {
  if (k < 2) throw DomainError("k must be >= 2");
  check_level(eps);
  if (flip_map.size() != k) throw DomainError("flip map must cover every class");
  std::vector<std::vector<double>> rows(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i) {
    if (flip_map[i] >= k) throw DomainError("flip target out of range for class " + std::to_string(i));
    if (flip_map[i] == i) throw DomainError("flip map has a fixed point at class " + std::to_string(i));
    rows[i][i] = 1.0 - eps;
    rows[i][flip_map[i]] = eps;
  }
  return TransitionMatrix(std::move(rows));
}

TransitionMatrix matrix_from_pairs(const Labels& clean, const Labels& noisy, std::size_t k) {
  if (clean.size() != noisy.size())
    throw ShapeError("clean/noisy length mismatch: " + std::to_string(clean.size()) + " vs " +
                     std::to_string(noisy.size()));
  if (clean.empty()) throw ShapeError("label sequences are empty");
  if (k < 2) throw DomainError("k must be >= 2");
  std::vector<std::vector<double>> counts(k, std::vector<double>(k, 0.0));
  std::vector<double> totals(k, 0.0);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (clean[i] >= k || noisy[i] >= k) throw DomainError("label out of range");
    counts[clean[i]][noisy[i]] += 1.0;
    totals[clean[i]] += 1.0;
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (totals[i] == 0.0) {
      counts[i][i] = 1.0;
      continue;
    }
    for (auto& v : counts[i]) v /= totals[i];
  }
  return TransitionMatrix(std::move(counts));
}

Labels inject(const Labels& clean, const TransitionMatrix& t, std::uint64_t seed) {
  const auto k = t.k();
  Labels out(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (clean[i] >= k) throw DomainError("label " + std::to_string(clean[i]) + " out of range");
    const auto& row = t.row(clean[i]);
    const double u = positional_uniform(seed, i);
    double acc = 0.0;
    ClassIndex pick = clean[i];
    // Fall back to the last non-zero column if rounding leaves u above the
    // accumulated mass.
    for (std::size_t j = 0; j < k; ++j) {
      if (row[j] <= 0.0) continue;
      pick = j;
      acc += row[j];
      if (u < acc) break;
    }
    out[i] = pick;
  }
  return out;
}

double fdr(const Labels& clean, const Labels& noisy) {
  if (clean.size() != noisy.size())
    throw ShapeError("clean/noisy length mismatch: " + std::to_string(clean.size()) + " vs " +
                     std::to_string(noisy.size()));
  if (clean.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) wrong += clean[i] != noisy[i];
  return static_cast<double>(wrong) / static_cast<double>(clean.size());
}

bool diag_dominant(const TransitionMatrix& t) noexcept {
  for (std::size_t i = 0; i < t.k(); ++i) {
    for (std::size_t j = 0; j < t.k(); ++j) {
      if (j != i && !(t(i, i) > t(i, j))) return false;
    }
  }
  return true;
}

Dataset inject_rules(const Dataset& ds, const RuleSet& rules) {
  if (rules.rules.empty()) throw ConfigError("rule set is empty");
  for (const auto& r : rules.rules) {
    if (r.keyword.empty()) throw ConfigError("rule keyword is empty");
    if (r.cls >= ds.k()) throw DomainError("rule class " + std::to_string(r.cls) + " out of range");
  }
  const auto& clean = ds.labels(LabelSet::clean);

  // Keywords are matched against the same tokenizer used for features.
  std::vector<std::string> keys;
  keys.reserve(rules.rules.size());
  for (const auto& r : rules.rules) {
    auto toks = tokenize(r.keyword);
    if (toks.size() != 1) throw ConfigError("rule keyword '" + r.keyword + "' is not a single token");
    keys.push_back(toks.front());
  }

  std::vector<std::size_t> kept;
  Labels noisy;
  kept.reserve(ds.size());
  noisy.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds[i].text.empty()) throw ConfigError("rule injection needs text (id " + ds[i].id + ")");
    auto toks = tokenize(ds[i].text);
    std::unordered_set<std::string> present(toks.begin(), toks.end());
    bool fired = false;
    for (std::size_t r = 0; r < keys.size(); ++r) {
      if (present.contains(keys[r])) {
        kept.push_back(i);
        noisy.push_back(rules.rules[r].cls);
        fired = true;
        break;
      }
    }
    if (!fired && rules.abstain_to_clean) {
      kept.push_back(i);
      noisy.push_back(clean[i]);
    }
  }
  if (kept.empty()) throw SizeError("no example survived rule labelling");
  return ds.subset(kept).with_noisy_labels(std::move(noisy));
}

// ---------------------------------------------------------------------------
// file formats

TransitionMatrix parse_matrix_csv(const std::string& content) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      auto b = cell.find_first_not_of(" \t");
      auto e = cell.find_last_not_of(" \t");
      if (b == std::string::npos) throw ParseError("empty cell", line_no);
      std::string tok = cell.substr(b, e - b + 1);
      std::size_t used = 0;
      double v;
      try {
        v = std::stod(tok, &used);
      } catch (const std::exception&) {
        throw ParseError("not a number: '" + tok + "'", line_no);
      }
      if (used != tok.size()) throw ParseError("not a number: '" + tok + "'", line_no);
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("empty matrix file", line_no);
  const auto k = rows.size();
  for (std::size_t i = 0; i < k; ++i) {
    if (rows[i].size() != k)
      throw ShapeError("row " + std::to_string(i) + " has " + std::to_string(rows[i].size()) +
                       " entries, expected " + std::to_string(k));
  }
  return TransitionMatrix(std::move(rows));
}

TransitionMatrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_matrix_csv(buf.str());
}

std::string to_csv(const TransitionMatrix& t) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (const auto& row : t.rows()) {
    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
    out << '\n';
  }
  return out.str();
}

void write_matrix_csv(const TransitionMatrix& t, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ArtifactError("cannot write " + path.string());
  out << to_csv(t);
}

RuleSet read_rules_jsonl(const std::filesystem::path& path, std::size_t k, bool abstain_to_clean) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("cannot open " + path.string());
  RuleSet rs;
  rs.abstain_to_clean = abstain_to_clean;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!rec.is_object() || !rec.contains("keyword") || !rec["keyword"].is_string() ||
        !rec.contains("class") || !rec["class"].is_number_integer())
      throw ParseError("rule needs string 'keyword' and integer 'class'", line_no);
    auto cls = rec["class"].get<std::int64_t>();
    if (cls < 0 || static_cast<std::size_t>(cls) >= k)
      throw DomainError("rule class " + std::to_string(cls) + " out of range (line " +
                        std::to_string(line_no) + ")");
    rs.rules.push_back({rec["keyword"].get<std::string>(), static_cast<ClassIndex>(cls)});
  }
  if (rs.rules.empty()) throw ConfigError("rule file " + path.string() + " has no rules");
  return rs;
}

}  // namespace nlab
