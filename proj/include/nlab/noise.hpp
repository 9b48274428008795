#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nlab/data.hpp"

namespace nlab {

inline constexpr double kRowSumTolerance = 1e-9;

// Row-stochastic k x k matrix, (i, j) = p(noisy = j | clean = i).
class TransitionMatrix {
 public:
  // Validates entries in [0, 1] and row sums within kRowSumTolerance.
  explicit TransitionMatrix(std::vector<std::vector<double>> rows);

  static TransitionMatrix identity(std::size_t k);

  std::size_t k() const noexcept { return rows_.size(); }
  double operator()(std::size_t i, std::size_t j) const { return rows_[i][j]; }
  const std::vector<double>& row(std::size_t i) const { return rows_.at(i); }
  const std::vector<std::vector<double>>& rows() const noexcept { return rows_; }

 private:
  std::vector<std::vector<double>> rows_;
};

// Diagonal 1 - eps, every off-diagonal entry eps / (k - 1).
TransitionMatrix uniform_matrix(std::size_t k, double eps);

// Cyclic default i -> (i + 1) mod k.
std::vector<ClassIndex> cyclic_flip_map(std::size_t k);

// Diagonal 1 - eps, eps at (i, flip_map[i]), zero elsewhere.
TransitionMatrix single_flip_matrix(std::size_t k, double eps,
                                    const std::vector<ClassIndex>& flip_map);
inline TransitionMatrix single_flip_matrix(std::size_t k, double eps) {
  return single_flip_matrix(k, eps, cyclic_flip_map(k));
}

// Empirical matrix from aligned clean/noisy pairs. Classes with no clean
// occurrence get an identity row.
TransitionMatrix matrix_from_pairs(const Labels& clean, const Labels& noisy, std::size_t k);

// Each output label is drawn from row clean[i] using a uniform derived from
// (seed, i) only.
Labels inject(const Labels& clean, const TransitionMatrix& t, std::uint64_t seed);

double fdr(const Labels& clean, const Labels& noisy);

// Strict: T_ii > T_ij for every j != i.
bool diag_dominant(const TransitionMatrix& t) noexcept;

struct Rule {
  std::string keyword;
  ClassIndex cls;
};

struct RuleSet {
  std::vector<Rule> rules;
  bool abstain_to_clean = true;
};

// Keyword rules applied in order; the first rule whose keyword appears as a
// whole token (case-insensitive) assigns the noisy label. Examples where no
// rule fires keep their clean label, or are dropped if !abstain_to_clean.
Dataset inject_rules(const Dataset& ds, const RuleSet& rules);

// File formats: matrix CSV (k rows of k decimals, no header) and rule JSONL
// ({"keyword": str, "class": int} per line).
TransitionMatrix read_matrix_csv(const std::filesystem::path& path);
TransitionMatrix parse_matrix_csv(const std::string& content);
void write_matrix_csv(const TransitionMatrix& t, const std::filesystem::path& path);
std::string to_csv(const TransitionMatrix& t);
RuleSet read_rules_jsonl(const std::filesystem::path& path, std::size_t k,
                         bool abstain_to_clean = true);

}  // namespace nlab
