#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

namespace nlab {

using ClassIndex = std::size_t;
using Labels = std::vector<ClassIndex>;

enum class LabelSet { clean, noisy };

std::string_view to_string(LabelSet s) noexcept;

struct SparseEntry {
  std::uint32_t index;
  double value;

  friend bool operator==(const SparseEntry&, const SparseEntry&) = default;
};

// Sorted by index, no duplicates.
using SparseVector = std::vector<SparseEntry>;

double squared_norm(const SparseVector& v) noexcept;

struct Example {
  std::string id;
  std::string text;
  SparseVector features;
};

// Examples with optional clean and noisy label sequences aligned by position.
// Validated on construction and immutable afterwards.
class Dataset {
 public:
  Dataset(std::vector<Example> examples, std::size_t k,
          std::optional<Labels> clean, std::optional<Labels> noisy,
          std::size_t dims = 0);

  std::size_t size() const noexcept { return examples_.size(); }
  bool empty() const noexcept { return examples_.empty(); }
  std::size_t k() const noexcept { return k_; }
  // Feature dimension; 0 until featurized.
  std::size_t dims() const noexcept { return dims_; }

  const std::vector<Example>& examples() const noexcept { return examples_; }
  const Example& operator[](std::size_t i) const { return examples_[i]; }

  const std::optional<Labels>& clean_labels() const noexcept { return clean_; }
  const std::optional<Labels>& noisy_labels() const noexcept { return noisy_; }
  bool has(LabelSet s) const noexcept;
  // Throws ConfigError when the requested sequence is absent.
  const Labels& labels(LabelSet s) const;

  Dataset subset(std::span<const std::size_t> indices) const;
  Dataset with_noisy_labels(Labels noisy) const;
  Dataset with_features(std::vector<SparseVector> features, std::size_t dims) const;

 private:
  std::vector<Example> examples_;
  std::size_t k_;
  std::optional<Labels> clean_;
  std::optional<Labels> noisy_;
  std::size_t dims_;
};

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;
};

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};

// JSONL with keys id, text, clean_label?, noisy_label? (one record per line).
Dataset load_jsonl(const std::filesystem::path& path, std::size_t k);
void write_jsonl(const Dataset& ds, const std::filesystem::path& path);
Dataset parse_jsonl(std::string_view content, std::size_t k);
std::string to_jsonl(const Dataset& ds);

// Seeded shuffle, then floor-rounded val/test sizes; the remainder goes to train.
Splits split(const Dataset& ds, const SplitSpec& spec);

// Lower-cased tokens; runs of ASCII letters/digits and any non-ASCII bytes.
std::vector<std::string> tokenize(std::string_view text);

// 64-bit FNV-1a. Seedless, so feature indices are stable across runs and
// platforms.
std::uint64_t fnv1a64(std::string_view s) noexcept;

inline constexpr std::size_t kDefaultFeatureDims = std::size_t{1} << 18;

// Hashed unigram + bigram counts, L2-normalised. dims must be a power of two.
SparseVector featurize_text(std::string_view text, std::size_t dims);
Dataset featurize(const Dataset& ds, std::size_t dims = kDefaultFeatureDims);

struct SynthOptions {
  std::size_t dims = 256;
};

// Gaussian class mixture: x = margin * prototype[y] + (1 - margin) * g with
// unit-norm random prototypes and g ~ N(0, I). Clean labels are balanced
// round-robin before shuffling.
Dataset synth_dataset(std::size_t k, std::size_t n, double margin, std::uint64_t seed,
                      const SynthOptions& opts = {});

}  // namespace nlab
