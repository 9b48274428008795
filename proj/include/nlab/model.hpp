#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nlab/data.hpp"

namespace nlab {

enum class Architecture : std::uint32_t { linear = 0, mlp = 1 };

std::string_view to_string(Architecture a) noexcept;

struct ModelConfig {
  Architecture arch = Architecture::linear;
  std::size_t hidden = 64;  // ignored by the linear backbone
};

inline constexpr double kProbClamp = 1e-12;
inline constexpr double kInitScale = 0.05;

// Softmax classifier parameters.
//   linear: logits = W1^T x + b1,           W1: dims x k
//   mlp:    h = tanh(W1^T x + b1),          W1: dims x hidden
//           logits = W2^T h + b2,           W2: hidden x k
// Matrices are row-major with one row per input unit, so a sparse input
// touches only the rows of its active features.
struct Params {
  Architecture arch = Architecture::linear;
  std::size_t dims = 0;
  std::size_t hidden = 0;
  std::size_t k = 0;
  std::vector<double> w1, b1, w2, b2;

  std::size_t width1() const noexcept { return arch == Architecture::mlp ? hidden : k; }

  static Params zeros(const ModelConfig& cfg, std::size_t dims, std::size_t k);
  // Uniform in [-kInitScale, kInitScale].
  static Params init(const ModelConfig& cfg, std::size_t dims, std::size_t k, std::uint64_t seed);

  friend bool operator==(const Params&, const Params&) = default;
};

struct Gradients {
  std::vector<double> w1, b1, w2, b2;
};

struct Activations {
  std::vector<double> hidden;  // empty for linear
  std::vector<double> logits;
  std::vector<double> probs;
};

Activations forward_full(const Params& p, const SparseVector& x);
std::vector<double> forward(const Params& p, const SparseVector& x);

// Max-subtracted softmax.
std::vector<double> softmax(std::span<const double> logits);

std::size_t argmax(std::span<const double> v) noexcept;

double ce_loss(std::span<const double> probs, ClassIndex label);
// Cross-entropy against (1 - alpha) * onehot(label) + alpha / k.
double ls_loss(std::span<const double> probs, ClassIndex label, double alpha);

// A per-example objective: returns the loss and writes dL/dlogits.
using LossFn =
    std::function<double(std::span<const double> probs, ClassIndex label, std::span<double> dlogits)>;

LossFn ce_objective();
LossFn ls_objective(double alpha);

// Maps dL/dprobs to dL/dlogits through the softmax Jacobian.
void softmax_backward(std::span<const double> probs, std::span<const double> dprobs,
                      std::span<double> dlogits);

struct Batch {
  std::vector<std::reference_wrapper<const SparseVector>> features;
  Labels labels;

  std::size_t size() const noexcept { return labels.size(); }
};

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices, LabelSet labels);

// Gradient of the mean batch loss, kept in factored form: per-example deltas
// of the first-layer pre-activations plus dense gradients of the remaining
// blocks. Applying it touches only the first-layer rows of active features.
class BatchGradient {
 public:
  double mean_loss() const noexcept { return mean_loss_; }
  void apply(Params& p, double lr) const;
  Gradients dense(const Params& p) const;

 private:
  friend BatchGradient backward(const Params&, const Batch&, const LossFn&);
  const Batch* batch_ = nullptr;
  std::size_t width1_ = 0;
  std::vector<double> delta1_;  // batch x width1, already divided by batch size
  std::vector<double> gb1_, gw2_, gb2_;
  double mean_loss_ = 0.0;
};

// Throws NumericError naming the parameter block if a gradient is not finite.
BatchGradient backward(const Params& p, const Batch& batch, const LossFn& loss);

// One plain SGD step on the mean batch loss.
Params grad_step(const Params& p, const Batch& batch, double lr, const LossFn& loss);
// In-place variant; returns the mean batch loss before the step.
double sgd_step(Params& p, const Batch& batch, double lr, const LossFn& loss);

double evaluate(const Params& p, const Dataset& ds, LabelSet use);
std::vector<double> per_example_ce(const Params& p, const Dataset& ds, LabelSet use);

// Binary checkpoint, little-endian; see docs/checkpoint.md.
void save_checkpoint(const Params& p, const std::filesystem::path& path);
Params load_checkpoint(const std::filesystem::path& path);

}  // namespace nlab
