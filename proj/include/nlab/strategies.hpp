#pragma once

#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nlab/model.hpp"
#include "nlab/noise.hpp"

namespace nlab {

// Train on the noisy labels as if they were clean; early stopping on noisy val.
struct Vanilla {};
// Vanilla objective, but trained to train-loss convergence and scored at the
// last step.
struct NoValidation {};
// Forward correction through a fixed transition matrix.
struct NoiseMatrix {
  TransitionMatrix t;
};
// Learned, unconstrained noise matrix (identity init) with a Frobenius penalty.
struct NoiseMatrixReg {
  double lambda = 1e-3;
};
// Two networks, each trained on the small-loss part of the batch as ranked by
// the other. eps is the ground-truth noise level.
struct CoTeaching {
  double eps = 0.0;
  std::size_t ramp_epochs = 5;
};
struct LabelSmoothing {
  double alpha = 0.1;
};

using Strategy =
    std::variant<Vanilla, NoValidation, NoiseMatrix, NoiseMatrixReg, CoTeaching, LabelSmoothing>;

// Short names used in configs and output directories: vanilla, nv, nmat,
// nmwr, ct, ls.
std::string strategy_name(const Strategy& s);
void validate(const Strategy& s, std::size_t k);

// k x k real matrix with no normalisation constraint.
class LearnedMatrix {
 public:
  explicit LearnedMatrix(std::size_t k, double fill = 0.0) : k_(k), m_(k * k, fill) {}
  static LearnedMatrix identity(std::size_t k);

  std::size_t k() const noexcept { return k_; }
  double& operator()(std::size_t i, std::size_t j) { return m_[i * k_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return m_[i * k_ + j]; }
  std::vector<double>& data() noexcept { return m_; }
  const std::vector<double>& data() const noexcept { return m_; }
  double frobenius_sq() const noexcept;

 private:
  std::size_t k_;
  std::vector<double> m_;
};

// -log q_y with q = probs^T T (clamped like ce_loss).
double nmat_loss(std::span<const double> probs, const TransitionMatrix& t, ClassIndex noisy_label);
LossFn nmat_objective(TransitionMatrix t);

struct NmwrResult {
  double loss = 0.0;
  std::vector<double> dprobs;
  LearnedMatrix dm{0};
};

// u = probs^T M, clamped at kProbClamp and renormalised to q;
// loss = -log q_y + lambda * ||M||_F^2. Gradients w.r.t. probs and M.
NmwrResult nmwr_loss(std::span<const double> probs, const LearnedMatrix& m,
                     ClassIndex noisy_label, double lambda);

// Data term of nmwr_loss as a per-example objective. Each call adds
// (1 / batch_size) * dL/dM into *dm_accum; the Frobenius penalty is applied
// once per batch by the caller.
LossFn nmwr_objective(const LearnedMatrix& m, LearnedMatrix* dm_accum, std::size_t batch_size);

// 1 - eps * min(epoch / ramp_epochs, 1).
double keep_fraction(std::size_t epoch, double eps, std::size_t ramp_epochs);

struct CoteachSelection {
  std::vector<std::size_t> for_a;  // ranked by losses_b
  std::vector<std::size_t> for_b;  // ranked by losses_a
};

// ceil(frac * n) smallest-loss indices under the peer's losses, ties to the
// lower index, returned in ascending index order.
CoteachSelection coteach_select(std::span<const double> losses_a, std::span<const double> losses_b,
                                double frac);

}  // namespace nlab
