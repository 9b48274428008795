#include "nlab/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nlab/errors.hpp"

namespace nlab {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

std::string strategy_name(const Strategy& s) {
  return std::visit(overloaded{
                        [](const Vanilla&) { return std::string("vanilla"); },
                        [](const NoValidation&) { return std::string("nv"); },
                        [](const NoiseMatrix&) { return std::string("nmat"); },
                        [](const NoiseMatrixReg&) { return std::string("nmwr"); },
                        [](const CoTeaching&) { return std::string("ct"); },
                        [](const LabelSmoothing&) { return std::string("ls"); },
                    },
                    s);
}

void validate(const Strategy& s, std::size_t k) {
  std::visit(overloaded{
                 [](const Vanilla&) {},
                 [](const NoValidation&) {},
                 [k](const NoiseMatrix& m) {
                   if (m.t.k() != k)
                     throw ShapeError("noise matrix is " + std::to_string(m.t.k()) +
                                      "x" + std::to_string(m.t.k()) + " but k=" + std::to_string(k));
                 },
                 [](const NoiseMatrixReg& r) {
                   if (!(r.lambda >= 0.0) || !std::isfinite(r.lambda))
                     throw ConfigError("nmwr lambda must be a non-negative real");
                 },
                 [](const CoTeaching& c) {
                   if (!(c.eps >= 0.0 && c.eps < 1.0))
                     throw ConfigError("co-teaching eps must be in [0, 1)");
                   if (c.ramp_epochs == 0) throw ConfigError("co-teaching ramp_epochs must be positive");
                 },
                 [](const LabelSmoothing& l) {
                   if (!(l.alpha >= 0.0 && l.alpha < 1.0))
                     throw ConfigError("label smoothing alpha must be in [0, 1)");
                 },
             },
             s);
}

LearnedMatrix LearnedMatrix::identity(std::size_t k) {
  LearnedMatrix m(k);
  for (std::size_t i = 0; i < k; ++i) m(i, i) = 1.0;
  return m;
}

double LearnedMatrix::frobenius_sq() const noexcept {
  double s = 0.0;
  for (double v : m_) s += v * v;
  return s;
}

// ---------------------------------------------------------------------------
// forward correction

namespace {

double corrected_prob(std::span<const double> probs, const TransitionMatrix& t, ClassIndex y) {
  if (probs.size() != t.k())
    throw ShapeError("probability vector has " + std::to_string(probs.size()) +
                     " classes, matrix has " + std::to_string(t.k()));
  if (y >= t.k()) throw DomainError("label " + std::to_string(y) + " out of range");
  double q = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) q += probs[i] * t(i, y);
  return q;
}

}  // namespace

double nmat_loss(std::span<const double> probs, const TransitionMatrix& t, ClassIndex noisy_label) {
  return -std::log(std::max(corrected_prob(probs, t, noisy_label), kProbClamp));
}

LossFn nmat_objective(TransitionMatrix t) {
  return [t = std::move(t)](std::span<const double> probs, ClassIndex y, std::span<double> dz) {
    const double q = corrected_prob(probs, t, y);
    const double loss = -std::log(std::max(q, kProbClamp));
    if (q < kProbClamp) {
      std::fill(dz.begin(), dz.end(), 0.0);
      return loss;
    }
    // dL/dz_j = p_j - p_j T_jy / q_y
    for (std::size_t j = 0; j < probs.size(); ++j) dz[j] = probs[j] - probs[j] * t(j, y) / q;
    return loss;
  };
}

// ---------------------------------------------------------------------------
// learned matrix with regularisation

namespace {

// Data term. Writes dL/du into du and returns the loss.
double nmwr_data(std::span<const double> probs, const LearnedMatrix& m, ClassIndex y,
                 std::vector<double>& du) {
  const auto k = m.k();
  if (probs.size() != k)
    throw ShapeError("probability vector has " + std::to_string(probs.size()) +
                     " classes, matrix has " + std::to_string(k));
  if (y >= k) throw DomainError("label " + std::to_string(y) + " out of range");

  std::vector<double> u(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) u[j] += probs[i] * m(i, j);
  }
  double s = 0.0;
  bool any_active = false;
  for (std::size_t j = 0; j < k; ++j) {
    any_active |= u[j] >= kProbClamp;
    s += std::max(u[j], kProbClamp);
  }
  if (!any_active) throw NumericError("all corrected scores below clamp", "noise_matrix");

  const double vy = std::max(u[y], kProbClamp);
  const double q = vy / s;
  du.assign(k, 0.0);
  if (q < kProbClamp) return -std::log(kProbClamp);
  // L = -log v_y + log S
  for (std::size_t j = 0; j < k; ++j) {
    if (u[j] < kProbClamp) continue;
    du[j] = 1.0 / s - (j == y ? 1.0 / vy : 0.0);
  }
  return -std::log(q);
}

}  // namespace

NmwrResult nmwr_loss(std::span<const double> probs, const LearnedMatrix& m, ClassIndex noisy_label,
                     double lambda) {
  const auto k = m.k();
  std::vector<double> du;
  NmwrResult r;
  r.loss = nmwr_data(probs, m, noisy_label, du) + lambda * m.frobenius_sq();
  r.dprobs.assign(k, 0.0);
  r.dm = LearnedMatrix(k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      r.dprobs[i] += m(i, j) * du[j];
      r.dm(i, j) = probs[i] * du[j] + 2.0 * lambda * m(i, j);
    }
  }
  return r;
}

LossFn nmwr_objective(const LearnedMatrix& m, LearnedMatrix* dm_accum, std::size_t batch_size) {
  const double scale = 1.0 / static_cast<double>(batch_size);
  return [&m, dm_accum, scale](std::span<const double> probs, ClassIndex y, std::span<double> dz) {
    const auto k = m.k();
    std::vector<double> du;
    const double loss = nmwr_data(probs, m, y, du);
    std::vector<double> dp(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        dp[i] += m(i, j) * du[j];
        if (dm_accum) (*dm_accum)(i, j) += scale * probs[i] * du[j];
      }
    }
    softmax_backward(probs, dp, dz);
    return loss;
  };
}

// ---------------------------------------------------------------------------
// co-teaching

double keep_fraction(std::size_t epoch, double eps, std::size_t ramp_epochs) {
  if (ramp_epochs == 0) throw ConfigError("ramp_epochs must be positive");
  const double ramp =
      std::min(static_cast<double>(epoch) / static_cast<double>(ramp_epochs), 1.0);
  return 1.0 - eps * ramp;
}

namespace {

std::vector<std::size_t> smallest(std::span<const double> losses, std::size_t m) {
  std::vector<std::size_t> idx(losses.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return losses[a] < losses[b]; });
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

CoteachSelection coteach_select(std::span<const double> losses_a, std::span<const double> losses_b,
                                double frac) {
  if (losses_a.size() != losses_b.size())
    throw ShapeError("co-teaching loss sequences differ in length");
  if (losses_a.empty()) throw SizeError("co-teaching selection on an empty batch");
  if (!(frac > 0.0 && frac <= 1.0)) throw DomainError("keep fraction must be in (0, 1]");
  const auto n = losses_a.size();
  auto m = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n) - 1e-9));
  m = std::clamp<std::size_t>(m, 1, n);
  return {smallest(losses_b, m), smallest(losses_a, m)};
}

}  // namespace nlab
