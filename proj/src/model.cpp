#include "nlab/model.hpp"

#include <algorithm>
#include <cmath>

#include "nlab/errors.hpp"
#include "nlab/rng.hpp"

namespace nlab {

std::string_view to_string(Architecture a) noexcept {
  return a == Architecture::mlp ? "mlp" : "linear";
}

Params Params::zeros(const ModelConfig& cfg, std::size_t dims, std::size_t k) {
  if (dims == 0) throw ConfigError("model dims must be positive");
  if (k < 2) throw DomainError("k must be >= 2");
  Params p;
  p.arch = cfg.arch;
  p.dims = dims;
  p.k = k;
  if (cfg.arch == Architecture::mlp) {
    if (cfg.hidden == 0) throw ConfigError("mlp hidden size must be positive");
    p.hidden = cfg.hidden;
    p.w1.assign(dims * cfg.hidden, 0.0);
    p.b1.assign(cfg.hidden, 0.0);
    p.w2.assign(cfg.hidden * k, 0.0);
    p.b2.assign(k, 0.0);
  } else {
    p.w1.assign(dims * k, 0.0);
    p.b1.assign(k, 0.0);
  }
  return p;
}

Params Params::init(const ModelConfig& cfg, std::size_t dims, std::size_t k, std::uint64_t seed) {
  Params p = zeros(cfg, dims, k);
  Rng rng(seed);
  for (auto* block : {&p.w1, &p.b1, &p.w2, &p.b2}) {
    for (auto& v : *block) v = rng.uniform(-kInitScale, kInitScale);
  }
  return p;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] - mx);
    sum += out[j];
  }
  for (auto& v : out) v /= sum;
  return out;
}

std::size_t argmax(std::span<const double> v) noexcept {
  std::size_t best = 0;
  for (std::size_t j = 1; j < v.size(); ++j) {
    if (v[j] > v[best]) best = j;
  }
  return best;
}

namespace {

// out[c] += sum_x value * W[index, c]
void sparse_affine(const SparseVector& x, const std::vector<double>& w, std::size_t width,
                   std::size_t dims, std::vector<double>& out) {
  for (const auto& e : x) {
    if (e.index >= dims)
      throw ShapeError("feature index " + std::to_string(e.index) + " >= model dims " +
                       std::to_string(dims));
    const double* row = w.data() + static_cast<std::size_t>(e.index) * width;
    for (std::size_t c = 0; c < width; ++c) out[c] += e.value * row[c];
  }
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("non-finite activation", what);
  }
}

}  // namespace

Activations forward_full(const Params& p, const SparseVector& x) {
  Activations a;
  const auto w = p.width1();
  std::vector<double> pre(p.b1);
  sparse_affine(x, p.w1, w, p.dims, pre);
  if (p.arch == Architecture::mlp) {
    a.hidden.resize(w);
    for (std::size_t h = 0; h < w; ++h) a.hidden[h] = std::tanh(pre[h]);
    a.logits = p.b2;
    for (std::size_t h = 0; h < w; ++h) {
      const double hv = a.hidden[h];
      const double* row = p.w2.data() + h * p.k;
      for (std::size_t c = 0; c < p.k; ++c) a.logits[c] += hv * row[c];
    }
  } else {
    a.logits = std::move(pre);
  }
  require_finite(a.logits, "logits");
  a.probs = softmax(a.logits);
  return a;
}

std::vector<double> forward(const Params& p, const SparseVector& x) {
  return forward_full(p, x).probs;
}

// ---------------------------------------------------------------------------
// losses

namespace {

void check_label(std::span<const double> probs, ClassIndex label) {
  if (label >= probs.size())
    throw DomainError("label " + std::to_string(label) + " out of range for " +
                      std::to_string(probs.size()) + " classes");
}

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw ConfigError("label smoothing alpha must be in [0, 1), got " + std::to_string(alpha));
}

}  // namespace

double ce_loss(std::span<const double> probs, ClassIndex label) {
  check_label(probs, label);
  return -std::log(std::max(probs[label], kProbClamp));
}

double ls_loss(std::span<const double> probs, ClassIndex label, double alpha) {
  check_label(probs, label);
  check_alpha(alpha);
  const double uni = alpha / static_cast<double>(probs.size());
  double loss = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    const double t = (j == label ? 1.0 - alpha : 0.0) + uni;
    loss -= t * std::log(std::max(probs[j], kProbClamp));
  }
  return loss;
}

LossFn ce_objective() {
  return [](std::span<const double> probs, ClassIndex label, std::span<double> dz) {
    const double loss = ce_loss(probs, label);
    // The clamp is flat below kProbClamp, so the gradient vanishes there.
    if (probs[label] < kProbClamp) {
      std::fill(dz.begin(), dz.end(), 0.0);
      return loss;
    }
    for (std::size_t j = 0; j < probs.size(); ++j) dz[j] = probs[j];
    dz[label] -= 1.0;
    return loss;
  };
}

LossFn ls_objective(double alpha) {
  check_alpha(alpha);
  return [alpha](std::span<const double> probs, ClassIndex label, std::span<double> dz) {
    const double loss = ls_loss(probs, label, alpha);
    const double uni = alpha / static_cast<double>(probs.size());
    // dL/dz_i = p_i * sum_j t_j a_j - t_i a_i, a_j = 1 where p_j is unclamped.
    double active_mass = 0.0;
    for (std::size_t j = 0; j < probs.size(); ++j) {
      const double t = (j == label ? 1.0 - alpha : 0.0) + uni;
      if (probs[j] >= kProbClamp) active_mass += t;
    }
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const double t = (i == label ? 1.0 - alpha : 0.0) + uni;
      dz[i] = probs[i] * active_mass - (probs[i] >= kProbClamp ? t : 0.0);
    }
    return loss;
  };
}

void softmax_backward(std::span<const double> probs, std::span<const double> dprobs,
                      std::span<double> dlogits) {
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * dprobs[i];
  for (std::size_t j = 0; j < probs.size(); ++j) dlogits[j] = probs[j] * (dprobs[j] - dot);
}

// ---------------------------------------------------------------------------
// gradients

Batch make_batch(const Dataset& ds, std::span<const std::size_t> indices, LabelSet use) {
  const auto& labels = ds.labels(use);
  Batch b;
  b.features.reserve(indices.size());
  b.labels.reserve(indices.size());
  for (auto i : indices) {
    b.features.emplace_back(ds[i].features);
    b.labels.push_back(labels.at(i));
  }
  return b;
}

BatchGradient backward(const Params& p, const Batch& batch, const LossFn& loss) {
  const auto n = batch.size();
  if (n == 0) throw SizeError("empty batch");
  if (batch.features.size() != n) throw ShapeError("batch features/labels length mismatch");

  const auto w = p.width1();
  const auto k = p.k;
  const double inv_n = 1.0 / static_cast<double>(n);
  const bool mlp = p.arch == Architecture::mlp;

  BatchGradient g;
  g.batch_ = &batch;
  g.width1_ = w;
  g.delta1_.assign(n * w, 0.0);
  g.gb1_.assign(w, 0.0);
  if (mlp) {
    g.gw2_.assign(w * k, 0.0);
    g.gb2_.assign(k, 0.0);
  }

  std::vector<double> dz(k);
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const auto act = forward_full(p, batch.features[s].get());
    total += loss(act.probs, batch.labels[s], dz);
    for (auto& v : dz) v *= inv_n;
    double* d1 = g.delta1_.data() + s * w;
    if (mlp) {
      for (std::size_t h = 0; h < w; ++h) {
        const double hv = act.hidden[h];
        const double* w2row = p.w2.data() + h * k;
        double* gw2row = g.gw2_.data() + h * k;
        double back = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          gw2row[c] += hv * dz[c];
          back += w2row[c] * dz[c];
        }
        d1[h] = back * (1.0 - hv * hv);
      }
      for (std::size_t c = 0; c < k; ++c) g.gb2_[c] += dz[c];
    } else {
      std::copy(dz.begin(), dz.end(), d1);
    }
    for (std::size_t c = 0; c < w; ++c) g.gb1_[c] += d1[c];
  }
  g.mean_loss_ = total * inv_n;

  auto check = [](const std::vector<double>& v, const char* block) {
    for (double x : v) {
      if (!std::isfinite(x)) throw NumericError("non-finite gradient", block);
    }
  };
  // Output side first: the block nearest the fault is reported.
  check(g.gb2_, "b2");
  check(g.gw2_, "w2");
  check(g.gb1_, "b1");
  check(g.delta1_, "w1");
  return g;
}

void BatchGradient::apply(Params& p, double lr) const {
  const auto w = width1_;
  for (std::size_t s = 0; s < batch_->size(); ++s) {
    const double* d1 = delta1_.data() + s * w;
    for (const auto& e : batch_->features[s].get()) {
      double* row = p.w1.data() + static_cast<std::size_t>(e.index) * w;
      const double scale = lr * e.value;
      for (std::size_t c = 0; c < w; ++c) row[c] -= scale * d1[c];
    }
  }
  for (std::size_t c = 0; c < w; ++c) p.b1[c] -= lr * gb1_[c];
  for (std::size_t i = 0; i < gw2_.size(); ++i) p.w2[i] -= lr * gw2_[i];
  for (std::size_t i = 0; i < gb2_.size(); ++i) p.b2[i] -= lr * gb2_[i];
}

Gradients BatchGradient::dense(const Params& p) const {
  Gradients g;
  g.w1.assign(p.w1.size(), 0.0);
  const auto w = width1_;
  for (std::size_t s = 0; s < batch_->size(); ++s) {
    const double* d1 = delta1_.data() + s * w;
    for (const auto& e : batch_->features[s].get()) {
      double* row = g.w1.data() + static_cast<std::size_t>(e.index) * w;
      for (std::size_t c = 0; c < w; ++c) row[c] += e.value * d1[c];
    }
  }
  g.b1 = gb1_;
  g.w2 = gw2_;
  g.b2 = gb2_;
  return g;
}

Params grad_step(const Params& p, const Batch& batch, double lr, const LossFn& loss) {
  Params next = p;
  backward(p, batch, loss).apply(next, lr);
  return next;
}

double sgd_step(Params& p, const Batch& batch, double lr, const LossFn& loss) {
  auto g = backward(p, batch, loss);
  g.apply(p, lr);
  return g.mean_loss();
}

// ---------------------------------------------------------------------------
// evaluation

double evaluate(const Params& p, const Dataset& ds, LabelSet use) {
  const auto& labels = ds.labels(use);
  if (ds.empty()) throw SizeError("cannot evaluate on an empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto act = forward_full(p, ds[i].features);
    hits += argmax(act.logits) == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

std::vector<double> per_example_ce(const Params& p, const Dataset& ds, LabelSet use) {
  const auto& labels = ds.labels(use);
  std::vector<double> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out[i] = ce_loss(forward(p, ds[i].features), labels[i]);
  return out;
}

}  // namespace nlab
