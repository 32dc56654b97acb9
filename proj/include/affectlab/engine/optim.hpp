#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "affectlab/core/error.hpp"
#include "affectlab/core/params.hpp"

namespace affectlab {

/// Optimization recipe. Defaults follow the multi-task column; see
/// cotex_defaults() for the co-training column.
struct TrainConfig {
  double base_lr = 5e-4;
  double weight_decay = 0.05;
  int batch_size = 100;
  double clip_grad = 0.05;
  double layer_decay = 0.65;
  int warmup_epochs = 5;
  int total_epochs = 30;
  int accum_iters = 4;
  double drop_path = 0.1;
  double mask_ratio = 0.0;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  bool scale_lr = true;  // lr = base_lr * effective_batch / 256

  [[nodiscard]] int effective_batch() const { return batch_size * accum_iters; }
  [[nodiscard]] double peak_lr() const {
    return scale_lr ? base_lr * effective_batch() / 256.0 : base_lr;
  }

  void validate() const {
    if (!(base_lr > 0)) throw ConfigError("base_lr must be positive");
    if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(clip_grad > 0)) throw ConfigError("clip_grad must be positive");
    if (!(layer_decay > 0) || layer_decay > 1) throw ConfigError("layer_decay must lie in (0, 1]");
    if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be non-negative");
    if (total_epochs < 1) throw ConfigError("total_epochs must be >= 1");
    if (warmup_epochs > total_epochs) throw ConfigError("warmup_epochs exceeds total_epochs");
    if (accum_iters < 1) throw ConfigError("accum_iters must be >= 1");
    if (drop_path < 0 || drop_path >= 1) throw ConfigError("drop_path must lie in [0, 1)");
    if (mask_ratio < 0 || mask_ratio >= 1) throw ConfigError("mask_ratio must lie in [0, 1)");
    if (lambda < 0) throw ConfigError("lambda must be non-negative");
  }

  static TrainConfig emma_defaults() { return {}; }
  static TrainConfig cotex_defaults() {
    TrainConfig c;
    c.weight_decay = 0.15;
    c.batch_size = 1024;
    c.total_epochs = 6;
    c.mask_ratio = 0.75;
    return c;
  }
};

/// Per-group learning rates: group g in [0, depth + 1] gets
/// base_lr * layer_decay^(depth + 1 - g).
inline std::vector<double> layer_lrs(double base_lr, double layer_decay, int depth) {
  if (depth < 1) throw ConfigError("layer_lrs needs depth >= 1");
  std::vector<double> lrs(static_cast<std::size_t>(depth) + 2);
  for (int g = 0; g <= depth + 1; ++g) lrs[static_cast<std::size_t>(g)] = base_lr * std::pow(layer_decay, depth + 1 - g);
  return lrs;
}

/// Linear warmup to 1 over warmup_epochs, then half-cosine to 0 at
/// total_epochs; `epoch` may be fractional and is clamped past the end.
inline double lr_multiplier(double epoch, int warmup_epochs, int total_epochs) {
  if (epoch < 0) epoch = 0;
  if (warmup_epochs > 0 && epoch < warmup_epochs) return epoch / warmup_epochs;
  const int span = total_epochs - warmup_epochs;
  if (span <= 0) return 0.0;
  const double progress = std::min(1.0, (epoch - warmup_epochs) / span);
  return 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Multiplier at optimizer step `step` with `steps_per_epoch` steps per epoch.
inline double lr_schedule(long step, const TrainConfig& cfg, long steps_per_epoch) {
  if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
  return lr_multiplier(static_cast<double>(step) / static_cast<double>(steps_per_epoch), cfg.warmup_epochs,
                       cfg.total_epochs);
}

/// First and second moments per parameter, aligned with store order.
template <typename T>
struct AdamWState {
  std::vector<Mat<T>> m;
  std::vector<Mat<T>> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Inputs of one update besides the gradients.
struct StepSettings {
  double lr = 0.0;           // peak lr times the schedule multiplier
  double weight_decay = 0.0;
  double clip_grad = 0.0;    // <= 0 disables clipping
  double layer_decay = 1.0;
  int depth = 1;             // encoder depth for group resolution
};

struct StepStats {
  double grad_norm = 0.0;   // before clipping
  double clip_scale = 1.0;  // factor applied to every gradient
};

/// Global-norm clipping in place; returns the pre-clip norm and the factor.
template <typename T>
StepStats clip_gradients(ParamStore<T>& ps, double clip) {
  StepStats s;
  long double acc = 0;
  for (const auto& p : ps.all()) acc += static_cast<long double>(p.grad.template cast<double>().squaredNorm());
  s.grad_norm = static_cast<double>(std::sqrt(acc));
  if (clip > 0 && s.grad_norm > clip) {
    s.clip_scale = clip / s.grad_norm;
    for (auto& p : ps.all()) p.grad *= static_cast<T>(s.clip_scale);
  }
  return s;
}

/// Clip, then one decoupled-decay Adam update. Aborts before touching any
/// parameter when a gradient is not finite.
template <typename T>
StepStats optim_step(ParamStore<T>& ps, AdamWState<T>& st, const StepSettings& cfg) {
  for (const auto& p : ps.all())
    if (!p.grad.allFinite()) throw NonFiniteGradient("non-finite gradient in " + p.name + "; step aborted");
  if (st.m.empty()) {
    for (const auto& p : ps.all()) {
      st.m.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
      st.v.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
    }
  }
  if (st.m.size() != ps.size()) throw ShapeError("optimizer state does not match the parameter store");
  const auto stats = clip_gradients(ps, cfg.clip_grad);
  const auto lrs = layer_lrs(cfg.lr, cfg.layer_decay, cfg.depth);
  ++st.step;
  const T b1 = static_cast<T>(st.beta1);
  const T b2 = static_cast<T>(st.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(st.beta1, static_cast<double>(st.step)));
  const T bc2 = static_cast<T>(1.0 - std::pow(st.beta2, static_cast<double>(st.step)));
  const T eps = static_cast<T>(st.eps);
  std::size_t i = 0;
  for (auto& p : ps.all()) {
    const int g = p.group == kHeadGroup ? cfg.depth + 1 : std::min(p.group, cfg.depth + 1);
    const T lr = static_cast<T>(lrs[static_cast<std::size_t>(g)]);
    auto& m = st.m[i];
    auto& v = st.v[i];
    ++i;
    if (p.decay && cfg.weight_decay > 0) p.value *= T(1) - lr * static_cast<T>(cfg.weight_decay);
    m = b1 * m + (T(1) - b1) * p.grad;
    v = b2 * v + (T(1) - b2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
  return stats;
}

/// Gradient accumulation: zero(), then grad(batch, weight) per micro-batch
/// with weight = batch share of the total, then exactly one step().
/// Returns the weighted mean of the micro-batch losses.
template <typename Batch, typename Zero, typename Grad, typename Step>
double accumulate(std::span<const Batch> micro_batches, Zero&& zero, Grad&& grad, Step&& step) {
  if (micro_batches.empty()) throw ConfigError("accumulate: no micro-batches");
  double total = 0;
  for (const auto& b : micro_batches) total += static_cast<double>(std::size(b));
  if (total <= 0) throw ConfigError("accumulate: empty micro-batches");
  zero();
  double loss = 0;
  for (const auto& b : micro_batches) {
    const double w = static_cast<double>(std::size(b)) / total;
    loss += w * grad(b, w);
  }
  step();
  return loss;
}

}  // namespace affectlab
