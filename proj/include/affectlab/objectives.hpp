#pragma once

// Training objectives. Every loss returns its value together with the
// analytic gradient with respect to its prediction inputs; the model code
// attaches those to the tape with ag::custom_scalar. Natural log throughout.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "affectlab/core/autograd.hpp"
#include "affectlab/core/error.hpp"
#include "affectlab/core/tensor.hpp"
#include "affectlab/data/labels.hpp"

namespace affectlab {

template <typename T>
struct LossGrad {
  T value = 0;
  Mat<T> grad;  // d value / d predictions, same shape as the predictions
};

// ---------------------------------------------------------------------------
// small numerics

template <typename T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <typename T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Mat<T> log_softmax_rows(const Mat<T>& z) {
  Mat<T> out(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const T mx = z.row(r).maxCoeff();
    const T lse = mx + std::log((z.row(r).array() - mx).exp().sum());
    out.row(r) = z.row(r).array() - lse;
  }
  return out;
}

template <typename T>
Mat<T> softmax_rows(const Mat<T>& z) {
  return log_softmax_rows(z).array().exp().matrix();
}

/// Shannon entropy in nats with 0 log 0 := 0.
template <typename T>
T entropy(std::span<const T> p) {
  T h = 0;
  for (T v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

// ---------------------------------------------------------------------------
// AU: masked binary cross-entropy

/// Mean over valid rows of the per-row BCE averaged over columns; 0 when no
/// row is valid. Any column count is accepted.
template <typename T>
LossGrad<T> masked_bce(const Mat<T>& logits, const Mat<T>& targets, const std::vector<bool>& valid) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols() ||
      static_cast<std::size_t>(logits.rows()) != valid.size())
    throw ShapeError("masked_bce: logits/targets/valid shape mismatch");
  LossGrad<T> out{T(0), Mat<T>::Zero(logits.rows(), logits.cols())};
  const auto n_valid = std::count(valid.begin(), valid.end(), true);
  if (n_valid == 0) return out;
  const T inv = T(1) / (static_cast<T>(n_valid) * static_cast<T>(logits.cols()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (!valid[static_cast<std::size_t>(r)]) continue;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      const T p = logits(r, j);
      const T y = targets(r, j);
      out.value += (softplus(p) - y * p) * inv;
      out.grad(r, j) = (sigmoid(p) - y) * inv;
    }
  }
  return out;
}

template <typename T>
LossGrad<T> loss_au(const Mat<T>& logits, const Mat<T>& targets, const std::vector<bool>& valid) {
  if (logits.cols() != kNumAus)
    throw ShapeError("loss_au: expected " + std::to_string(kNumAus) + " logits, got " + std::to_string(logits.cols()));
  return masked_bce(logits, targets, valid);
}

// ---------------------------------------------------------------------------
// EXPR: cross-entropy with -1 sentinel

template <typename T>
LossGrad<T> loss_exp(const Mat<T>& logits, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) throw ShapeError("loss_exp: batch size mismatch");
  const auto k = logits.cols();
  LossGrad<T> out{T(0), Mat<T>::Zero(logits.rows(), k)};
  int n_valid = 0;
  for (int y : labels) {
    if (y >= k || y < kExpSentinel)
      throw DataError("loss_exp: invalid expression label " + std::to_string(y) + " for " + std::to_string(k) +
                      " classes");
    if (y >= 0) ++n_valid;
  }
  if (n_valid == 0) return out;
  const Mat<T> logp = log_softmax_rows(logits);
  const T inv = T(1) / static_cast<T>(n_valid);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0) continue;
    out.value -= logp(r, y) * inv;
    out.grad.row(r) = logp.row(r).array().exp() * inv;
    out.grad(r, y) -= inv;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CCC

inline constexpr double kCccDenominatorFloor = 1e-12;

/// Concordance correlation coefficient in covariance form with population
/// statistics. Returns 0 when the denominator falls below 1e-12.
template <typename T>
T ccc(std::span<const T> x, std::span<const T> y) {
  if (x.size() != y.size()) throw ShapeError("ccc: length mismatch");
  if (x.size() < 2) throw ShapeError("ccc: need at least 2 samples");
  const T n = static_cast<T>(x.size());
  T mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  T sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T dx = x[i] - mx;
    const T dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  sxx /= n;
  syy /= n;
  sxy /= n;
  const T den = sxx + syy + (mx - my) * (mx - my);
  if (den < static_cast<T>(kCccDenominatorFloor)) return T(0);
  return T(2) * sxy / den;
}

/// ccc(x, y) and its gradient with respect to x.
template <typename T>
std::pair<T, std::vector<T>> ccc_with_grad(std::span<const T> x, std::span<const T> y) {
  const T c = ccc(x, y);
  const std::size_t m = x.size();
  const T n = static_cast<T>(m);
  T mx = 0, my = 0;
  for (std::size_t i = 0; i < m; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  T sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  sxx /= n;
  syy /= n;
  sxy /= n;
  const T num = T(2) * sxy;
  const T den = sxx + syy + (mx - my) * (mx - my);
  std::vector<T> g(m, T(0));
  if (den < static_cast<T>(kCccDenominatorFloor)) return {c, g};
  for (std::size_t i = 0; i < m; ++i) {
    const T dnum = T(2) * (y[i] - my) / n;
    const T dden = T(2) * (x[i] - mx) / n + T(2) * (mx - my) / n;
    g[i] = (dnum * den - num * dden) / (den * den);
  }
  return {c, g};
}

template <typename T>
struct VaLoss : LossGrad<T> {
  bool skipped = false;  // fewer than two valid rows
  T ccc_valence = 0;
  T ccc_arousal = 0;
};

/// 1 - (CCC_A + CCC_V) over the valid rows of the batch. Predictions and
/// labels are (batch x 2) with columns (valence, arousal).
template <typename T>
VaLoss<T> loss_va(const Mat<T>& pred, const Mat<T>& labels, const std::vector<bool>& valid) {
  if (pred.cols() != 2 || labels.cols() != 2 || pred.rows() != labels.rows() ||
      static_cast<std::size_t>(pred.rows()) != valid.size())
    throw ShapeError("loss_va: expected (batch x 2) predictions and labels");
  VaLoss<T> out;
  out.grad = Mat<T>::Zero(pred.rows(), 2);
  std::vector<Eigen::Index> rows;
  for (Eigen::Index r = 0; r < pred.rows(); ++r)
    if (valid[static_cast<std::size_t>(r)]) rows.push_back(r);
  if (rows.size() < 2) {
    out.skipped = true;
    return out;
  }
  T total_ccc = 0;
  for (int axis = 0; axis < 2; ++axis) {
    std::vector<T> x, y;
    for (auto r : rows) {
      x.push_back(pred(r, axis));
      y.push_back(labels(r, axis));
    }
    auto [c, g] = ccc_with_grad<T>(x, y);
    (axis == 0 ? out.ccc_valence : out.ccc_arousal) = c;
    total_ccc += c;
    for (std::size_t i = 0; i < rows.size(); ++i) out.grad(rows[i], axis) = -g[i];
  }
  out.value = T(1) - total_ccc;
  return out;
}

// ---------------------------------------------------------------------------
// Multi-task sum

template <typename T>
struct TaskScores {
  Mat<T> au_logits;   // batch x 12
  Mat<T> exp_logits;  // batch x K
  Mat<T> va;          // batch x 2
};

/// Batch labels in matrix form plus validity flags.
template <typename T>
struct LabelBatch {
  Mat<T> au;                 // batch x 12
  std::vector<bool> au_valid;
  std::vector<int> exp;      // -1 where invalid
  Mat<T> va;                 // batch x 2
  std::vector<bool> va_valid;

  [[nodiscard]] std::size_t size() const noexcept { return exp.size(); }
};

template <typename T>
LabelBatch<T> make_label_batch(std::span<const Labels> labels) {
  LabelBatch<T> b;
  const auto n = static_cast<Eigen::Index>(labels.size());
  b.au = Mat<T>::Zero(n, kNumAus);
  b.va = Mat<T>::Zero(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& l = labels[static_cast<std::size_t>(i)];
    const auto v = label_validity(l);
    for (int j = 0; j < kNumAus; ++j) b.au(i, j) = static_cast<T>(l.au.values[static_cast<std::size_t>(j)]);
    b.au_valid.push_back(v.au);
    b.exp.push_back(v.exp ? l.expression.index : kExpSentinel);
    b.va(i, 0) = static_cast<T>(l.va.valence);
    b.va(i, 1) = static_cast<T>(l.va.arousal);
    b.va_valid.push_back(v.va);
  }
  return b;
}

template <typename T>
struct MtlLoss {
  T total = 0;
  T au = 0;
  T exp = 0;
  T va = 0;
  bool va_skipped = false;
  Mat<T> grad_au;
  Mat<T> grad_exp;
  Mat<T> grad_va;
};

/// Unweighted L_AU + L_VA + L_EXP.
template <typename T>
MtlLoss<T> loss_mtl(const TaskScores<T>& s, const LabelBatch<T>& labels) {
  auto au = loss_au(s.au_logits, labels.au, labels.au_valid);
  auto ex = loss_exp(s.exp_logits, labels.exp);
  auto va = loss_va(s.va, labels.va, labels.va_valid);
  MtlLoss<T> out;
  out.au = au.value;
  out.exp = ex.value;
  out.va = va.value;
  out.va_skipped = va.skipped;
  out.total = out.au + out.va + out.exp;
  out.grad_au = std::move(au.grad);
  out.grad_exp = std::move(ex.grad);
  out.grad_va = std::move(va.grad);
  return out;
}

// ---------------------------------------------------------------------------
// JS divergence and the co-training objective

/// H(m) - (H(p) + H(q)) / 2 with m = (p + q) / 2, in nats. Clamped to the
/// analytic range [0, ln 2] to absorb rounding.
template <typename T>
T js_divergence(std::span<const T> p, std::span<const T> q) {
  if (p.size() != q.size()) throw ShapeError("js_divergence: length mismatch");
  T acc = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] == q[k]) continue;  // contributes exactly 0; fused rounding would not
    const T m = (p[k] + q[k]) / T(2);
    const T plp = p[k] > 0 ? p[k] * std::log(p[k]) : T(0);
    const T qlq = q[k] > 0 ? q[k] * std::log(q[k]) : T(0);
    // commutative sum keeps the result bit-symmetric in (p, q)
    acc += (plp + qlq) / T(2) - (m > 0 ? m * std::log(m) : T(0));
  }
  return std::clamp(acc, T(0), std::numbers::ln2_v<T>);
}

/// Batch-mean JS between softmax(z1) and softmax(z2) and its gradients with
/// respect to both logit matrices.
template <typename T>
struct JsBatch {
  T value = 0;
  Mat<T> grad1;
  Mat<T> grad2;
  std::vector<T> per_sample;
};

template <typename T>
JsBatch<T> js_from_logits(const Mat<T>& z1, const Mat<T>& z2) {
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols()) throw ShapeError("js_from_logits: shape mismatch");
  const Mat<T> lp = log_softmax_rows(z1);
  const Mat<T> lq = log_softmax_rows(z2);
  const Mat<T> p = lp.array().exp().matrix();
  const Mat<T> q = lq.array().exp().matrix();
  JsBatch<T> out;
  out.grad1 = Mat<T>::Zero(z1.rows(), z1.cols());
  out.grad2 = Mat<T>::Zero(z1.rows(), z1.cols());
  const auto n = z1.rows();
  if (n == 0) return out;
  const T inv = T(1) / static_cast<T>(n);
  const T ln2 = std::numbers::ln2_v<T>;
  for (Eigen::Index r = 0; r < n; ++r) {
    std::vector<T> pr(p.row(r).data(), p.row(r).data() + p.cols());
    std::vector<T> qr(q.row(r).data(), q.row(r).data() + q.cols());
    const T js = js_divergence<T>(pr, qr);
    out.per_sample.push_back(js);
    out.value += js * inv;
    // dJS/dp_k = (log p_k - log m_k) / 2, then through the softmax Jacobian
    RowVec<T> lm(z1.cols());
    for (Eigen::Index k = 0; k < z1.cols(); ++k) {
      const T a = std::max(lp(r, k), lq(r, k));
      const T b = std::min(lp(r, k), lq(r, k));
      lm(k) = a + std::log1p(std::exp(b - a)) - ln2;
    }
    const RowVec<T> gp = (lp.row(r) - lm) / T(2);
    const RowVec<T> gq = (lq.row(r) - lm) / T(2);
    out.grad1.row(r) = p.row(r).array() * (gp.array() - p.row(r).dot(gp)) * inv;
    out.grad2.row(r) = q.row(r).array() * (gq.array() - q.row(r).dot(gq)) * inv;
  }
  return out;
}

template <typename T>
struct CotexLoss {
  T total = 0;
  T js = 0;
  T h1 = 0;
  T h2 = 0;
  Mat<T> grad1;
  Mat<T> grad2;
};

/// lambda * mean JS(softmax(z1), softmax(z2)) + CE(z1) + CE(z2).
template <typename T>
CotexLoss<T> loss_cotex(const Mat<T>& z1, const Mat<T>& z2, const std::vector<int>& labels, T lambda) {
  if (lambda < 0) throw ConfigError("loss_cotex: lambda must be non-negative");
  auto js = js_from_logits(z1, z2);
  auto h1 = loss_exp(z1, labels);
  auto h2 = loss_exp(z2, labels);
  CotexLoss<T> out;
  out.js = js.value;
  out.h1 = h1.value;
  out.h2 = h2.value;
  out.total = lambda * js.value + h1.value + h2.value;
  out.grad1 = lambda * js.grad1 + h1.grad;
  out.grad2 = lambda * js.grad2 + h2.grad;
  return out;
}

}  // namespace affectlab
