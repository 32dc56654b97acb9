#pragma once

// Probability-level model outputs and the decision rule that turns them into
// prediction rows. Every predictor (plain or ensembled) goes through decide().

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "affectlab/core/error.hpp"
#include "affectlab/data/labels.hpp"
#include "affectlab/metrics.hpp"

namespace affectlab {

struct ProbOutput {
  std::vector<double> exp_probs;
  std::array<double, kNumAus> au_probs{};
  double valence = 0.0;  // raw regression output, unclamped
  double arousal = 0.0;
  bool operator==(const ProbOutput&) const = default;
};

/// Softmax in double; the max-shift keeps it finite for any finite logits.
template <typename Row>
std::vector<double> softmax_probs(const Row& logits) {
  const auto k = static_cast<std::size_t>(logits.size());
  std::vector<double> p(k);
  double mx = -INFINITY;
  for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, static_cast<double>(logits(static_cast<Eigen::Index>(i))));
  double s = 0;
  for (std::size_t i = 0; i < k; ++i) {
    p[i] = std::exp(static_cast<double>(logits(static_cast<Eigen::Index>(i))) - mx);
    s += p[i];
  }
  for (auto& v : p) v /= s;
  return p;
}

inline double sigmoid_prob(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

/// First index of the maximum.
inline int argmax(const std::vector<double>& v) {
  if (v.empty()) throw ShapeError("argmax of an empty vector");
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// VA clamped to [-1, 1], expression by argmax, AU flag when probability > 0.5.
inline PredictionRow decide(const ProbOutput& p, std::string id) {
  PredictionRow r;
  r.id = std::move(id);
  r.valence = std::clamp(p.valence, -1.0, 1.0);
  r.arousal = std::clamp(p.arousal, -1.0, 1.0);
  r.expression = argmax(p.exp_probs);
  for (int j = 0; j < kNumAus; ++j) r.au[static_cast<std::size_t>(j)] = p.au_probs[static_cast<std::size_t>(j)] > 0.5 ? 1 : 0;
  return r;
}

/// Running mean over models, element by element. All inputs must agree in
/// row count and class count.
class ProbAverager {
 public:
  void add(const std::vector<ProbOutput>& rows) {
    if (count_ == 0) {
      mean_ = rows;
      count_ = 1;
      return;
    }
    if (rows.size() != mean_.size()) throw ShapeError("ensemble members disagree on row count");
    ++count_;
    const double w = 1.0 / static_cast<double>(count_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto& m = mean_[i];
      const auto& x = rows[i];
      if (x.exp_probs.size() != m.exp_probs.size()) throw ShapeError("ensemble members disagree on class count");
      for (std::size_t k = 0; k < m.exp_probs.size(); ++k) m.exp_probs[k] += (x.exp_probs[k] - m.exp_probs[k]) * w;
      for (std::size_t k = 0; k < m.au_probs.size(); ++k) m.au_probs[k] += (x.au_probs[k] - m.au_probs[k]) * w;
      m.valence += (x.valence - m.valence) * w;
      m.arousal += (x.arousal - m.arousal) * w;
    }
  }
  [[nodiscard]] int count() const noexcept { return count_; }
  [[nodiscard]] const std::vector<ProbOutput>& mean() const noexcept { return mean_; }

 private:
  std::vector<ProbOutput> mean_;
  int count_ = 0;
};

}  // namespace affectlab
