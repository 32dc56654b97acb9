#pragma once

// EMMA: the transformer branch emits AU logits and a first set of expression
// logits, the convolutional scorer emits a second set, and a two-layer VA
// head reads the detached concatenation of all three.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "affectlab/backbone/encoder.hpp"
#include "affectlab/backbone/scorer.hpp"
#include "affectlab/core/autograd.hpp"
#include "affectlab/core/params.hpp"
#include "affectlab/data/labels.hpp"
#include "affectlab/data/patchify.hpp"
#include "affectlab/objectives.hpp"
#include "affectlab/prediction.hpp"

namespace affectlab {

struct EmmaConfig {
  EncoderConfig encoder = tiny_encoder();
  ScorerConfig scorer;            // scorer.classes is K2
  int exp_classes = kMtlClasses;  // K1
  int va_hidden = 32;
  bool exp_sum_variant = false;   // L_EXP on exp1 + exp2

  [[nodiscard]] int feature_dim() const { return kNumAus + exp_classes + scorer.classes; }

  void validate() const {
    encoder.validate();
    if (exp_classes < 2 || scorer.classes < 2) throw ConfigError("expression heads need at least 2 classes");
    if (va_hidden < 1) throw ConfigError("va_hidden must be positive");
    if (exp_sum_variant && exp_classes != scorer.classes)
      throw ConfigError("exp_sum_variant needs K1 == K2");
  }
};

template <typename T>
struct EmmaModel {
  EmmaConfig cfg;
  ParamStore<T> params;
  /// When set, replaces the built-in scorer (its parameters stay untouched).
  ScorerFn<T> scorer_override;
};

template <typename T>
EmmaModel<T> init_emma(const EmmaConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  EmmaModel<T> m;
  m.cfg = cfg;
  Rng rng(seed);
  init_encoder(m.params, cfg.encoder, rng);
  detail::add_linear(m.params, "head", cfg.encoder.embed_dim, kNumAus + cfg.exp_classes, kHeadGroup, rng);
  init_scorer(m.params, cfg.scorer, rng);
  detail::add_linear(m.params, "va_head.fc1", cfg.feature_dim(), cfg.va_hidden, kHeadGroup, rng);
  detail::add_linear(m.params, "va_head.fc2", cfg.va_hidden, 2, kHeadGroup, rng);
  return m;
}

/// Tape-level outputs of one EMMA forward pass.
template <typename T>
struct EmmaGraph {
  Var<T> au;       // batch x 12
  Var<T> exp1;     // batch x K1 (transformer)
  Var<T> exp2;     // batch x K2 (scorer)
  Var<T> feature;  // batch x (12 + K1 + K2), detached
  Var<T> va;       // batch x 2
};

/// Full-token forward on 3x224x224 inputs.
template <typename T>
EmmaGraph<T> emma_graph(Tape<T>& t, EmmaModel<T>& m, std::span<const Image<T>> images, Mode mode, Rng* rng) {
  if (images.empty()) throw ShapeError("emma: empty batch");
  std::vector<TokenView<T>> views;
  views.reserve(images.size());
  for (const auto& img : images) views.push_back(TokenView<T>::from_sequence(patchify(img, m.cfg.encoder.patch_size)));
  auto enc = encode_batch<T>(t, m.params, m.cfg.encoder, views, mode, rng);
  Var<T> head = detail::linear(t, m.params, "head", enc.pooled);

  EmmaGraph<T> g;
  g.au = ag::slice_cols(head, 0, kNumAus);
  g.exp1 = ag::slice_cols(head, kNumAus, m.cfg.exp_classes);
  if (m.scorer_override) {
    Mat<T> s = m.scorer_override(images);
    if (s.rows() != static_cast<Eigen::Index>(images.size()) || s.cols() != m.cfg.scorer.classes)
      throw ShapeError("scorer override returned " + shape_str(s.rows(), s.cols()));
    g.exp2 = t.constant(std::move(s));
  } else if (m.cfg.exp_sum_variant && t.grad_enabled()) {
    g.exp2 = scorer_forward<T>(t, m.params, m.cfg.scorer, images);
  } else {
    // no loss reaches the scorer in this configuration
    Tape<T> frozen(false);
    g.exp2 = t.constant(scorer_forward<T>(frozen, m.params, m.cfg.scorer, images).value());
  }
  g.feature = ag::detach(ag::concat_cols<T>({g.au, g.exp1, g.exp2}));
  Var<T> h = ag::relu(detail::linear(t, m.params, "va_head.fc1", g.feature));
  g.va = detail::linear(t, m.params, "va_head.fc2", h);
  return g;
}

template <typename T>
struct EmmaScores {
  TaskScores<T> scores;  // exp_logits = exp1
  Mat<T> exp2_logits;
  Mat<T> feature;
};

/// Value-level forward without gradient recording.
template <typename T>
EmmaScores<T> emma_forward(std::span<const Image<T>> images, EmmaModel<T>& m, Mode mode = Mode::kEval,
                           Rng* rng = nullptr) {
  Tape<T> t(false);
  auto g = emma_graph(t, m, images, mode, rng);
  return {{g.au.value(), g.exp1.value(), g.va.value()}, g.exp2.value(), g.feature.value()};
}

/// L_AU + L_VA + L_EXP attached to the tape. With exp_sum_variant the
/// expression loss reads exp1 + exp2.
template <typename T>
std::pair<Var<T>, MtlLoss<T>> emma_loss(const EmmaGraph<T>& g, const LabelBatch<T>& labels, bool exp_sum_variant) {
  Var<T> exp_in = exp_sum_variant ? ag::add(g.exp1, g.exp2) : g.exp1;
  TaskScores<T> s{g.au.value(), exp_in.value(), g.va.value()};
  auto l = loss_mtl(s, labels);
  Var<T> total = ag::custom_scalar<T>({g.au, exp_in, g.va}, l.total, {l.grad_au, l.grad_exp, l.grad_va});
  return {total, std::move(l)};
}

template <typename T>
struct EmmaStepResult {
  MtlLoss<T> loss;
  TaskScores<T> scores;  // train-mode outputs, for running metrics
};

/// Forward + backward on one (micro-)batch; gradients scaled by `scale` are
/// added to the parameter gradients. Inputs are already augmented.
template <typename T>
EmmaStepResult<T> emma_backward(EmmaModel<T>& m, std::span<const Image<T>> images, std::span<const Labels> labels,
                                Rng& rng, T scale = T(1)) {
  if (images.size() != labels.size()) throw ShapeError("emma: images and labels differ in count");
  Tape<T> t;
  auto g = emma_graph(t, m, images, Mode::kTrain, &rng);
  auto [total, loss] = emma_loss(g, make_label_batch<T>(labels), m.cfg.exp_sum_variant);
  t.backward(total, scale);
  return {std::move(loss), {g.au.value(), g.exp1.value(), g.va.value()}};
}

/// Per-image probabilities from eval-mode logits.
template <typename T>
std::vector<ProbOutput> emma_probs(std::span<const Image<T>> images, EmmaModel<T>& m) {
  auto s = emma_forward(images, m);
  std::vector<ProbOutput> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    auto& p = out[i];
    p.exp_probs = softmax_probs(s.scores.exp_logits.row(r));
    for (int j = 0; j < kNumAus; ++j) p.au_probs[static_cast<std::size_t>(j)] = sigmoid_prob(s.scores.au_logits(r, j));
    p.valence = static_cast<double>(s.scores.va(r, 0));
    p.arousal = static_cast<double>(s.scores.va(r, 1));
  }
  return out;
}

template <typename T>
std::vector<PredictionRow> emma_predict(std::span<const Image<T>> images, EmmaModel<T>& m,
                                        const std::vector<std::string>& ids) {
  if (ids.size() != images.size()) throw ShapeError("emma_predict: ids and images differ in count");
  const auto probs = emma_probs(images, m);
  std::vector<PredictionRow> rows;
  rows.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) rows.push_back(decide(probs[i], ids[i]));
  return rows;
}

}  // namespace affectlab
