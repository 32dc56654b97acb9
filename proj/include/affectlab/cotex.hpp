#pragma once

// Masked co-training: two encoders with their own heads each see an
// independently masked view of the same image; training couples them through
// the JS term, inference averages their full-view softmax outputs.

#include <array>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "affectlab/backbone/checkpoint.hpp"
#include "affectlab/backbone/encoder.hpp"
#include "affectlab/core/autograd.hpp"
#include "affectlab/core/params.hpp"
#include "affectlab/data/labels.hpp"
#include "affectlab/data/masking.hpp"
#include "affectlab/data/patchify.hpp"
#include "affectlab/objectives.hpp"
#include "affectlab/prediction.hpp"

namespace affectlab {

struct CotexConfig {
  EncoderConfig encoder = tiny_encoder();
  int classes = kLsdClasses;

  void validate() const {
    encoder.validate();
    if (classes < 2) throw ConfigError("co-training head needs at least 2 classes");
  }
};

/// Two full encoder + head parameter sets with identical names and shapes.
template <typename T>
struct TwinParams {
  CotexConfig cfg;
  std::array<ParamStore<T>, 2> views;
};

/// Both encoders start from `encoder_init` (or from one shared random draw
/// when it is null); heads are drawn from independent streams.
template <typename T>
TwinParams<T> init_twin(const CotexConfig& cfg, std::uint64_t seed, const ParamStore<T>* encoder_init = nullptr) {
  cfg.validate();
  TwinParams<T> tw;
  tw.cfg = cfg;
  Rng enc_rng(seed);
  ParamStore<T> shared;
  init_encoder(shared, cfg.encoder, enc_rng);
  for (int v = 0; v < 2; ++v) {
    auto& ps = tw.views[static_cast<std::size_t>(v)];
    for (const auto& p : shared.all()) ps.add(p.name, p.value, p.group, p.decay);
    if (encoder_init) transfer_encoder(ps, *encoder_init);
    Rng head_rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(v + 1)));
    detail::add_linear(ps, "head", cfg.encoder.embed_dim, cfg.classes, kHeadGroup, head_rng);
  }
  return tw;
}

/// Logits of one view for explicit visible sets.
template <typename T>
Var<T> view_logits(Tape<T>& t, ParamStore<T>& ps, const CotexConfig& cfg, std::span<const TokenView<T>> views,
                   Mode mode, Rng* rng) {
  auto enc = encode_batch<T>(t, ps, cfg.encoder, views, mode, rng);
  return detail::linear(t, ps, "head", enc.pooled);
}

struct CotexStepStats {
  double total = 0.0;
  double js = 0.0;
  double h1 = 0.0;
  double h2 = 0.0;
  int tokens_per_view = 0;  // visible tokens per image per view
};

/// Visible-token sets of one view, one entry per image.
using MaskSet = std::vector<std::vector<int>>;

template <typename T>
struct CotexBatchOut {
  CotexStepStats stats;
  Mat<T> logits1;
  Mat<T> logits2;
};

/// Forward + backward of the co-training loss for given masks. Gradients
/// scaled by `scale` are added to both views' parameter gradients.
template <typename T>
CotexBatchOut<T> cotex_backward_masked(TwinParams<T>& tw, std::span<const Image<T>> images,
                                       const std::vector<int>& labels, T lambda, const MaskSet& masks1,
                                       const MaskSet& masks2, Rng& rng, T scale = T(1)) {
  if (images.size() != labels.size() || masks1.size() != images.size() || masks2.size() != images.size())
    throw ShapeError("co-training batch: images, labels and masks differ in count");
  std::array<std::vector<TokenView<T>>, 2> views;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto seq = patchify(images[i], tw.cfg.encoder.patch_size);
    for (int v = 0; v < 2; ++v) {
      seq.kept = v == 0 ? masks1[i] : masks2[i];
      views[static_cast<std::size_t>(v)].push_back(TokenView<T>::from_sequence(seq));
    }
  }
  Tape<T> t;
  Var<T> z1 = view_logits<T>(t, tw.views[0], tw.cfg, views[0], Mode::kTrain, &rng);
  Var<T> z2 = view_logits<T>(t, tw.views[1], tw.cfg, views[1], Mode::kTrain, &rng);
  auto l = loss_cotex(z1.value(), z2.value(), labels, lambda);
  Var<T> total = ag::custom_scalar<T>({z1, z2}, l.total, {l.grad1, l.grad2});
  t.backward(total, scale);
  CotexBatchOut<T> out;
  out.stats = {static_cast<double>(l.total), static_cast<double>(l.js), static_cast<double>(l.h1),
               static_cast<double>(l.h2), static_cast<int>(masks1.front().size())};
  out.logits1 = z1.value();
  out.logits2 = z2.value();
  return out;
}

/// Draws two independent masks per image, then runs cotex_backward_masked.
template <typename T>
CotexBatchOut<T> cotex_backward(TwinParams<T>& tw, std::span<const Image<T>> images, const std::vector<int>& labels,
                                T lambda, double mask_ratio, Rng& rng, T scale = T(1)) {
  if (images.empty()) throw ShapeError("co-training batch is empty");
  const int ps = tw.cfg.encoder.patch_size;
  const int n = (images.front().height / ps) * (images.front().width / ps);
  const auto spec = MaskSpec::make(mask_ratio, n);
  MaskSet m1, m2;
  for (std::size_t i = 0; i < images.size(); ++i) {
    m1.push_back(sample_mask(spec, rng));
    m2.push_back(sample_mask(spec, rng));
  }
  return cotex_backward_masked(tw, images, labels, lambda, m1, m2, rng, scale);
}

/// Eval-mode full-view logits of one view.
template <typename T>
Mat<T> view_eval_logits(ParamStore<T>& ps, const CotexConfig& cfg, std::span<const Image<T>> images) {
  std::vector<TokenView<T>> views;
  for (const auto& img : images) views.push_back(TokenView<T>::from_sequence(patchify(img, cfg.encoder.patch_size)));
  Tape<T> t(false);
  return view_logits<T>(t, ps, cfg, views, Mode::kEval, nullptr).value();
}

/// Per-view softmax outputs on unmasked inputs.
template <typename T>
std::array<std::vector<std::vector<double>>, 2> cotex_view_probs(std::span<const Image<T>> images, TwinParams<T>& tw) {
  std::array<std::vector<std::vector<double>>, 2> out;
  for (int v = 0; v < 2; ++v) {
    const Mat<T> z = view_eval_logits(tw.views[static_cast<std::size_t>(v)], tw.cfg, images);
    for (Eigen::Index r = 0; r < z.rows(); ++r) out[static_cast<std::size_t>(v)].push_back(softmax_probs(z.row(r)));
  }
  return out;
}

/// Mean of the two views' probabilities.
inline std::vector<double> average_views(const std::vector<double>& p1, const std::vector<double>& p2) {
  if (p1.size() != p2.size()) throw ShapeError("views disagree on class count");
  std::vector<double> m(p1.size());
  for (std::size_t k = 0; k < p1.size(); ++k) m[k] = (p1[k] + p2[k]) / 2.0;
  return m;
}

template <typename T>
std::vector<ProbOutput> cotex_probs(std::span<const Image<T>> images, TwinParams<T>& tw) {
  const auto vp = cotex_view_probs(images, tw);
  std::vector<ProbOutput> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out[i].exp_probs = average_views(vp[0][i], vp[1][i]);
  return out;
}

template <typename T>
std::vector<PredictionRow> cotex_predict(std::span<const Image<T>> images, TwinParams<T>& tw,
                                         const std::vector<std::string>& ids) {
  if (ids.size() != images.size()) throw ShapeError("cotex_predict: ids and images differ in count");
  const auto probs = cotex_probs(images, tw);
  std::vector<PredictionRow> rows;
  for (std::size_t i = 0; i < probs.size(); ++i) rows.push_back(decide(probs[i], ids[i]));
  return rows;
}

}  // namespace affectlab
