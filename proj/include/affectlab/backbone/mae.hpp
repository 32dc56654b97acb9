#pragma once

// Masked-autoencoder pretraining for the encoder: visible patches are
// encoded, a light decoder sees encoded tokens plus a shared mask token at
// every hidden position, and the loss is the MSE against per-patch normalized
// pixels over the hidden patches only.

#include <span>
#include <string>
#include <vector>

#include "affectlab/backbone/encoder.hpp"
#include "affectlab/core/autograd.hpp"
#include "affectlab/data/masking.hpp"
#include "affectlab/data/patchify.hpp"
#include "affectlab/objectives.hpp"

namespace affectlab {

struct MaeDecoderConfig {
  int dim = 128;
  int depth = 2;
  int heads = 4;
  double mlp_ratio = 4.0;
  [[nodiscard]] int hidden_dim() const { return static_cast<int>(std::lround(dim * mlp_ratio)); }
};

inline constexpr double kMaePatchStdEps = 1e-6;
inline constexpr double kMaeDefaultMaskRatio = 0.75;

template <typename T>
void init_mae_decoder(ParamStore<T>& ps, const EncoderConfig& enc, const MaeDecoderConfig& dec, Rng& rng,
                      const std::string& prefix = "decoder.") {
  detail::add_linear(ps, prefix + "embed", enc.embed_dim, dec.dim, kHeadGroup, rng);
  std::normal_distribution<double> nd(0.0, 0.02);
  Mat<T> mask(1, dec.dim);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = static_cast<T>(nd(rng));
  ps.add(prefix + "mask_token", std::move(mask), kHeadGroup, false);
  add_transformer_blocks(ps, prefix, dec.dim, dec.depth, dec.hidden_dim(), -1, rng);
  detail::add_norm(ps, prefix + "norm", dec.dim, kHeadGroup);
  detail::add_linear(ps, prefix + "pred", dec.dim, enc.token_length(), kHeadGroup, rng);
}

/// Each token normalized by its own mean and (population std + 1e-6).
template <typename T>
Mat<T> normalized_patch_targets(const Mat<T>& tokens) {
  Mat<T> out(tokens.rows(), tokens.cols());
  for (Eigen::Index r = 0; r < tokens.rows(); ++r) {
    const T mean = tokens.row(r).mean();
    const T sd = std::sqrt((tokens.row(r).array() - mean).square().mean());
    out.row(r) = (tokens.row(r).array() - mean) / (sd + static_cast<T>(kMaePatchStdEps));
  }
  return out;
}

/// MSE over the rows flagged in `hidden`, averaged per pixel then per patch.
template <typename T>
LossGrad<T> mae_reconstruction_loss(const Mat<T>& pred, const Mat<T>& target, const std::vector<bool>& hidden) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols() ||
      static_cast<std::size_t>(pred.rows()) != hidden.size())
    throw ShapeError("mae_reconstruction_loss: shape mismatch");
  LossGrad<T> out{T(0), Mat<T>::Zero(pred.rows(), pred.cols())};
  const auto count = std::count(hidden.begin(), hidden.end(), true);
  if (count == 0) return out;
  const T inv = T(1) / (static_cast<T>(count) * static_cast<T>(pred.cols()));
  for (Eigen::Index r = 0; r < pred.rows(); ++r) {
    if (!hidden[static_cast<std::size_t>(r)]) continue;
    const auto diff = (pred.row(r) - target.row(r)).eval();
    out.value += diff.squaredNorm() * inv;
    out.grad.row(r) = T(2) * diff * inv;
  }
  return out;
}

struct MaeStepStats {
  double loss = 0.0;
  int hidden_patches = 0;  // summed over the batch
};

/// Builds the MAE loss on the tape for explicit visible sets (one per image).
template <typename T>
Var<T> mae_loss(Tape<T>& t, ParamStore<T>& ps, const EncoderConfig& enc, const MaeDecoderConfig& dec,
                std::span<const PatchSequence<T>> seqs, Mode mode, Rng* rng, MaeStepStats* stats = nullptr) {
  std::vector<TokenView<T>> views;
  views.reserve(seqs.size());
  for (const auto& s : seqs) views.push_back(TokenView<T>::from_sequence(s));
  auto encoded = encode_batch<T>(t, ps, enc, views, mode, rng);
  Var<T> d = detail::linear(t, ps, "decoder.embed", encoded.tokens);
  const int visible_rows = static_cast<int>(d.rows());
  Var<T> pool = ag::concat_rows<T>({d, t.param(ps.at("decoder.mask_token"))});

  std::vector<int> order;
  Segments segs;
  std::vector<bool> hidden;
  Mat<T> targets;
  Mat<T> pos;
  {
    int total = 0;
    for (const auto& s : seqs) total += s.total();
    targets.resize(total, enc.token_length());
    pos.resize(total, dec.dim);
  }
  int off = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto& s = seqs[i];
    const int n = s.total();
    std::vector<int> slot(static_cast<std::size_t>(n), visible_rows);  // default: mask token
    for (std::size_t k = 0; k < s.kept.size(); ++k)
      slot[static_cast<std::size_t>(s.kept[k])] = encoded.segments[i].offset + static_cast<int>(k);
    const Mat<T> table = sincos_2d<T>(s.grid_rows, s.grid_cols, dec.dim);
    const Mat<T> norm_targets = normalized_patch_targets(s.tokens);
    for (int p = 0; p < n; ++p) {
      order.push_back(slot[static_cast<std::size_t>(p)]);
      hidden.push_back(slot[static_cast<std::size_t>(p)] == visible_rows);
    }
    targets.middleRows(off, n) = norm_targets;
    pos.middleRows(off, n) = table;
    segs.push_back({off, n});
    off += n;
  }
  Var<T> h = ag::add_constant(ag::gather_rows(pool, std::move(order)), pos);
  h = run_transformer_blocks(t, ps, "decoder.", h, segs, dec.depth, dec.heads, 0.0, mode, rng);
  h = detail::norm(t, ps, "decoder.norm", h);
  Var<T> pred = detail::linear(t, ps, "decoder.pred", h);
  auto lg = mae_reconstruction_loss(pred.value(), targets, hidden);
  if (stats) {
    stats->loss = static_cast<double>(lg.value);
    stats->hidden_patches = static_cast<int>(std::count(hidden.begin(), hidden.end(), true));
  }
  return ag::custom_scalar<T>({pred}, lg.value, {std::move(lg.grad)});
}

/// One pretraining step: masks each image independently, zeroes the
/// gradients, runs forward and backward. Gradients are left in `ps`.
template <typename T>
MaeStepStats mae_pretrain_step(ParamStore<T>& ps, const EncoderConfig& enc, const MaeDecoderConfig& dec,
                               std::span<const Image<T>> images, double mask_ratio, Rng& rng,
                               Mode mode = Mode::kTrain) {
  if (mask_ratio < 0.0 || mask_ratio >= 1.0)
    throw ConfigError("MAE mask ratio must lie in [0, 1): no visible tokens at ratio 1");
  std::vector<PatchSequence<T>> seqs;
  for (const auto& img : images) {
    auto s = patchify(img, enc.patch_size);
    s.kept = sample_mask(MaskSpec::make(mask_ratio, s.total()), rng);
    seqs.push_back(std::move(s));
  }
  ps.zero_grad();
  Tape<T> t;
  MaeStepStats stats;
  auto loss = mae_loss<T>(t, ps, enc, dec, seqs, mode, &rng, &stats);
  t.backward(loss);
  return stats;
}

}  // namespace affectlab
