#pragma once

// Stand-in expression scorer: four strided 3x3 conv blocks with ReLU, an
// adaptive average pool that keeps a coarse spatial layout, and a linear
// classifier. Any image -> logits function can replace it (see ScorerFn).

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "affectlab/backbone/encoder.hpp"
#include "affectlab/core/autograd.hpp"
#include "affectlab/core/params.hpp"

namespace affectlab {

struct ScorerConfig {
  std::array<int, 4> channels = {16, 32, 64, 64};
  int pool = 4;
  int classes = 8;
  bool operator==(const ScorerConfig&) const = default;
};

/// Pluggable scorer: batch of images -> (batch x K) logits, no gradients.
template <typename T>
using ScorerFn = std::function<Mat<T>(std::span<const Image<T>>)>;

template <typename T>
struct ScorerOutput {
  RowVec<T> exp_logits;
};

template <typename T>
void init_scorer(ParamStore<T>& ps, const ScorerConfig& cfg, Rng& rng, const std::string& prefix = "cnn.") {
  int cin = 3;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const int cout = cfg.channels[i];
    // He-uniform for ReLU stacks
    const double a = std::sqrt(6.0 / (9.0 * cin));
    std::uniform_real_distribution<double> u(-a, a);
    Mat<T> w(9 * cin, cout);
    for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = static_cast<T>(u(rng));
    ps.add(prefix + "conv" + std::to_string(i) + ".weight", std::move(w), kHeadGroup, true);
    ps.add(prefix + "conv" + std::to_string(i) + ".bias", Mat<T>::Zero(1, cout), kHeadGroup, false);
    cin = cout;
  }
  detail::add_linear(ps, prefix + "fc", cfg.pool * cfg.pool * cin, cfg.classes, kHeadGroup, rng);
}

/// Channels-last stacking: (batch * H * W) x 3.
template <typename T>
Mat<T> stack_channels_last(std::span<const Image<T>> images) {
  const auto& f = images.front();
  Mat<T> x(static_cast<Eigen::Index>(images.size()) * f.height * f.width, f.channels);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& im = images[n];
    if (im.channels != 3 || im.height != f.height || im.width != f.width)
      throw ShapeError("scorer batch must hold equally sized 3-channel images");
    for (int y = 0; y < im.height; ++y)
      for (int xx = 0; xx < im.width; ++xx) {
        const Eigen::Index row = (static_cast<Eigen::Index>(n) * im.height + y) * im.width + xx;
        for (int c = 0; c < 3; ++c) x(row, c) = im.at(c, y, xx);
      }
  }
  return x;
}

template <typename T>
Var<T> scorer_forward(Tape<T>& t, ParamStore<T>& ps, const ScorerConfig& cfg, std::span<const Image<T>> images,
                      const std::string& prefix = "cnn.") {
  if (images.empty()) throw ShapeError("scorer: empty batch");
  const auto& f = images.front();
  if (f.channels != 3) throw ShapeError("scorer expects 3-channel images");
  if (f.height < 16 || f.width < 16) throw ShapeError("scorer input too small");
  ag::MapShape shape{static_cast<int>(images.size()), f.height, f.width};
  Var<T> h = t.constant(stack_channels_last(images));
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::string n = prefix + "conv" + std::to_string(i);
    ag::MapShape out;
    h = ag::conv2d(h, shape, t.param(ps.at(n + ".weight")), t.param(ps.at(n + ".bias")), ag::ConvGeometry{3, 2, 1},
                   &out);
    h = ag::relu(h);
    shape = out;
  }
  h = ag::adaptive_avg_pool(h, shape, cfg.pool, cfg.pool);
  return detail::linear(t, ps, prefix + "fc", h);
}

/// Eval-mode logits for one image.
template <typename T>
ScorerOutput<T> cnn_score(const Image<T>& image, ParamStore<T>& ps, const ScorerConfig& cfg,
                          const std::string& prefix = "cnn.") {
  if (image.channels != 3) throw ShapeError("cnn_score: expected 3 channels, got " + std::to_string(image.channels));
  Tape<T> t(false);
  auto logits = scorer_forward<T>(t, ps, cfg, std::span<const Image<T>>(&image, 1), prefix);
  return {logits.value().row(0)};
}

}  // namespace affectlab
