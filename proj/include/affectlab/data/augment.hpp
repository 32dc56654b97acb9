#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "affectlab/core/error.hpp"
#include "affectlab/core/tensor.hpp"

namespace affectlab {

using Rng = std::mt19937_64;

inline constexpr int kImageSize = 224;
inline constexpr int kMtlResize = 232;
inline constexpr int kLsdResize = 228;
inline constexpr int kMinInputSize = 112;
inline constexpr double kJitterLow = 0.6;
inline constexpr double kJitterHigh = 1.4;

enum class AugmentMode { kTrainMtl, kTrainLsd, kEval };

/// What augment() actually did; useful for tests and debugging.
struct AugmentTrace {
  int crop_y = 0;
  int crop_x = 0;
  bool flipped = false;
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
};

/// Bilinear resize with half-pixel centers (align_corners = false).
template <typename T>
Image<T> resize_bilinear(const Image<T>& src, int out_h, int out_w) {
  Image<T> dst(src.channels, out_h, out_w);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < src.channels; ++c) {
        const double top = (1 - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1);
        const double bot = (1 - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1);
        dst.at(c, y, x) = static_cast<T>((1 - wy) * top + wy * bot);
      }
    }
  }
  return dst;
}

template <typename T>
Image<T> crop(const Image<T>& src, int y0, int x0, int h, int w) {
  Image<T> dst(src.channels, h, w);
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) dst.at(c, y, x) = src.at(c, y0 + y, x0 + x);
  return dst;
}

template <typename T>
void flip_horizontal(Image<T>& img) {
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, img.width - 1 - x));
}

namespace detail {

template <typename T>
T luma(const Image<T>& img, int y, int x) {
  return static_cast<T>(0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x));
}

template <typename T>
void clamp_unit(Image<T>& img) {
  for (auto& v : img.data) v = std::clamp(v, T(0), T(1));
}

}  // namespace detail

/// Brightness, then contrast (around mean luma), then saturation (towards
/// per-pixel luma); the image is clamped to [0, 1] after each stage.
template <typename T>
void color_jitter(Image<T>& img, double brightness, double contrast, double saturation) {
  for (auto& v : img.data) v = static_cast<T>(v * brightness);
  detail::clamp_unit(img);

  double mean = 0;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) mean += detail::luma(img, y, x);
  mean /= static_cast<double>(img.height) * img.width;
  for (auto& v : img.data) v = static_cast<T>((v - mean) * contrast + mean);
  detail::clamp_unit(img);

  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double g = detail::luma(img, y, x);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<T>(g + (img.at(c, y, x) - g) * saturation);
    }
  detail::clamp_unit(img);
}

/// Produces a 3x224x224 network input. Training modes resize to 232 (MTL) or
/// 228 (LSD), random-crop 224, flip with p = 0.5 and color-jitter; eval
/// resizes straight to 224 and never touches the rng.
template <typename T>
Image<T> augment(const Image<T>& raw, AugmentMode mode, Rng& rng, AugmentTrace* trace = nullptr) {
  if (raw.channels != 3) throw DataError("malformed image: expected 3 channels, got " + std::to_string(raw.channels));
  if (raw.height != raw.width || raw.height < kMinInputSize)
    throw DataError("malformed image: expected square input of at least 112 pixels, got " +
                    std::to_string(raw.height) + "x" + std::to_string(raw.width));
  AugmentTrace tr;
  if (mode == AugmentMode::kEval) {
    if (trace) *trace = tr;
    return resize_bilinear(raw, kImageSize, kImageSize);
  }
  const int side = mode == AugmentMode::kTrainMtl ? kMtlResize : kLsdResize;
  Image<T> big = resize_bilinear(raw, side, side);
  std::uniform_int_distribution<int> origin(0, side - kImageSize);
  tr.crop_y = origin(rng);
  tr.crop_x = origin(rng);
  Image<T> out = crop(big, tr.crop_y, tr.crop_x, kImageSize, kImageSize);
  std::bernoulli_distribution coin(0.5);
  tr.flipped = coin(rng);
  if (tr.flipped) flip_horizontal(out);
  std::uniform_real_distribution<double> jitter(kJitterLow, kJitterHigh);
  tr.brightness = jitter(rng);
  tr.contrast = jitter(rng);
  tr.saturation = jitter(rng);
  color_jitter(out, tr.brightness, tr.contrast, tr.saturation);
  if (trace) *trace = tr;
  return out;
}

}  // namespace affectlab
