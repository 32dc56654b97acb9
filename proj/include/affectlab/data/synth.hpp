#pragma once

// Deterministic synthetic face-like dataset. Labels are drawn first and then
// rendered into pixels so every task is learnable from the image:
//   * expression -> a bright horizontal blob in one of 8 vertically stacked cells
//   * AU j       -> a striped tile (12 tiles in the side margins)
//   * valence    -> red channel gain, arousal -> blue channel gain
// The layout is mirror-symmetric so horizontal flips preserve every label.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "affectlab/core/error.hpp"
#include "affectlab/data/augment.hpp"
#include "affectlab/data/labels.hpp"

namespace affectlab {

inline constexpr int kSynthSize = 112;
inline constexpr double kSynthNoise = 0.05;
inline constexpr double kSynthSentinelRate = 0.10;
inline constexpr int kBlobCells = 8;

/// Affine map [-1, 1] -> [0.25, 0.75] used for the VA channel gains.
[[nodiscard]] inline double va_channel_gain(double v) { return (v + 1.0) / 2.0 * 0.5 + 0.25; }

namespace synth_detail {

inline constexpr double kBackground = 0.15;
inline constexpr double kBlobLevel = 0.70;
inline constexpr double kStripeLevel = 0.45;

// Indexed by the 8-way MTL class: neutral, anger, disgust, fear, happiness,
// sadness, surprise, other.
inline constexpr std::array<double, 8> kValenceProto = {0.0, -0.6, -0.7, -0.5, 0.8, -0.6, 0.3, 0.1};
inline constexpr std::array<double, 8> kArousalProto = {-0.1, 0.7, 0.3, 0.6, 0.5, -0.4, 0.8, 0.1};
inline constexpr std::array<double, kNumAus> kValenceAu = {0.08, -0.08, -0.1, 0.1, -0.06, 0.06,
                                                            0.12, -0.1, -0.05, 0.05, 0.04, -0.04};
inline constexpr std::array<double, kNumAus> kArousalAu = {0.06, 0.08, -0.06, 0.05, 0.1, -0.05,
                                                            0.04, -0.08, 0.07, -0.07, 0.1, 0.09};

/// Left-half base intensity (before channel gains) at pixel (y, x), x < size/2.
inline double base_left(int exp_cell, const std::array<int, kNumAus>& aus, int y, int x, int size) {
  double v = kBackground;
  const double half = size / 2.0;
  // blob column: cells stacked vertically, centered on the mirror axis
  const double cell_h = static_cast<double>(size) / kBlobCells;
  const double cy = (exp_cell + 0.5) * cell_h;
  const double ry = 0.42 * cell_h;
  const double rx = 0.22 * size;
  const double dy = (y + 0.5 - cy) / ry;
  const double dx = (x + 0.5 - half) / rx;
  if (dx * dx + dy * dy <= 1.0) v += kBlobLevel;
  // AU tiles: 6 rows x 2 columns in the left quarter
  const int margin = size / 4;
  if (x < margin) {
    const int tile_h = size / 6;
    const int tile_w = margin / 2;
    const int row = std::min(y / tile_h, 5);
    const int col = std::min(x / tile_w, 1);
    const int j = row * 2 + col;
    const int ly = y - row * tile_h;
    const int lx = x - col * tile_w;
    const bool inside = ly >= 1 && ly < tile_h - 1 && lx >= 1 && lx < tile_w - 1;
    if (inside && aus[static_cast<std::size_t>(j)]) {
      bool on = false;
      switch (j % 3) {
        case 0: on = (ly / 2) % 2 == 0; break;
        case 1: on = (lx / 2) % 2 == 0; break;
        default: on = ((lx + ly) / 2) % 2 == 0; break;
      }
      if (on) v += kStripeLevel;
    }
  }
  return std::min(v, 1.0);
}

}  // namespace synth_detail

/// Renders pixels for fully specified ground truth. `exp_cell` is the blob
/// cell (the label index of the task). Noise is uniform in [-noise, noise].
template <typename T>
Image<T> render_face(int exp_cell, const std::array<int, kNumAus>& aus, const VAPair& va, Rng& rng,
                     double noise = kSynthNoise, int size = kSynthSize) {
  Image<T> img(3, size, size);
  const double gr = va_channel_gain(va.valence);
  const double gb = va_channel_gain(va.arousal);
  std::uniform_real_distribution<double> jitter(-noise, noise);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const int lx = x < size / 2 ? x : size - 1 - x;
      const double b = synth_detail::base_left(exp_cell, aus, y, lx, size);
      const std::array<double, 3> clean = {gr * b, b, gb * b};
      for (int c = 0; c < 3; ++c) {
        const double n = noise > 0 ? jitter(rng) : 0.0;
        img.at(c, y, x) = static_cast<T>(std::clamp(clean[static_cast<std::size_t>(c)] + n, 0.0, 1.0));
      }
    }
  return img;
}

/// Pure function of (n, task, seed).
template <typename T>
std::vector<FaceSample<T>> synth_dataset(int n, Task task, std::uint64_t seed) {
  if (n < 1) throw ConfigError("synth_dataset needs n >= 1");
  Rng rng(seed);
  const int k = num_classes(task);
  std::uniform_int_distribution<int> exp_dist(0, k - 1);
  std::bernoulli_distribution au_dist(0.5);
  std::uniform_real_distribution<double> va_noise(-0.05, 0.05);
  std::bernoulli_distribution drop(kSynthSentinelRate);
  std::vector<FaceSample<T>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Labels truth;
    truth.expression.index = exp_dist(rng);
    for (auto& a : truth.au.values) a = au_dist(rng) ? 1 : 0;
    const int proto = task == Task::kMtl ? truth.expression.index : truth.expression.index + 1;
    double v = synth_detail::kValenceProto[static_cast<std::size_t>(proto)];
    double a = synth_detail::kArousalProto[static_cast<std::size_t>(proto)];
    for (int j = 0; j < kNumAus; ++j) {
      const double s = truth.au.values[static_cast<std::size_t>(j)] - 0.5;
      v += synth_detail::kValenceAu[static_cast<std::size_t>(j)] * s;
      a += synth_detail::kArousalAu[static_cast<std::size_t>(j)] * s;
    }
    truth.va.valence = std::clamp(v + va_noise(rng), -1.0, 1.0);
    truth.va.arousal = std::clamp(a + va_noise(rng), -1.0, 1.0);

    FaceSample<T> s;
    s.image = render_face<T>(truth.expression.index, truth.au.values, truth.va, rng);
    s.labels = truth;
    if (task == Task::kMtl) {
      if (drop(rng)) s.labels.va = {kVaSentinel, kVaSentinel};
      if (drop(rng)) s.labels.expression.index = kExpSentinel;
      if (drop(rng)) s.labels.au.valid = false;
    }
    char id[16];
    std::snprintf(id, sizeof(id), "s%06d", i);
    s.id = id;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace affectlab
