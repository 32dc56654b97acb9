#pragma once

#include <numeric>
#include <vector>

#include "affectlab/core/error.hpp"
#include "affectlab/core/tensor.hpp"

namespace affectlab {

/// Row-major grid of flattened patches. Each token is laid out (py, px, c).
/// Only rows listed in `kept` are visible to an encoder.
template <typename T>
struct PatchSequence {
  Mat<T> tokens;
  std::vector<int> kept;
  int grid_rows = 0;
  int grid_cols = 0;
  int patch_size = 0;
  int channels = 3;

  [[nodiscard]] int total() const noexcept { return grid_rows * grid_cols; }
  [[nodiscard]] int token_length() const noexcept { return patch_size * patch_size * channels; }

  [[nodiscard]] Mat<T> kept_tokens() const {
    Mat<T> out(static_cast<Eigen::Index>(kept.size()), tokens.cols());
    for (std::size_t i = 0; i < kept.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = tokens.row(kept[i]);
    return out;
  }
};

template <typename T>
PatchSequence<T> patchify(const Image<T>& img, int patch_size) {
  if (patch_size <= 0 || img.height % patch_size != 0 || img.width % patch_size != 0)
    throw ConfigError("patch size " + std::to_string(patch_size) + " does not divide image " +
                      std::to_string(img.height) + "x" + std::to_string(img.width));
  PatchSequence<T> seq;
  seq.patch_size = patch_size;
  seq.channels = img.channels;
  seq.grid_rows = img.height / patch_size;
  seq.grid_cols = img.width / patch_size;
  seq.tokens.resize(seq.total(), seq.token_length());
  for (int gr = 0; gr < seq.grid_rows; ++gr)
    for (int gc = 0; gc < seq.grid_cols; ++gc) {
      const int row = gr * seq.grid_cols + gc;
      for (int py = 0; py < patch_size; ++py)
        for (int px = 0; px < patch_size; ++px)
          for (int c = 0; c < img.channels; ++c)
            seq.tokens(row, (py * patch_size + px) * img.channels + c) =
                img.at(c, gr * patch_size + py, gc * patch_size + px);
    }
  seq.kept.resize(static_cast<std::size_t>(seq.total()));
  std::iota(seq.kept.begin(), seq.kept.end(), 0);
  return seq;
}

/// Inverse of patchify over all tokens (the kept set is ignored).
template <typename T>
Image<T> depatchify(const PatchSequence<T>& seq) {
  const int p = seq.patch_size;
  Image<T> img(seq.channels, seq.grid_rows * p, seq.grid_cols * p);
  for (int gr = 0; gr < seq.grid_rows; ++gr)
    for (int gc = 0; gc < seq.grid_cols; ++gc) {
      const int row = gr * seq.grid_cols + gc;
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          for (int c = 0; c < seq.channels; ++c)
            img.at(c, gr * p + py, gc * p + px) = seq.tokens(row, (py * p + px) * seq.channels + c);
    }
  return img;
}

}  // namespace affectlab
