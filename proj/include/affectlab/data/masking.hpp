#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "affectlab/core/error.hpp"
#include "affectlab/data/augment.hpp"

namespace affectlab {

/// Random patch masking: keeps n - floor(ratio * n) patches.
struct MaskSpec {
  double ratio = 0.0;
  int n_patches = 0;
  int kept_count = 0;

  static MaskSpec make(double ratio, int n_patches) {
    if (ratio < 0.0 || ratio >= 1.0) throw ConfigError("mask ratio must lie in [0, 1)");
    MaskSpec s{ratio, n_patches, n_patches - static_cast<int>(std::floor(ratio * n_patches))};
    if (s.kept_count < 1) throw ConfigError("mask keeps no patches");
    return s;
  }
};

inline int kept_count(double ratio, int n_patches) { return MaskSpec::make(ratio, n_patches).kept_count; }

/// Uniform random subset of size kept_count, returned sorted.
inline std::vector<int> sample_mask(const MaskSpec& spec, Rng& rng) {
  if (spec.kept_count < 1 || spec.kept_count > spec.n_patches) throw ConfigError("invalid mask spec");
  std::vector<int> idx(static_cast<std::size_t>(spec.n_patches));
  std::iota(idx.begin(), idx.end(), 0);
  if (spec.kept_count == spec.n_patches) return idx;
  for (int i = 0; i < spec.kept_count; ++i) {
    std::uniform_int_distribution<int> pick(i, spec.n_patches - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  idx.resize(static_cast<std::size_t>(spec.kept_count));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace affectlab
