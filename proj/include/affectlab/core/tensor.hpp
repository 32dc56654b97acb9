#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

#include "affectlab/core/error.hpp"

namespace affectlab {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic, Eigen::RowMajor>;

/// Planar CHW image with values nominally in [0, 1].
template <typename T>
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Image() = default;
  Image(int c, int h, int w, T fill = T(0))
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  [[nodiscard]] T& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  [[nodiscard]] const T& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  [[nodiscard]] std::size_t size() const noexcept { return data.size(); }

  template <typename U>
  [[nodiscard]] Image<U> cast() const {
    Image<U> out(channels, height, width);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  bool operator==(const Image&) const = default;
};

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

}  // namespace affectlab
