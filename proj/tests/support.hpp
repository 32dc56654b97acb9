#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "affectlab/core/params.hpp"
#include "affectlab/core/tensor.hpp"

namespace affectlab::testing {

/// Central-difference gradient of f at x.
inline Mat<double> numeric_grad(const std::function<double(const Mat<double>&)>& f, Mat<double> x,
                                double h = 1e-6) {
  Mat<double> g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double rel_error(const Mat<double>& a, const Mat<double>& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale < 1e-14 ? 0.0 : (a - b).norm() / scale;
}

inline Mat<double> random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

template <typename T>
Image<T> random_image(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image<T> img(3, size, size);
  for (auto& v : img.data) v = static_cast<T>(u(rng));
  return img;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("affectlab_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }
  [[nodiscard]] std::string str(const std::string& leaf) const { return (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};


/// Compares analytic parameter gradients (already in ps.grad) against central
/// differences of `loss` on up to `per_param` random entries of every tensor.
/// Returns the relative error over the concatenation of sampled entries.
inline double param_grad_error(ParamStore<double>& ps, const std::function<double()>& loss, std::mt19937_64& rng,
                               int per_param = 6, double h = 1e-6, const std::string& prefix = "") {
  std::vector<double> analytic, numeric;
  for (auto& p : ps.all()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    std::uniform_int_distribution<Eigen::Index> pick(0, p.value.size() - 1);
    const int n = static_cast<int>(std::min<Eigen::Index>(per_param, p.value.size()));
    for (int k = 0; k < n; ++k) {
      const Eigen::Index i = pick(rng);
      const double keep = p.value.data()[i];
      p.value.data()[i] = keep + h;
      const double up = loss();
      p.value.data()[i] = keep - h;
      const double down = loss();
      p.value.data()[i] = keep;
      analytic.push_back(p.grad.data()[i]);
      numeric.push_back((up - down) / (2 * h));
    }
  }
  const auto a = Eigen::Map<const Eigen::VectorXd>(analytic.data(), static_cast<Eigen::Index>(analytic.size()));
  const auto b = Eigen::Map<const Eigen::VectorXd>(numeric.data(), static_cast<Eigen::Index>(numeric.size()));
  const double scale = std::max(a.norm(), b.norm());
  return scale < 1e-14 ? 0.0 : (a - b).norm() / scale;
}

}  // namespace affectlab::testing
