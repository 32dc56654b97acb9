#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "affectlab/core/error.hpp"
#include "affectlab/core/tensor.hpp"

namespace affectlab {

/// Layer-decay group assigned to task heads. Resolved to depth + 1 by the optimizer.
inline constexpr int kHeadGroup = -1;

template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  int group = kHeadGroup;
  bool decay = true;  // decoupled weight decay; false for biases, norms, tokens
};

/// Named, insertion-ordered parameter collection. References returned by
/// add/at stay valid for the lifetime of the store.
template <typename T>
class ParamStore {
 public:
  Param<T>& add(std::string name, Mat<T> init, int group, bool decay) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    Param<T> p;
    p.name = std::move(name);
    p.grad = Mat<T>::Zero(init.rows(), init.cols());
    p.value = std::move(init);
    p.group = group;
    p.decay = decay;
    params_.push_back(std::move(p));
    return params_.back();
  }

  [[nodiscard]] bool contains(std::string_view name) const { return index_.count(std::string(name)) > 0; }

  Param<T>& at(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
    return params_[it->second];
  }
  const Param<T>& at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
    return params_[it->second];
  }

  [[nodiscard]] std::deque<Param<T>>& all() noexcept { return params_; }
  [[nodiscard]] const std::deque<Param<T>>& all() const noexcept { return params_; }
  [[nodiscard]] std::size_t size() const noexcept { return params_.size(); }

  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  [[nodiscard]] T grad_norm() const {
    long double acc = 0;
    for (const auto& p : params_) acc += static_cast<long double>(p.grad.squaredNorm());
    return static_cast<T>(std::sqrt(acc));
  }

  [[nodiscard]] std::vector<std::string> names(std::string_view prefix = "") const {
    std::vector<std::string> out;
    for (const auto& p : params_)
      if (p.name.rfind(prefix, 0) == 0) out.push_back(p.name);
    return out;
  }

  /// Copies every parameter whose name starts with `prefix`, renaming the prefix.
  void copy_from(const ParamStore& other, std::string_view from_prefix, std::string_view to_prefix) {
    for (const auto& p : other.all()) {
      if (p.name.rfind(from_prefix, 0) != 0) continue;
      const std::string target = std::string(to_prefix) + p.name.substr(from_prefix.size());
      auto& dst = at(target);
      if (dst.value.rows() != p.value.rows() || dst.value.cols() != p.value.cols())
        throw IncompatibleCheckpoint("shape mismatch for " + target);
      dst.value = p.value;
    }
  }

  template <typename U>
  [[nodiscard]] ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>(), p.group, p.decay);
    return out;
  }

 private:
  std::deque<Param<T>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace affectlab
