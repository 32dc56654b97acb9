#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "affectlab/engine/model_io.hpp"
#include "affectlab/prediction.hpp"

namespace affectlab {

/// (epoch, checkpoint directory) pairs with strictly increasing epochs.
class CheckpointSet {
 public:
  CheckpointSet() = default;
  explicit CheckpointSet(std::vector<std::pair<int, std::filesystem::path>> entries) {
    for (auto& [e, p] : entries) add(e, std::move(p));
  }
  void add(int epoch, std::filesystem::path path) {
    if (!entries_.empty() && epoch <= entries_.back().first)
      throw ConfigError("checkpoint epochs must be strictly increasing (" + std::to_string(epoch) + " after " +
                        std::to_string(entries_.back().first) + ")");
    entries_.emplace_back(epoch, std::move(path));
  }
  [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] const auto& entries() const noexcept { return entries_; }

 private:
  std::vector<std::pair<int, std::filesystem::path>> entries_;
};

/// Averaged probabilities (and VA) over a list of checkpoints, any kind.
template <typename T>
std::vector<ProbOutput> ensemble_probs(const std::vector<std::filesystem::path>& checkpoints,
                                       std::span<const Image<T>> images) {
  if (checkpoints.empty()) throw ConfigError("ensemble needs at least one checkpoint");
  ProbAverager avg;
  for (const auto& c : checkpoints) avg.add(checkpoint_probs<T>(c, images));
  return avg.mean();
}

template <typename T>
std::vector<PredictionRow> decide_all(const std::vector<ProbOutput>& probs, const std::vector<std::string>& ids) {
  if (probs.size() != ids.size()) throw ShapeError("ids and outputs differ in count");
  std::vector<PredictionRow> rows;
  rows.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) rows.push_back(decide(probs[i], ids[i]));
  return rows;
}

/// Plain prediction from one checkpoint; shares the decision path with the
/// ensembles.
template <typename T>
std::vector<PredictionRow> predict_checkpoint(const std::filesystem::path& dir, std::span<const Image<T>> images,
                                              const std::vector<std::string>& ids) {
  return decide_all<T>(checkpoint_probs<T>(dir, images), ids);
}

template <typename T>
std::vector<PredictionRow> ensemble_epochs(const CheckpointSet& set, std::span<const Image<T>> images,
                                           const std::vector<std::string>& ids) {
  if (set.empty()) throw ConfigError("ensemble needs at least one checkpoint");
  std::vector<std::filesystem::path> paths;
  for (const auto& [e, p] : set.entries()) paths.push_back(p);
  return decide_all<T>(ensemble_probs<T>(paths, images), ids);
}

}  // namespace affectlab
