#pragma once

#include <array>
#include <string>
#include <string_view>

#include "affectlab/core/tensor.hpp"

namespace affectlab {

enum class Task { kMtl, kLsd };

inline constexpr int kNumAus = 12;
inline constexpr int kMtlClasses = 8;
inline constexpr int kLsdClasses = 6;
inline constexpr double kVaSentinel = -5.0;
inline constexpr int kExpSentinel = -1;

inline constexpr std::array<std::string_view, kNumAus> kAuNames = {
    "AU1", "AU2", "AU4", "AU6", "AU7", "AU10", "AU12", "AU15", "AU23", "AU24", "AU25", "AU26"};

[[nodiscard]] inline int num_classes(Task task) { return task == Task::kMtl ? kMtlClasses : kLsdClasses; }

[[nodiscard]] inline std::string_view task_name(Task task) { return task == Task::kMtl ? "mtl" : "lsd"; }

inline Task parse_task(std::string_view s) {
  if (s == "mtl") return Task::kMtl;
  if (s == "lsd") return Task::kLsd;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected mtl or lsd)");
}

/// Valence/arousal in [-1, 1]; exactly -5 on either axis marks the pair invalid.
struct VAPair {
  double valence = 0.0;
  double arousal = 0.0;
  bool operator==(const VAPair&) const = default;
};

/// 0..7 for MTL, 0..5 for LSD, -1 when the annotation is missing.
struct ExpressionLabel {
  int index = 0;
  bool operator==(const ExpressionLabel&) const = default;
};

/// Twelve binary AU flags in kAuNames order. The validity flag is carried
/// explicitly because a zero flag is also a legitimate "absent" label.
struct AULabels {
  std::array<int, kNumAus> values{};
  bool valid = true;
  bool operator==(const AULabels&) const = default;
};

struct Labels {
  VAPair va;
  ExpressionLabel expression;
  AULabels au;
  bool operator==(const Labels&) const = default;
};

struct LabelValidity {
  bool va = false;
  bool exp = false;
  bool au = false;
  bool operator==(const LabelValidity&) const = default;
};

[[nodiscard]] inline LabelValidity label_validity(const Labels& l) {
  return {l.va.valence != kVaSentinel && l.va.arousal != kVaSentinel, l.expression.index >= 0, l.au.valid};
}

template <typename T>
struct FaceSample {
  Image<T> image;
  Labels labels;
  std::string id;
};

}  // namespace affectlab
