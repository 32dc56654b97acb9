#pragma once

// Whole-model checkpoints. meta.txt carries `model` (emma | cotex) plus every
// architectural knob needed to rebuild the parameter layout.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "affectlab/backbone/checkpoint.hpp"
#include "affectlab/cotex.hpp"
#include "affectlab/emma.hpp"
#include "affectlab/prediction.hpp"

namespace affectlab {

namespace detail {

inline std::string meta_get(const Meta& m, const std::string& k) {
  auto it = m.find(k);
  if (it == m.end()) throw IncompatibleCheckpoint("checkpoint meta lacks '" + k + "'");
  return it->second;
}

/// Copies every slot of `dst` from `src`, which must hold the same names and shapes.
template <typename T>
void fill_from(ParamStore<T>& dst, const ParamStore<T>& src, const std::string& src_prefix = "") {
  for (auto& p : dst.all()) {
    const std::string name = src_prefix + p.name;
    if (!src.contains(name)) throw IncompatibleCheckpoint("checkpoint lacks parameter " + name);
    const auto& s = src.at(name);
    if (s.value.rows() != p.value.rows() || s.value.cols() != p.value.cols())
      throw IncompatibleCheckpoint("shape mismatch for " + name);
    p.value = s.value;
  }
}

}  // namespace detail

inline Meta emma_meta(const EmmaConfig& c) {
  Meta m = c.encoder.to_meta();
  m["model"] = "emma";
  m["exp_classes"] = std::to_string(c.exp_classes);
  m["va_hidden"] = std::to_string(c.va_hidden);
  m["exp_sum_variant"] = c.exp_sum_variant ? "1" : "0";
  m["scorer.classes"] = std::to_string(c.scorer.classes);
  m["scorer.pool"] = std::to_string(c.scorer.pool);
  for (std::size_t i = 0; i < c.scorer.channels.size(); ++i)
    m["scorer.channels." + std::to_string(i)] = std::to_string(c.scorer.channels[i]);
  return m;
}

inline EmmaConfig emma_config_from_meta(const Meta& m) {
  if (detail::meta_get(m, "model") != "emma") throw IncompatibleCheckpoint("not an EMMA checkpoint");
  EmmaConfig c;
  c.encoder = encoder_from_meta(m);
  c.exp_classes = std::stoi(detail::meta_get(m, "exp_classes"));
  c.va_hidden = std::stoi(detail::meta_get(m, "va_hidden"));
  c.exp_sum_variant = detail::meta_get(m, "exp_sum_variant") == "1";
  c.scorer.classes = std::stoi(detail::meta_get(m, "scorer.classes"));
  c.scorer.pool = std::stoi(detail::meta_get(m, "scorer.pool"));
  for (std::size_t i = 0; i < c.scorer.channels.size(); ++i)
    c.scorer.channels[i] = std::stoi(detail::meta_get(m, "scorer.channels." + std::to_string(i)));
  return c;
}

template <typename T>
void save_emma(const std::filesystem::path& dir, const EmmaModel<T>& model, Meta extra = {}) {
  for (const auto& [k, v] : emma_meta(model.cfg)) extra[k] = v;
  save_checkpoint(dir, model.params, extra);
}

template <typename T>
EmmaModel<T> load_emma(const std::filesystem::path& dir) {
  auto ck = load_checkpoint<T>(dir);
  auto m = init_emma<T>(emma_config_from_meta(ck.meta), 0);
  detail::fill_from(m.params, ck.params);
  return m;
}

inline Meta cotex_meta(const CotexConfig& c) {
  Meta m = c.encoder.to_meta();
  m["model"] = "cotex";
  m["classes"] = std::to_string(c.classes);
  return m;
}

inline CotexConfig cotex_config_from_meta(const Meta& m) {
  if (detail::meta_get(m, "model") != "cotex") throw IncompatibleCheckpoint("not a co-training checkpoint");
  CotexConfig c;
  c.encoder = encoder_from_meta(m);
  c.classes = std::stoi(detail::meta_get(m, "classes"));
  return c;
}

/// Both views in one store under view1. / view2.
template <typename T>
void save_twin(const std::filesystem::path& dir, const TwinParams<T>& tw, Meta extra = {}) {
  ParamStore<T> all;
  for (int v = 0; v < 2; ++v)
    for (const auto& p : tw.views[static_cast<std::size_t>(v)].all())
      all.add("view" + std::to_string(v + 1) + "." + p.name, p.value, p.group, p.decay);
  for (const auto& [k, val] : cotex_meta(tw.cfg)) extra[k] = val;
  save_checkpoint(dir, all, extra);
}

template <typename T>
TwinParams<T> load_twin(const std::filesystem::path& dir) {
  auto ck = load_checkpoint<T>(dir);
  auto tw = init_twin<T>(cotex_config_from_meta(ck.meta), 0);
  for (int v = 0; v < 2; ++v)
    detail::fill_from(tw.views[static_cast<std::size_t>(v)], ck.params, "view" + std::to_string(v + 1) + ".");
  return tw;
}

/// Eval-mode probabilities of any saved model, in batches.
template <typename T>
std::vector<ProbOutput> checkpoint_probs(const std::filesystem::path& dir, std::span<const Image<T>> images,
                                         int batch = 32) {
  const auto meta = read_meta(dir / "meta.txt");
  const std::string kind = detail::meta_get(meta, "model");
  std::vector<ProbOutput> out;
  auto run = [&](auto&& fn) {
    for (std::size_t i = 0; i < images.size(); i += static_cast<std::size_t>(batch)) {
      const auto n = std::min(images.size() - i, static_cast<std::size_t>(batch));
      auto part = fn(images.subspan(i, n));
      out.insert(out.end(), part.begin(), part.end());
    }
  };
  if (kind == "emma") {
    auto m = load_emma<T>(dir);
    run([&](std::span<const Image<T>> b) { return emma_probs<T>(b, m); });
  } else if (kind == "cotex") {
    auto tw = load_twin<T>(dir);
    run([&](std::span<const Image<T>> b) { return cotex_probs<T>(b, tw); });
  } else {
    throw IncompatibleCheckpoint("unknown model kind '" + kind + "'");
  }
  return out;
}

}  // namespace affectlab
