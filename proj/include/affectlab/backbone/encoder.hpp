#pragma once

#include <cmath>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "affectlab/core/autograd.hpp"
#include "affectlab/core/error.hpp"
#include "affectlab/core/params.hpp"
#include "affectlab/data/augment.hpp"
#include "affectlab/data/patchify.hpp"

namespace affectlab {

enum class Mode { kTrain, kEval };

struct EncoderConfig {
  int patch_size = 16;
  int embed_dim = 192;
  int depth = 4;
  int heads = 3;
  double mlp_ratio = 4.0;
  double drop_path_rate = 0.1;
  bool class_token = false;

  [[nodiscard]] int hidden_dim() const { return static_cast<int>(std::lround(embed_dim * mlp_ratio)); }
  [[nodiscard]] int token_length(int channels = 3) const { return patch_size * patch_size * channels; }

  void validate() const {
    if (patch_size < 1) throw ConfigError("patch_size must be positive");
    if (depth < 1) throw ConfigError("encoder depth must be >= 1");
    if (heads < 1 || embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by heads");
    if (embed_dim % 4 != 0) throw ConfigError("embed_dim must be divisible by 4 for 2-D sin-cos positions");
    if (mlp_ratio <= 0) throw ConfigError("mlp_ratio must be positive");
    if (drop_path_rate < 0 || drop_path_rate >= 1) throw ConfigError("drop_path_rate must lie in [0, 1)");
  }

  /// key = value pairs under `prefix`, used in checkpoint metadata.
  [[nodiscard]] std::map<std::string, std::string> to_meta(const std::string& prefix = "encoder.") const {
    return {{prefix + "patch_size", std::to_string(patch_size)},
            {prefix + "embed_dim", std::to_string(embed_dim)},
            {prefix + "depth", std::to_string(depth)},
            {prefix + "heads", std::to_string(heads)},
            {prefix + "mlp_ratio", std::to_string(mlp_ratio)},
            {prefix + "class_token", class_token ? "1" : "0"}};
  }

  bool operator==(const EncoderConfig&) const = default;
};

/// Desk-scale preset.
inline EncoderConfig tiny_encoder() { return {16, 192, 4, 3, 4.0, 0.1, false}; }
/// ViT-base.
inline EncoderConfig base_encoder() { return {16, 768, 12, 12, 4.0, 0.1, false}; }

inline EncoderConfig encoder_preset(const std::string& name) {
  if (name == "tiny") return tiny_encoder();
  if (name == "base") return base_encoder();
  throw ConfigError("unknown encoder preset '" + name + "' (expected tiny or base)");
}

/// 1-D sin/cos table of width d for integer positions.
template <typename T>
void sincos_1d(Eigen::Ref<RowVec<T>> out, int pos) {
  const int half = static_cast<int>(out.size()) / 2;
  for (int i = 0; i < half; ++i) {
    const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / half);
    out(i) = static_cast<T>(std::sin(pos * omega));
    out(half + i) = static_cast<T>(std::cos(pos * omega));
  }
}

/// Fixed 2-D sin-cos positional table, one row per patch in row-major order.
/// The first half of each row encodes the grid row, the second half the column.
template <typename T>
Mat<T> sincos_2d(int grid_rows, int grid_cols, int dim) {
  Mat<T> table(grid_rows * grid_cols, dim);
  const int half = dim / 2;
  for (int r = 0; r < grid_rows; ++r)
    for (int c = 0; c < grid_cols; ++c) {
      const int row = r * grid_cols + c;
      RowVec<T> a(half), b(half);
      sincos_1d<T>(a, r);
      sincos_1d<T>(b, c);
      table.row(row).head(half) = a;
      table.row(row).tail(half) = b;
    }
  return table;
}

namespace detail {

template <typename T>
Mat<T> xavier(int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  Mat<T> m(fan_in, fan_out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(u(rng));
  return m;
}

template <typename T>
void add_linear(ParamStore<T>& ps, const std::string& name, int in, int out, int group, Rng& rng) {
  ps.add(name + ".weight", xavier<T>(in, out, rng), group, true);
  ps.add(name + ".bias", Mat<T>::Zero(1, out), group, false);
}

template <typename T>
void add_norm(ParamStore<T>& ps, const std::string& name, int dim, int group) {
  ps.add(name + ".weight", Mat<T>::Ones(1, dim), group, false);
  ps.add(name + ".bias", Mat<T>::Zero(1, dim), group, false);
}

template <typename T>
Var<T> linear(Tape<T>& t, ParamStore<T>& ps, const std::string& name, Var<T> x) {
  return ag::linear(x, t.param(ps.at(name + ".weight")), t.param(ps.at(name + ".bias")));
}

template <typename T>
Var<T> norm(Tape<T>& t, ParamStore<T>& ps, const std::string& name, Var<T> x) {
  return ag::layer_norm(x, t.param(ps.at(name + ".weight")), t.param(ps.at(name + ".bias")));
}

}  // namespace detail

/// Pre-norm transformer blocks shared by the encoder and the MAE decoder.
/// Parameters live under `prefix`blocks.<i>.*; block i belongs to layer-decay
/// group first_group + i.
template <typename T>
void add_transformer_blocks(ParamStore<T>& ps, const std::string& prefix, int dim, int depth, int hidden,
                            int first_group, Rng& rng) {
  for (int i = 0; i < depth; ++i) {
    const std::string b = prefix + "blocks." + std::to_string(i) + ".";
    const int g = first_group < 0 ? kHeadGroup : first_group + i;
    detail::add_norm(ps, b + "norm1", dim, g);
    detail::add_linear(ps, b + "attn.qkv", dim, 3 * dim, g, rng);
    detail::add_linear(ps, b + "attn.proj", dim, dim, g, rng);
    detail::add_norm(ps, b + "norm2", dim, g);
    detail::add_linear(ps, b + "mlp.fc1", dim, hidden, g, rng);
    detail::add_linear(ps, b + "mlp.fc2", hidden, dim, g, rng);
  }
}

/// Per-block stochastic-depth survival scales for each segment; empty when
/// stochastic depth is inactive.
template <typename T>
std::vector<T> drop_path_factors(std::size_t segments, double rate, Rng& rng) {
  std::vector<T> f(segments, T(1));
  if (rate <= 0) return f;
  std::bernoulli_distribution keep(1.0 - rate);
  for (auto& v : f) v = keep(rng) ? static_cast<T>(1.0 / (1.0 - rate)) : T(0);
  return f;
}

template <typename T>
Var<T> run_transformer_blocks(Tape<T>& t, ParamStore<T>& ps, const std::string& prefix, Var<T> h,
                              const Segments& segs, int depth, int heads, double drop_path_rate, Mode mode,
                              Rng* rng) {
  const bool stochastic = mode == Mode::kTrain && drop_path_rate > 0 && rng != nullptr;
  for (int i = 0; i < depth; ++i) {
    const std::string b = prefix + "blocks." + std::to_string(i) + ".";
    const double rate = depth > 1 ? drop_path_rate * i / (depth - 1) : 0.0;
    Var<T> a = detail::norm(t, ps, b + "norm1", h);
    a = detail::linear(t, ps, b + "attn.qkv", a);
    a = ag::attention(a, segs, heads);
    a = detail::linear(t, ps, b + "attn.proj", a);
    if (stochastic && rate > 0) a = ag::scale_segments(a, segs, drop_path_factors<T>(segs.size(), rate, *rng));
    h = ag::add(h, a);
    Var<T> m = detail::norm(t, ps, b + "norm2", h);
    m = ag::gelu(detail::linear(t, ps, b + "mlp.fc1", m));
    m = detail::linear(t, ps, b + "mlp.fc2", m);
    if (stochastic && rate > 0) m = ag::scale_segments(m, segs, drop_path_factors<T>(segs.size(), rate, *rng));
    h = ag::add(h, m);
  }
  return h;
}

/// Registers encoder parameters under `prefix` (e.g. "encoder.").
/// Groups: patch embedding 0, block i -> i + 1, final norm -> head group.
template <typename T>
void init_encoder(ParamStore<T>& ps, const EncoderConfig& cfg, Rng& rng, const std::string& prefix = "encoder.") {
  cfg.validate();
  detail::add_linear(ps, prefix + "patch_embed", cfg.token_length(), cfg.embed_dim, 0, rng);
  if (cfg.class_token) {
    std::normal_distribution<double> nd(0.0, 0.02);
    Mat<T> cls(1, cfg.embed_dim);
    for (Eigen::Index i = 0; i < cls.size(); ++i) cls.data()[i] = static_cast<T>(nd(rng));
    ps.add(prefix + "cls_token", std::move(cls), 0, false);
  }
  add_transformer_blocks(ps, prefix, cfg.embed_dim, cfg.depth, cfg.hidden_dim(), 1, rng);
  detail::add_norm(ps, prefix + "norm", cfg.embed_dim, kHeadGroup);
}

/// Visible tokens of one image plus the grid positions they came from. Storage
/// order is free; `positions[i]` is the patch index of row i.
template <typename T>
struct TokenView {
  Mat<T> tokens;
  std::vector<int> positions;
  int grid_rows = 0;
  int grid_cols = 0;

  static TokenView from_sequence(const PatchSequence<T>& seq) {
    return {seq.kept_tokens(), seq.kept, seq.grid_rows, seq.grid_cols};
  }
};

/// Tape-level encoder output. `tokens` excludes the class token.
template <typename T>
struct EncodedBatch {
  Var<T> pooled;
  Var<T> tokens;
  Segments segments;  // rows of `tokens` per sample
};

template <typename T>
EncodedBatch<T> encode_batch(Tape<T>& t, ParamStore<T>& ps, const EncoderConfig& cfg,
                             std::span<const TokenView<T>> batch, Mode mode, Rng* rng,
                             const std::string& prefix = "encoder.") {
  if (batch.empty()) throw ShapeError("encode_batch: empty batch");
  const int tl = cfg.token_length();
  int total = 0;
  Segments segs;
  for (const auto& v : batch) {
    if (v.tokens.cols() != tl)
      throw ShapeError("token length " + std::to_string(v.tokens.cols()) + " != patch_size^2*3 = " +
                       std::to_string(tl));
    if (v.tokens.rows() < 1) throw ShapeError("encoder needs at least one visible token");
    if (static_cast<std::size_t>(v.tokens.rows()) != v.positions.size())
      throw ShapeError("positions do not match token rows");
    segs.push_back({total, static_cast<int>(v.tokens.rows())});
    total += static_cast<int>(v.tokens.rows());
  }
  Mat<T> x(total, tl);
  Mat<T> pos(total, cfg.embed_dim);
  std::map<std::pair<int, int>, Mat<T>> tables;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& v = batch[i];
    auto key = std::make_pair(v.grid_rows, v.grid_cols);
    auto it = tables.find(key);
    if (it == tables.end()) it = tables.emplace(key, sincos_2d<T>(v.grid_rows, v.grid_cols, cfg.embed_dim)).first;
    x.middleRows(segs[i].offset, segs[i].length) = v.tokens;
    for (int r = 0; r < segs[i].length; ++r) {
      const int p = v.positions[static_cast<std::size_t>(r)];
      if (p < 0 || p >= it->second.rows()) throw ShapeError("token position out of grid range");
      pos.row(segs[i].offset + r) = it->second.row(p);
    }
  }
  Var<T> h = detail::linear(t, ps, prefix + "patch_embed", t.constant(std::move(x)));
  h = ag::add_constant(h, pos);

  Segments run_segs = segs;
  std::vector<int> cls_rows;
  if (cfg.class_token) {
    // [h ; cls] then reorder so each sample starts with its class token
    Var<T> all = ag::concat_rows<T>({h, t.param(ps.at(prefix + "cls_token"))});
    std::vector<int> order;
    run_segs.clear();
    int off = 0;
    for (const auto& s : segs) {
      cls_rows.push_back(off);
      run_segs.push_back({off, s.length + 1});
      order.push_back(total);
      for (int r = 0; r < s.length; ++r) order.push_back(s.offset + r);
      off += s.length + 1;
    }
    h = ag::gather_rows(all, std::move(order));
  }

  h = run_transformer_blocks(t, ps, prefix, h, run_segs, cfg.depth, cfg.heads,
                             mode == Mode::kTrain ? cfg.drop_path_rate : 0.0, mode, rng);
  h = detail::norm(t, ps, prefix + "norm", h);

  EncodedBatch<T> out;
  out.segments = segs;
  if (cfg.class_token) {
    std::vector<int> patch_rows;
    for (const auto& s : run_segs)
      for (int r = 1; r < s.length; ++r) patch_rows.push_back(s.offset + r);
    out.tokens = ag::gather_rows(h, std::move(patch_rows));
    out.pooled = ag::gather_rows(h, cls_rows);
  } else {
    out.tokens = h;
    out.pooled = ag::segment_mean(h, segs);
  }
  return out;
}

/// Value-level encoder output for a single sequence.
template <typename T>
struct EncoderOutput {
  RowVec<T> pooled;
  Mat<T> per_token;
};

/// Encodes the kept tokens of one sequence in eval mode.
template <typename T>
EncoderOutput<T> encode(const PatchSequence<T>& seq, const EncoderConfig& cfg, ParamStore<T>& ps,
                        const std::string& prefix = "encoder.") {
  if (seq.patch_size != cfg.patch_size) throw ShapeError("sequence patch size differs from encoder config");
  Tape<T> t(false);
  const TokenView<T> view = TokenView<T>::from_sequence(seq);
  auto enc = encode_batch<T>(t, ps, cfg, std::span<const TokenView<T>>(&view, 1), Mode::kEval, nullptr, prefix);
  return {enc.pooled.value().row(0), enc.tokens.value()};
}

}  // namespace affectlab
