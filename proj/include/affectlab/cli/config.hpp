#pragma once

// One flat key = value namespace shared by every subcommand. Keys outside
// the known set are errors; known keys a subcommand never reads are warnings.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "affectlab/backbone/encoder.hpp"
#include "affectlab/backbone/mae.hpp"
#include "affectlab/core/csv.hpp"
#include "affectlab/core/error.hpp"
#include "affectlab/engine/optim.hpp"

namespace affectlab {

struct ConfigKey {
  const char* name;
  const char* help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"base_lr", "base learning rate"},
      {"weight_decay", "decoupled weight decay"},
      {"batch_size", "micro-batch size"},
      {"clip_grad", "global gradient-norm clip"},
      {"layer_decay", "layer-wise lr decay"},
      {"warmup_epochs", "linear warmup epochs"},
      {"total_epochs", "training epochs"},
      {"accum_iters", "micro-batches per optimizer step"},
      {"drop_path", "stochastic depth rate"},
      {"mask_ratio", "fraction of patch tokens dropped"},
      {"lambda", "JS weight in the co-training loss"},
      {"seed", "random seed"},
      {"scale_lr", "scale lr by effective batch / 256 (0 or 1)"},
      {"save_every", "checkpoint cadence in epochs"},
      {"eval_batch", "batch size for evaluation passes"},
      {"run_dir", "output run directory"},
      {"data", "training dataset directory"},
      {"val_data", "validation dataset directory"},
      {"pretrained", "MAE checkpoint directory for encoder initialization"},
      {"scorer", "scorer checkpoint directory (cnn.*)"},
      {"scorer_epochs", "scorer pretraining epochs when no scorer checkpoint is given"},
      {"exp_sum_variant", "expression loss on exp1 + exp2 (0 or 1)"},
      {"embed_dim", "encoder width"},
      {"depth", "encoder depth"},
      {"heads", "attention heads"},
      {"patch_size", "patch size in pixels"},
      {"mlp_ratio", "MLP expansion ratio"},
      {"decoder_dim", "MAE decoder width"},
      {"decoder_depth", "MAE decoder depth"},
      {"decoder_heads", "MAE decoder heads"},
      {"task", "mtl or lsd"},
      {"n", "number of samples to generate"},
      {"out", "output path"},
      {"checkpoint", "checkpoint directory"},
      {"checkpoints", "comma-separated checkpoint directories"},
      {"epochs", "comma-separated epochs for the checkpoints"},
      {"pred", "prediction file"},
      {"labels", "labels file"},
      {"images", "dataset directory to predict on"},
  };
  return keys;
}

inline bool is_config_key(const std::string& k) {
  const auto& keys = config_keys();
  return std::any_of(keys.begin(), keys.end(), [&](const ConfigKey& c) { return k == c.name; });
}

/// "batch-size" -> "batch_size".
inline std::string flag_to_key(std::string flag) {
  if (flag.rfind("--", 0) == 0) flag.erase(0, 2);
  std::replace(flag.begin(), flag.end(), '-', '_');
  return flag;
}

inline std::string key_to_flag(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

class Config {
 public:
  void set(const std::string& key, const std::string& value) {
    if (!is_config_key(key)) throw ConfigError("unknown configuration key '" + key + "'");
    values_[key] = value;
  }

  /// Parses key = value lines; `#` starts a comment.
  void load_file(const std::string& path) {
    std::vector<std::string> lines;
    try {
      lines = csv::read_lines(path);
    } catch (const DataError&) {
      throw ConfigError("cannot open config file " + path);
    }
    std::vector<std::string> unknown;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::string line = lines[i];
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      const auto body = csv::trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError(csv::location(path, i) + ": expected key = value, got '" + std::string(body) + "'");
      const std::string key(csv::trim(body.substr(0, eq)));
      const std::string value(csv::trim(body.substr(eq + 1)));
      if (!is_config_key(key)) {
        unknown.push_back(key);
        continue;
      }
      values_[key] = value;
    }
    if (!unknown.empty()) {
      std::string msg = "unknown configuration key(s) in " + path + ":";
      for (const auto& k : unknown) msg += " " + k;
      throw ConfigError(msg);
    }
  }

  [[nodiscard]] bool has(const std::string& key) const {
    used_.insert(key);
    return values_.count(key) > 0;
  }

  [[nodiscard]] std::string str(const std::string& key, const std::string& def = "") const {
    used_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? def : it->second;
  }

  [[nodiscard]] std::string require(const std::string& key) const {
    if (!has(key)) throw ConfigError("missing required setting '" + key + "' (--" + key_to_flag(key) + ")");
    return str(key);
  }

  [[nodiscard]] double real(const std::string& key, double def) const {
    if (!has(key)) return def;
    try {
      return csv::parse_real(str(key), key);
    } catch (const DataError&) {
      throw ConfigError("setting '" + key + "' is not a number: '" + str(key) + "'");
    }
  }

  [[nodiscard]] long integer(const std::string& key, long def) const {
    if (!has(key)) return def;
    const std::string v = str(key);
    try {
      std::size_t pos = 0;
      const long r = std::stol(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return r;
    } catch (const std::exception&) {
      throw ConfigError("setting '" + key + "' is not an integer: '" + v + "'");
    }
  }

  [[nodiscard]] bool flag(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const std::string v = str(key);
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("setting '" + key + "' must be 0 or 1: '" + v + "'");
  }

  /// Keys that were set but never read.
  [[nodiscard]] std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  [[nodiscard]] const std::map<std::string, std::string>& values() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

inline TrainConfig train_config_from(const Config& c, TrainConfig t) {
  t.base_lr = c.real("base_lr", t.base_lr);
  t.weight_decay = c.real("weight_decay", t.weight_decay);
  t.batch_size = static_cast<int>(c.integer("batch_size", t.batch_size));
  t.clip_grad = c.real("clip_grad", t.clip_grad);
  t.layer_decay = c.real("layer_decay", t.layer_decay);
  t.warmup_epochs = static_cast<int>(c.integer("warmup_epochs", t.warmup_epochs));
  t.total_epochs = static_cast<int>(c.integer("total_epochs", t.total_epochs));
  t.accum_iters = static_cast<int>(c.integer("accum_iters", t.accum_iters));
  t.drop_path = c.real("drop_path", t.drop_path);
  t.mask_ratio = c.real("mask_ratio", t.mask_ratio);
  t.lambda = c.real("lambda", t.lambda);
  const long seed = c.integer("seed", static_cast<long>(t.seed));
  if (seed < 0) throw ConfigError("seed must be non-negative");
  t.seed = static_cast<std::uint64_t>(seed);
  t.scale_lr = c.flag("scale_lr", t.scale_lr);
  t.validate();
  return t;
}

inline EncoderConfig encoder_config_from(const Config& c, EncoderConfig e) {
  e.embed_dim = static_cast<int>(c.integer("embed_dim", e.embed_dim));
  e.depth = static_cast<int>(c.integer("depth", e.depth));
  e.heads = static_cast<int>(c.integer("heads", e.heads));
  e.patch_size = static_cast<int>(c.integer("patch_size", e.patch_size));
  e.mlp_ratio = c.real("mlp_ratio", e.mlp_ratio);
  e.validate();
  return e;
}

inline MaeDecoderConfig decoder_config_from(const Config& c, MaeDecoderConfig d) {
  d.dim = static_cast<int>(c.integer("decoder_dim", d.dim));
  d.depth = static_cast<int>(c.integer("decoder_depth", d.depth));
  d.heads = static_cast<int>(c.integer("decoder_heads", d.heads));
  if (d.dim < 4 || d.dim % 4 != 0 || d.depth < 1 || d.heads < 1 || d.dim % d.heads != 0)
    throw ConfigError("invalid MAE decoder shape");
  return d;
}

}  // namespace affectlab
