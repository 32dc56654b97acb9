#pragma once

// Checkpoint directory = weights.bin (binary, native endianness) + meta.txt
// (key = value lines). weights.bin layout:
//   magic "AFLB", u32 version, u32 scalar bytes, u64 count, then per tensor:
//   u32 name length, name bytes, i64 rows, i64 cols, i32 group, u8 decay, data.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "affectlab/backbone/encoder.hpp"
#include "affectlab/core/csv.hpp"
#include "affectlab/core/error.hpp"
#include "affectlab/core/params.hpp"

namespace affectlab {

using Meta = std::map<std::string, std::string>;

inline constexpr char kWeightsMagic[4] = {'A', 'F', 'L', 'B'};
inline constexpr std::uint32_t kWeightsVersion = 1;

inline void write_meta(const std::filesystem::path& path, const Meta& meta) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& [k, v] : meta) out << k << " = " << v << '\n';
}

/// Parses key = value lines; '#' starts a comment.
inline Meta read_meta(const std::filesystem::path& path) {
  Meta meta;
  const auto lines = csv::read_lines(path.string());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = lines[i];
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = csv::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(csv::location(path.string(), i) + ": expected 'key = value'");
    meta[std::string(csv::trim(line.substr(0, eq)))] = std::string(csv::trim(line.substr(eq + 1)));
  }
  return meta;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const ParamStore<T>& ps, const Meta& meta) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "weights.bin", std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + dir.string());
  auto put = [&out](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  out.write(kWeightsMagic, 4);
  put(kWeightsVersion);
  put(static_cast<std::uint32_t>(sizeof(T)));
  put(static_cast<std::uint64_t>(ps.size()));
  for (const auto& p : ps.all()) {
    put(static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put(static_cast<std::int64_t>(p.value.rows()));
    put(static_cast<std::int64_t>(p.value.cols()));
    put(static_cast<std::int32_t>(p.group));
    put(static_cast<std::uint8_t>(p.decay ? 1 : 0));
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(T)));
  }
  Meta m = meta;
  m["scalar_bytes"] = std::to_string(sizeof(T));
  write_meta(dir / "meta.txt", m);
}

template <typename T>
struct Checkpoint {
  ParamStore<T> params;
  Meta meta;
};

/// Loads weights, converting from the stored scalar width if needed.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "weights.bin", std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + dir.string());
  auto get = [&in](auto& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw DataError("truncated checkpoint");
  };
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kWeightsMagic, 4) != 0) throw DataError("not a checkpoint: " + dir.string());
  std::uint32_t version = 0, scalar = 0;
  std::uint64_t count = 0;
  get(version);
  get(scalar);
  get(count);
  if (version != kWeightsVersion) throw IncompatibleCheckpoint("unsupported checkpoint version");
  if (scalar != 4 && scalar != 8) throw IncompatibleCheckpoint("unsupported scalar width");
  Checkpoint<T> ck;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    get(len);
    std::string name(len, '\0');
    in.read(name.data(), len);
    std::int64_t rows = 0, cols = 0;
    std::int32_t group = 0;
    std::uint8_t decay = 0;
    get(rows);
    get(cols);
    get(group);
    get(decay);
    Mat<T> value(rows, cols);
    if (scalar == sizeof(T)) {
      in.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(value.size() * sizeof(T)));
    } else if (scalar == 4) {
      Mat<float> tmp(rows, cols);
      in.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * 4));
      value = tmp.template cast<T>();
    } else {
      Mat<double> tmp(rows, cols);
      in.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * 8));
      value = tmp.template cast<T>();
    }
    if (!in) throw DataError("truncated checkpoint");
    ck.params.add(name, std::move(value), group, decay != 0);
  }
  ck.meta = read_meta(dir / "meta.txt");
  return ck;
}

/// Fails loudly when the stored encoder config differs from `expected`.
inline void check_encoder_meta(const Meta& meta, const EncoderConfig& expected, const std::string& prefix = "encoder.") {
  for (const auto& [k, v] : expected.to_meta(prefix)) {
    auto it = meta.find(k);
    if (it == meta.end()) throw IncompatibleCheckpoint("checkpoint lacks " + k);
    if (it->second != v)
      throw IncompatibleCheckpoint("checkpoint " + k + " = " + it->second + " but model expects " + v);
  }
}

inline EncoderConfig encoder_from_meta(const Meta& meta, const std::string& prefix = "encoder.") {
  auto get = [&](const std::string& k) {
    auto it = meta.find(prefix + k);
    if (it == meta.end()) throw IncompatibleCheckpoint("checkpoint lacks " + prefix + k);
    return it->second;
  };
  EncoderConfig c;
  c.patch_size = std::stoi(get("patch_size"));
  c.embed_dim = std::stoi(get("embed_dim"));
  c.depth = std::stoi(get("depth"));
  c.heads = std::stoi(get("heads"));
  c.mlp_ratio = std::stod(get("mlp_ratio"));
  c.class_token = get("class_token") == "1";
  return c;
}

/// Saves an encoder-bearing model; the config lands in meta.txt.
template <typename T>
void save_pretrained(const std::filesystem::path& dir, const ParamStore<T>& ps, const EncoderConfig& cfg,
                     Meta extra = {}) {
  for (const auto& [k, v] : cfg.to_meta()) extra[k] = v;
  save_checkpoint(dir, ps, extra);
}

template <typename T>
Checkpoint<T> load_pretrained(const std::filesystem::path& dir, const EncoderConfig& expected) {
  auto ck = load_checkpoint<T>(dir);
  check_encoder_meta(ck.meta, expected);
  return ck;
}

/// Copies `src_prefix`* tensors of a checkpoint into `dst_prefix`* slots of a
/// model. Returns the resolved destination names; every destination slot
/// under dst_prefix must be filled.
template <typename T>
std::vector<std::string> transfer_encoder(ParamStore<T>& dst, const ParamStore<T>& src,
                                          const std::string& src_prefix = "encoder.",
                                          const std::string& dst_prefix = "encoder.") {
  std::vector<std::string> resolved;
  std::set<std::string> missing;
  for (const auto& name : dst.names(dst_prefix)) missing.insert(name);
  for (const auto& p : src.all()) {
    if (p.name.rfind(src_prefix, 0) != 0) continue;
    const std::string target = dst_prefix + p.name.substr(src_prefix.size());
    if (!dst.contains(target)) throw IncompatibleCheckpoint("model has no slot for " + target);
    auto& slot = dst.at(target);
    if (slot.value.rows() != p.value.rows() || slot.value.cols() != p.value.cols())
      throw IncompatibleCheckpoint("shape mismatch for " + target);
    slot.value = p.value;
    resolved.push_back(target);
    missing.erase(target);
  }
  if (!missing.empty()) throw IncompatibleCheckpoint("checkpoint does not provide " + *missing.begin());
  return resolved;
}

}  // namespace affectlab
