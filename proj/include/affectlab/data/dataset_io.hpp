#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "affectlab/core/csv.hpp"
#include "affectlab/core/error.hpp"
#include "affectlab/data/labels.hpp"

namespace affectlab {

inline constexpr std::string_view kLabelsFile = "labels.csv";

inline std::vector<std::string> label_columns(bool with_validity) {
  std::vector<std::string> cols = {"id", "valence", "arousal", "expression"};
  for (auto n : kAuNames) cols.emplace_back(n);
  if (with_validity) cols.emplace_back("au_valid");
  return cols;
}

inline std::string join_header(const std::vector<std::string>& cols) {
  std::string h;
  for (std::size_t i = 0; i < cols.size(); ++i) h += (i ? "," : "") + cols[i];
  return h;
}

/// Validates a header against the expected column list: unknown and missing
/// columns are data errors that name the offending column.
inline void check_header(const std::vector<std::string>& got, const std::vector<std::string>& want,
                         const std::string& path) {
  for (const auto& g : got)
    if (std::find(want.begin(), want.end(), csv::trim(g)) == want.end())
      throw DataError(path + ": unknown column '" + g + "'");
  for (const auto& w : want)
    if (std::find_if(got.begin(), got.end(), [&](const std::string& g) { return csv::trim(g) == w; }) == got.end())
      throw DataError(path + ": missing column '" + w + "'");
  for (std::size_t i = 0; i < want.size(); ++i)
    if (csv::trim(got[i]) != want[i]) throw DataError(path + ": column order differs at '" + got[i] + "'");
}

struct LabeledRow {
  std::string id;
  Labels labels;
};

inline std::string format_va(double v) { return v == kVaSentinel ? std::string("-5") : csv::fmt6(v); }

inline void write_labels_csv(const std::string& path, const std::vector<LabeledRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << join_header(label_columns(true)) << '\n';
  for (const auto& r : rows) {
    out << r.id << ',' << format_va(r.labels.va.valence) << ',' << format_va(r.labels.va.arousal) << ','
        << r.labels.expression.index;
    for (int a : r.labels.au.values) out << ',' << a;
    out << ',' << (r.labels.au.valid ? 1 : 0) << '\n';
  }
}

/// Reads a labels file. The au_valid column is optional so that a file in
/// prediction layout can serve as ground truth (all AU rows valid).
inline std::vector<LabeledRow> read_labels_csv(const std::string& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw DataError(path + ": empty labels file");
  const auto header = csv::split(lines[0]);
  const bool with_validity =
      std::find_if(header.begin(), header.end(), [](const std::string& h) { return csv::trim(h) == "au_valid"; }) !=
      header.end();
  const auto want = label_columns(with_validity);
  check_header(header, want, path);
  std::vector<LabeledRow> rows;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto where = csv::location(path, li);
    const auto f = csv::split(lines[li]);
    if (f.size() != want.size()) throw DataError(where + ": expected " + std::to_string(want.size()) + " fields");
    LabeledRow r;
    r.id = std::string(csv::trim(f[0]));
    r.labels.va.valence = csv::parse_real(f[1], where);
    r.labels.va.arousal = csv::parse_real(f[2], where);
    r.labels.expression.index = csv::parse_int(f[3], where);
    for (int j = 0; j < kNumAus; ++j) {
      const int v = csv::parse_int(f[static_cast<std::size_t>(4 + j)], where);
      if (v != 0 && v != 1) throw DataError(where + ": AU flag must be 0 or 1");
      r.labels.au.values[static_cast<std::size_t>(j)] = v;
    }
    r.labels.au.valid = with_validity ? csv::parse_int(f[16], where) != 0 : true;
    rows.push_back(std::move(r));
  }
  return rows;
}

/// 8-bit RGB PNG; values are clamped to [0, 1] and rounded.
template <typename T>
void write_png(const std::string& path, const Image<T>& img) {
  if (img.channels != 3) throw DataError("malformed image: PNG writer expects 3 channels");
  std::vector<png_byte> buf(static_cast<std::size_t>(img.height) * img.width * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(img.at(c, y, x)), 0.0, 1.0);
        buf[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, buf.data(), 0, nullptr))
    throw DataError("cannot write PNG " + path + ": " + pi.message);
}

template <typename T>
Image<T> read_png(const std::string& path) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str())) throw DataError("cannot read PNG " + path + ": " + pi.message);
  pi.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr))
    throw DataError("cannot decode PNG " + path + ": " + pi.message);
  Image<T> img(3, static_cast<int>(pi.height), static_cast<int>(pi.width));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<T>(buf[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] / 255.0);
  return img;
}

template <typename T>
void write_dataset(const std::filesystem::path& dir, const std::vector<FaceSample<T>>& samples) {
  std::filesystem::create_directories(dir);
  std::vector<LabeledRow> rows;
  rows.reserve(samples.size());
  for (const auto& s : samples) {
    write_png((dir / (s.id + ".png")).string(), s.image);
    rows.push_back({s.id, s.labels});
  }
  write_labels_csv((dir / kLabelsFile).string(), rows);
}

/// Loads labels.csv plus one PNG per id. Images are returned un-augmented.
template <typename T>
std::vector<FaceSample<T>> load_dataset(const std::filesystem::path& dir) {
  const auto rows = read_labels_csv((dir / kLabelsFile).string());
  std::vector<FaceSample<T>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    FaceSample<T> s;
    s.id = r.id;
    s.labels = r.labels;
    s.image = read_png<T>((dir / (r.id + ".png")).string());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace affectlab
