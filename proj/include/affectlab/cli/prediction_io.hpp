#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "affectlab/core/csv.hpp"
#include "affectlab/data/dataset_io.hpp"
#include "affectlab/metrics.hpp"

namespace affectlab {

inline std::vector<std::string> prediction_columns() { return label_columns(false); }

inline void write_predictions(const std::string& path, const std::vector<PredictionRow>& rows) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << join_header(prediction_columns()) << '\n';
  for (const auto& r : rows) {
    out << r.id << ',' << csv::fmt6(r.valence) << ',' << csv::fmt6(r.arousal) << ',' << r.expression;
    for (int a : r.au) out << ',' << a;
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path);
}

/// Row order is preserved. Unknown or missing columns name the column.
inline std::vector<PredictionRow> read_predictions(const std::string& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw DataError(path + ": empty prediction file");
  const auto want = prediction_columns();
  check_header(csv::split(lines[0]), want, path);
  std::vector<PredictionRow> rows;
  rows.reserve(lines.size() - 1);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto where = csv::location(path, li);
    const auto f = csv::split(lines[li]);
    if (f.size() != want.size()) throw DataError(where + ": expected " + std::to_string(want.size()) + " fields");
    PredictionRow r;
    r.id = std::string(csv::trim(f[0]));
    if (r.id.empty()) throw DataError(where + ": empty id");
    r.valence = csv::parse_real(f[1], where);
    r.arousal = csv::parse_real(f[2], where);
    r.expression = csv::parse_int(f[3], where);
    for (int j = 0; j < kNumAus; ++j) {
      const int v = csv::parse_int(f[static_cast<std::size_t>(4 + j)], where);
      if (v != 0 && v != 1) throw DataError(where + ": AU flag must be 0 or 1");
      r.au[static_cast<std::size_t>(j)] = v;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Ground truth for metrics from a labels file (sentinels kept as-is).
inline std::vector<LabelRow> read_label_rows(const std::string& path) {
  std::vector<LabelRow> out;
  for (auto& r : read_labels_csv(path)) out.push_back({std::move(r.id), r.labels});
  return out;
}

}  // namespace affectlab
