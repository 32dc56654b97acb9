#pragma once

// Dataset-level evaluation: per-axis CCC, one-vs-rest F1, macro aggregates,
// P_MTL and P_LSD. Sentinel rows are excluded per component.

#include <array>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "affectlab/core/csv.hpp"
#include "affectlab/core/error.hpp"
#include "affectlab/data/labels.hpp"
#include "affectlab/objectives.hpp"

namespace affectlab {

/// F1 from raw counts; 0 whenever precision or recall is undefined or both are 0.
inline double f1_binary(long tp, long fp, long fn) {
  if (tp + fp == 0 || tp + fn == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double r = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

struct ClassCounts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  long support = 0;  // label occurrences
};

/// One-vs-rest counts for every class in [0, k).
inline std::vector<ClassCounts> one_vs_rest_counts(const std::vector<int>& pred, const std::vector<int>& label, int k) {
  if (pred.size() != label.size()) throw ShapeError("prediction/label length mismatch");
  std::vector<ClassCounts> c(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int y = label[i];
    const int p = pred[i];
    if (y < 0 || y >= k) throw DataError("invalid label " + std::to_string(y) + " for " + std::to_string(k) + " classes");
    if (p < 0 || p >= k) throw DataError("invalid prediction " + std::to_string(p));
    c[static_cast<std::size_t>(y)].support++;
    if (p == y) {
      c[static_cast<std::size_t>(y)].tp++;
    } else {
      c[static_cast<std::size_t>(p)].fp++;
      c[static_cast<std::size_t>(y)].fn++;
    }
  }
  return c;
}

inline std::vector<double> per_class_f1(const std::vector<int>& pred, const std::vector<int>& label, int k) {
  std::vector<double> f;
  for (const auto& c : one_vs_rest_counts(pred, label, k)) f.push_back(f1_binary(c.tp, c.fp, c.fn));
  return f;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double macro_f1(const std::vector<int>& pred, const std::vector<int>& label, int k) {
  return mean_of(per_class_f1(pred, label, k));
}

/// Mean per-class recall over classes that occur in the labels.
inline double macro_accuracy(const std::vector<int>& pred, const std::vector<int>& label, int k) {
  double s = 0;
  int n = 0;
  for (const auto& c : one_vs_rest_counts(pred, label, k)) {
    if (c.support == 0) continue;
    s += static_cast<double>(c.tp) / static_cast<double>(c.support);
    ++n;
  }
  return n ? s / n : 0.0;
}

/// Mean VA CCC plus macro expression F1 plus macro AU F1.
inline double aggregate_p_mtl(double ccc_v, double ccc_a, const std::vector<double>& f1_exp,
                              const std::vector<double>& f1_au) {
  return 0.5 * (ccc_v + ccc_a) + mean_of(f1_exp) + mean_of(f1_au);
}

struct MetricReport {
  std::string task = "mtl";
  double ccc_v = 0.0;
  double ccc_a = 0.0;
  std::vector<double> f1_exp;
  std::vector<double> f1_au;
  double p_mtl = 0.0;
  double p_lsd = 0.0;
  double acc = 0.0;
  long n_va = 0;
  long n_exp = 0;
  long n_au = 0;
  std::vector<std::string> warnings;

  /// Machine-readable key=value lines.
  [[nodiscard]] std::string to_kv() const {
    std::ostringstream o;
    o << "task=" << task << '\n';
    if (task == "mtl") {
      o << "ccc_v=" << csv::fmt6(ccc_v) << '\n' << "ccc_a=" << csv::fmt6(ccc_a) << '\n';
      for (std::size_t i = 0; i < f1_exp.size(); ++i) o << "f1_exp_" << i << '=' << csv::fmt6(f1_exp[i]) << '\n';
      for (std::size_t i = 0; i < f1_au.size(); ++i) o << "f1_" << kAuNames[i] << '=' << csv::fmt6(f1_au[i]) << '\n';
      o << "p_mtl=" << csv::fmt6(p_mtl) << '\n';
      o << "n_va=" << n_va << "\nn_exp=" << n_exp << "\nn_au=" << n_au << '\n';
    } else {
      for (std::size_t i = 0; i < f1_exp.size(); ++i) o << "f1_exp_" << i << '=' << csv::fmt6(f1_exp[i]) << '\n';
      o << "acc=" << csv::fmt6(acc) << '\n' << "p_lsd=" << csv::fmt6(p_lsd) << '\n' << "n_exp=" << n_exp << '\n';
    }
    for (const auto& w : warnings) o << "warning=" << w << '\n';
    return o.str();
  }

  [[nodiscard]] std::string to_text() const {
    std::ostringstream o;
    char buf[128];
    if (task == "mtl") {
      std::snprintf(buf, sizeof(buf), "P_MTL = %.6f\n", p_mtl);
      o << buf;
      std::snprintf(buf, sizeof(buf), "  VA   CCC valence %.4f  arousal %.4f  (%ld rows)\n", ccc_v, ccc_a, n_va);
      o << buf;
      std::snprintf(buf, sizeof(buf), "  EXPR macro F1 %.4f  (%ld rows)\n", mean_of(f1_exp), n_exp);
      o << buf;
      std::snprintf(buf, sizeof(buf), "  AU   macro F1 %.4f  (%ld rows)\n", mean_of(f1_au), n_au);
      o << buf;
    } else {
      std::snprintf(buf, sizeof(buf), "P_LSD = %.6f\n  macro acc %.4f  (%ld rows)\n", p_lsd, acc, n_exp);
      o << buf;
    }
    for (const auto& w : warnings) o << "  warning: " << w << '\n';
    return o.str();
  }

  /// Inverse of to_kv().
  static MetricReport from_kv(const std::string& text) {
    MetricReport r;
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const auto key = line.substr(0, eq);
      const auto val = line.substr(eq + 1);
      if (key == "warning") {
        r.warnings.push_back(val);
        continue;
      }
      kv[key] = val;
    }
    auto num = [&](const std::string& k) { return kv.count(k) ? csv::parse_real(kv[k], k) : 0.0; };
    r.task = kv.count("task") ? kv["task"] : "mtl";
    for (int i = 0; kv.count("f1_exp_" + std::to_string(i)); ++i) r.f1_exp.push_back(num("f1_exp_" + std::to_string(i)));
    if (r.task == "mtl") {
      r.ccc_v = num("ccc_v");
      r.ccc_a = num("ccc_a");
      for (auto n : kAuNames)
        if (kv.count("f1_" + std::string(n))) r.f1_au.push_back(num("f1_" + std::string(n)));
      r.p_mtl = num("p_mtl");
      r.n_va = static_cast<long>(num("n_va"));
      r.n_au = static_cast<long>(num("n_au"));
    } else {
      r.acc = num("acc");
      r.p_lsd = num("p_lsd");
    }
    r.n_exp = static_cast<long>(num("n_exp"));
    return r;
  }
};

/// Predicted labels for one row. VA is already clamped by the predictor.
struct PredictionRow {
  std::string id;
  double valence = 0.0;
  double arousal = 0.0;
  int expression = 0;
  std::array<int, kNumAus> au{};
  bool operator==(const PredictionRow&) const = default;
};

struct LabelRow {
  std::string id;
  Labels labels;
};

namespace detail {

template <typename Row>
std::map<std::string, std::size_t> index_by_id(const std::vector<Row>& rows, const char* what) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (!idx.emplace(rows[i].id, i).second) throw DataError(std::string("duplicate id in ") + what + ": " + rows[i].id);
  return idx;
}

/// Pairs each label row with its prediction; both sides must hold the same ids.
inline std::vector<std::pair<const PredictionRow*, const LabelRow*>> align(const std::vector<PredictionRow>& pred,
                                                                           const std::vector<LabelRow>& labels) {
  if (pred.size() != labels.size())
    throw DataError("alignment error: " + std::to_string(pred.size()) + " predictions vs " +
                    std::to_string(labels.size()) + " labels");
  const auto pidx = index_by_id(pred, "predictions");
  index_by_id(labels, "labels");
  std::vector<std::pair<const PredictionRow*, const LabelRow*>> out;
  for (const auto& l : labels) {
    auto it = pidx.find(l.id);
    if (it == pidx.end()) throw DataError("alignment error: no prediction for id " + l.id);
    out.emplace_back(&pred[it->second], &l);
  }
  return out;
}

}  // namespace detail

inline MetricReport eval_mtl(const std::vector<PredictionRow>& pred, const std::vector<LabelRow>& labels) {
  const auto pairs = detail::align(pred, labels);
  MetricReport r;
  r.task = "mtl";
  std::vector<double> pv, pa, lv, la;
  std::vector<int> pe, le;
  std::vector<std::vector<int>> pau(kNumAus), lau(kNumAus);
  for (const auto& [p, l] : pairs) {
    const auto v = label_validity(l->labels);
    if (v.va) {
      pv.push_back(p->valence);
      pa.push_back(p->arousal);
      lv.push_back(l->labels.va.valence);
      la.push_back(l->labels.va.arousal);
    }
    if (v.exp) {
      if (l->labels.expression.index >= kMtlClasses) throw DataError("invalid expression label for id " + l->id);
      pe.push_back(p->expression);
      le.push_back(l->labels.expression.index);
    }
    if (v.au)
      for (int j = 0; j < kNumAus; ++j) {
        pau[static_cast<std::size_t>(j)].push_back(p->au[static_cast<std::size_t>(j)]);
        lau[static_cast<std::size_t>(j)].push_back(l->labels.au.values[static_cast<std::size_t>(j)]);
      }
  }
  r.n_va = static_cast<long>(lv.size());
  r.n_exp = static_cast<long>(le.size());
  r.n_au = static_cast<long>(lau[0].size());
  if (lv.size() >= 2) {
    r.ccc_v = ccc<double>(pv, lv);
    r.ccc_a = ccc<double>(pa, la);
  } else {
    r.warnings.push_back("fewer than 2 VA-valid rows; CCC reported as 0");
  }
  if (!le.empty()) {
    r.f1_exp = per_class_f1(pe, le, kMtlClasses);
  } else {
    r.f1_exp.assign(kMtlClasses, 0.0);
    r.warnings.push_back("no EXPR-valid rows; expression F1 reported as 0");
  }
  r.f1_au.assign(kNumAus, 0.0);
  if (!lau[0].empty()) {
    for (int j = 0; j < kNumAus; ++j) {
      long tp = 0, fp = 0, fn = 0;
      const auto& ps = pau[static_cast<std::size_t>(j)];
      const auto& ls = lau[static_cast<std::size_t>(j)];
      for (std::size_t i = 0; i < ps.size(); ++i) {
        if (ps[i] && ls[i]) ++tp;
        if (ps[i] && !ls[i]) ++fp;
        if (!ps[i] && ls[i]) ++fn;
      }
      r.f1_au[static_cast<std::size_t>(j)] = f1_binary(tp, fp, fn);
    }
  } else {
    r.warnings.push_back("no AU-valid rows; AU F1 reported as 0");
  }
  r.p_mtl = aggregate_p_mtl(r.ccc_v, r.ccc_a, r.f1_exp, r.f1_au);
  return r;
}

inline MetricReport eval_lsd(const std::vector<PredictionRow>& pred, const std::vector<LabelRow>& labels) {
  const auto pairs = detail::align(pred, labels);
  MetricReport r;
  r.task = "lsd";
  std::vector<int> pe, le;
  for (const auto& [p, l] : pairs) {
    const int y = l->labels.expression.index;
    if (y < 0 || y >= kLsdClasses) throw DataError("invalid LSD label " + std::to_string(y) + " for id " + l->id);
    pe.push_back(p->expression);
    le.push_back(y);
  }
  r.n_exp = static_cast<long>(le.size());
  r.f1_exp = per_class_f1(pe, le, kLsdClasses);
  r.p_lsd = mean_of(r.f1_exp);
  r.acc = macro_accuracy(pe, le, kLsdClasses);
  return r;
}

}  // namespace affectlab
