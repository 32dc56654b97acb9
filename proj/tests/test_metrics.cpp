#include <gtest/gtest.h>

#include <algorithm>

#include "affectlab/metrics.hpp"
#include "affectlab/prediction.hpp"
#include "oracles.hpp"

namespace affectlab {
namespace {

TEST(F1Binary, Conventions) {
  EXPECT_EQ(f1_binary(5, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(f1_binary(1, 1, 1), 0.5);
  EXPECT_EQ(f1_binary(0, 3, 2), 0.0);
  EXPECT_EQ(f1_binary(0, 0, 0), 0.0);
  EXPECT_EQ(f1_binary(0, 0, 4), 0.0);
  EXPECT_EQ(f1_binary(0, 4, 0), 0.0);
}

TEST(MacroF1, HandExample) {
  const double f = macro_f1({0, 1, 1, 1}, {0, 0, 1, 1}, 2);
  EXPECT_DOUBLE_EQ(f, (2.0 / 3.0 + 4.0 / 5.0) / 2.0);
  EXPECT_NEAR(f, 0.7333333333, 1e-9);
}

TEST(MacroF1, MatchesConfusionMatrixOracle) {
  std::mt19937_64 g(1);
  std::uniform_int_distribution<int> cls(0, 5);
  for (int t = 0; t < 200; ++t) {
    std::vector<int> p(40), y(40);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = cls(g);
      y[i] = cls(g);
    }
    ASSERT_NEAR(macro_f1(p, y, 6), oracle::macro_f1_confusion(p, y, 6), 1e-12);
  }
}

TEST(MacroF1, InvariantToClassRelabeling) {
  std::mt19937_64 g(2);
  std::uniform_int_distribution<int> cls(0, 7);
  std::vector<int> perm = {3, 0, 7, 1, 6, 2, 5, 4};
  for (int t = 0; t < 50; ++t) {
    std::vector<int> p(30), y(30), pp(30), yy(30);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = cls(g);
      y[i] = cls(g);
      pp[i] = perm[static_cast<std::size_t>(p[i])];
      yy[i] = perm[static_cast<std::size_t>(y[i])];
    }
    ASSERT_NEAR(macro_f1(p, y, 8), macro_f1(pp, yy, 8), 1e-12);
  }
}

TEST(MacroAccuracy, MeanRecall) {
  // class 0 recall 1/2, class 1 recall 2/2
  EXPECT_DOUBLE_EQ(macro_accuracy({0, 1, 1, 1}, {0, 0, 1, 1}, 2), 0.75);
}

std::vector<LabelRow> full_mtl_labels(int n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  std::bernoulli_distribution b(0.5);
  std::vector<LabelRow> rows;
  for (int i = 0; i < n; ++i) {
    LabelRow r;
    r.id = "r" + std::to_string(i);
    r.labels.va = {u(g), u(g)};
    r.labels.expression.index = i % kMtlClasses;
    for (auto& a : r.labels.au.values) a = b(g);
    r.labels.au.values[static_cast<std::size_t>(i % kNumAus)] = 1;
    rows.push_back(r);
  }
  return rows;
}

PredictionRow perfect(const LabelRow& l) {
  PredictionRow p;
  p.id = l.id;
  p.valence = l.labels.va.valence;
  p.arousal = l.labels.va.arousal;
  p.expression = l.labels.expression.index;
  p.au = l.labels.au.values;
  return p;
}

TEST(EvalMtl, PerfectPredictionsScoreThree) {
  const auto labels = full_mtl_labels(48, 3);
  std::vector<PredictionRow> preds;
  for (const auto& l : labels) preds.push_back(perfect(l));
  const auto r = eval_mtl(preds, labels);
  EXPECT_DOUBLE_EQ(r.p_mtl, 3.0);
  EXPECT_TRUE(r.warnings.empty());
  EXPECT_EQ(r.n_va, 48);
}

TEST(EvalMtl, AggregateOfTableComponents) {
  // EMMA row: 50.54 + 45.88 + 30.28 = 126.71 (rounding in the last digit)
  EXPECT_NEAR(aggregate_p_mtl(0.5054, 0.5054, std::vector<double>(8, 0.4588), std::vector<double>(12, 0.3028)),
              1.2671, 2e-4);
  EXPECT_NEAR(aggregate_p_mtl(0.5041, 0.5041, std::vector<double>(8, 0.4121), std::vector<double>(12, 0.3168)),
              1.2329, 2e-4);
}

TEST(EvalMtl, ExcludesSentinelsPerComponent) {
  auto labels = full_mtl_labels(24, 4);
  std::vector<PredictionRow> preds;
  for (const auto& l : labels) preds.push_back(perfect(l));
  // damage predictions only on rows whose labels are invalid for that component
  labels[0].labels.va = {kVaSentinel, kVaSentinel};
  preds[0].valence = 0.9;
  labels[1].labels.expression.index = -1;
  preds[1].expression = 3;
  labels[2].labels.au.valid = false;
  preds[2].au.fill(1);
  labels[8].labels.expression.index = 0;  // keep class coverage after the sentinel on row 1
  labels[9].labels.expression.index = 1;
  preds[8].expression = 0;
  preds[9].expression = 1;
  const auto r = eval_mtl(preds, labels);
  EXPECT_DOUBLE_EQ(r.ccc_v, 1.0);
  EXPECT_EQ(r.n_va, 23);
  EXPECT_EQ(r.n_exp, 23);
  EXPECT_EQ(r.n_au, 23);
  for (double f : r.f1_au) EXPECT_DOUBLE_EQ(f, 1.0);
}

TEST(EvalMtl, DatasetCccMatchesObjectivesModule) {
  auto labels = full_mtl_labels(30, 5);
  std::mt19937_64 g(6);
  std::normal_distribution<double> nd(0, 0.3);
  std::vector<PredictionRow> preds;
  std::vector<double> pv, lv;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto p = perfect(labels[i]);
    p.valence += nd(g);
    if (i % 7 == 0) labels[i].labels.va = {kVaSentinel, kVaSentinel};
    else {
      pv.push_back(p.valence);
      lv.push_back(labels[i].labels.va.valence);
    }
    preds.push_back(p);
  }
  EXPECT_DOUBLE_EQ(eval_mtl(preds, labels).ccc_v, ccc<double>(pv, lv));
}

TEST(EvalMtl, PermutationInvariant) {
  const auto labels = full_mtl_labels(40, 7);
  std::mt19937_64 g(8);
  std::uniform_int_distribution<int> cls(0, 7);
  std::vector<PredictionRow> preds;
  for (const auto& l : labels) {
    auto p = perfect(l);
    p.expression = cls(g);
    p.valence *= 0.5;
    p.au[3] = 1 - p.au[3];
    preds.push_back(p);
  }
  const auto a = eval_mtl(preds, labels);
  auto shuffled = preds;
  std::shuffle(shuffled.begin(), shuffled.end(), g);
  auto shuffled_labels = labels;
  std::shuffle(shuffled_labels.begin(), shuffled_labels.end(), g);
  const auto b = eval_mtl(shuffled, shuffled_labels);
  EXPECT_NEAR(a.p_mtl, b.p_mtl, 1e-12);
  EXPECT_NEAR(a.ccc_a, b.ccc_a, 1e-12);
}

TEST(EvalMtl, MonotoneInEachComponent) {
  const std::vector<double> base_exp(8, 0.4), base_au(12, 0.3);
  const double base = aggregate_p_mtl(0.5, 0.5, base_exp, base_au);
  for (std::size_t k = 0; k < 8; ++k) {
    auto e = base_exp;
    e[k] = 0.6;
    ASSERT_GT(aggregate_p_mtl(0.5, 0.5, e, base_au), base);
  }
  for (std::size_t k = 0; k < 12; ++k) {
    auto a = base_au;
    a[k] = 0.31;
    ASSERT_GT(aggregate_p_mtl(0.5, 0.5, base_exp, a), base);
  }
}

TEST(EvalMtl, AlignmentErrors) {
  const auto labels = full_mtl_labels(4, 9);
  std::vector<PredictionRow> preds;
  for (const auto& l : labels) preds.push_back(perfect(l));
  auto fewer = preds;
  fewer.pop_back();
  EXPECT_THROW(eval_mtl(fewer, labels), DataError);
  auto renamed = preds;
  renamed[2].id = "zzz";
  EXPECT_THROW(eval_mtl(renamed, labels), DataError);
  auto dup = preds;
  dup[1].id = dup[0].id;
  EXPECT_THROW(eval_mtl(dup, labels), DataError);
}

TEST(EvalMtl, EmptyComponentReportsZeroWithWarning) {
  auto labels = full_mtl_labels(6, 10);
  std::vector<PredictionRow> preds;
  for (auto& l : labels) {
    preds.push_back(perfect(l));
    l.labels.va = {kVaSentinel, kVaSentinel};
  }
  labels[0].labels.va = {0.1, 0.2};
  const auto r = eval_mtl(preds, labels);
  EXPECT_EQ(r.ccc_v, 0.0);
  EXPECT_EQ(r.warnings.size(), 1u);
}

std::vector<LabelRow> lsd_labels(const std::vector<int>& ys) {
  std::vector<LabelRow> rows;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    LabelRow r;
    r.id = "l" + std::to_string(i);
    r.labels.expression.index = ys[i];
    rows.push_back(r);
  }
  return rows;
}

std::vector<PredictionRow> lsd_preds(const std::vector<int>& ps) {
  std::vector<PredictionRow> rows;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    PredictionRow r;
    r.id = "l" + std::to_string(i);
    r.expression = ps[i];
    rows.push_back(r);
  }
  return rows;
}

TEST(EvalLsd, PerfectScoresOne) {
  const std::vector<int> y = {0, 1, 2, 3, 4, 5, 5, 4};
  const auto r = eval_lsd(lsd_preds(y), lsd_labels(y));
  EXPECT_DOUBLE_EQ(r.p_lsd, 1.0);
  EXPECT_DOUBLE_EQ(r.acc, 1.0);
}

TEST(EvalLsd, AbsentClassCountsAsZero) {
  const std::vector<int> y = {0, 1, 2, 3, 4, 0};
  const auto r = eval_lsd(lsd_preds(y), lsd_labels(y));
  EXPECT_EQ(r.f1_exp[5], 0.0);
  EXPECT_DOUBLE_EQ(r.p_lsd, 5.0 / 6.0);
}

TEST(EvalLsd, OneOffDiagonalErrorPerClass) {
  // each class has 3 samples; one of them predicted as the next class
  std::vector<int> y, p;
  for (int c = 0; c < 6; ++c)
    for (int k = 0; k < 3; ++k) {
      y.push_back(c);
      p.push_back(k == 0 ? (c + 1) % 6 : c);
    }
  const auto r = eval_lsd(lsd_preds(p), lsd_labels(y));
  // per class: tp 2, fp 1, fn 1 -> F1 2/3
  for (double f : r.f1_exp) EXPECT_DOUBLE_EQ(f, 2.0 / 3.0);
  EXPECT_NEAR(r.p_lsd, oracle::macro_f1_confusion(p, y, 6), 1e-12);
  EXPECT_DOUBLE_EQ(r.acc, 2.0 / 3.0);
}

TEST(EvalLsd, UnknownClassIsDataError) {
  EXPECT_THROW(eval_lsd(lsd_preds({0, 1}), lsd_labels({0, 6})), DataError);
  EXPECT_THROW(eval_lsd(lsd_preds({0, 1}), lsd_labels({0, -1})), DataError);
}

TEST(MetricReport, KeyValueRoundTrip) {
  const auto labels = full_mtl_labels(16, 11);
  std::vector<PredictionRow> preds;
  std::mt19937_64 g(12);
  std::uniform_int_distribution<int> cls(0, 7);
  for (const auto& l : labels) {
    auto p = perfect(l);
    p.expression = cls(g);
    p.arousal *= -0.3;
    preds.push_back(p);
  }
  const auto r = eval_mtl(preds, labels);
  const auto back = MetricReport::from_kv(r.to_kv());
  EXPECT_EQ(back.to_kv(), r.to_kv());
  EXPECT_NEAR(back.p_mtl, r.p_mtl, 5e-7);
  EXPECT_EQ(back.f1_exp.size(), 8u);
  EXPECT_EQ(back.f1_au.size(), 12u);
  const auto lsd = eval_lsd(lsd_preds({0, 1, 2}), lsd_labels({0, 1, 1}));
  EXPECT_EQ(MetricReport::from_kv(lsd.to_kv()).to_kv(), lsd.to_kv());
}

TEST(Decide, ThresholdClampArgmax) {
  ProbOutput p;
  p.exp_probs = {0.1, 0.1, 0.1, 0.1, 0.1, 0.4, 0.05, 0.05};
  p.au_probs.fill(0.5);
  p.au_probs[1] = 0.5000001;
  p.valence = 1.7;
  p.arousal = -0.3;
  const auto row = decide(p, "x");
  EXPECT_EQ(row.expression, 5);
  EXPECT_EQ(row.au[0], 0);
  EXPECT_EQ(row.au[1], 1);
  EXPECT_EQ(row.valence, 1.0);
  EXPECT_EQ(row.arousal, -0.3);
  EXPECT_EQ(sigmoid_prob(0.0), 0.5);
}

TEST(ProbAverager, AverageOfEqualsIsExact) {
  std::vector<ProbOutput> one(3);
  for (std::size_t i = 0; i < one.size(); ++i) {
    one[i].exp_probs = {0.2, 0.3, 0.5};
    one[i].au_probs.fill(0.1 * static_cast<double>(i));
    one[i].valence = 0.123456789;
    one[i].arousal = -0.7;
  }
  ProbAverager avg;
  for (int k = 0; k < 5; ++k) avg.add(one);
  const auto m = avg.mean();
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(m[i].exp_probs, one[i].exp_probs);
    EXPECT_EQ(m[i].au_probs, one[i].au_probs);
    EXPECT_EQ(m[i].valence, one[i].valence);
  }
}

}  // namespace
}  // namespace affectlab
