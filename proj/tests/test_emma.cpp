#include <gtest/gtest.h>

#include <random>

#include "affectlab/emma.hpp"
#include "affectlab/engine/optim.hpp"
#include "support.hpp"

using namespace affectlab;
using affectlab::testing::random_image;

namespace {

EmmaConfig small_emma(bool variant = false) {
  EmmaConfig c;
  c.encoder.embed_dim = 16;
  c.encoder.depth = 1;
  c.encoder.heads = 2;
  c.encoder.drop_path_rate = 0.0;
  c.scorer.channels = {4, 4, 8, 8};
  c.scorer.pool = 2;
  c.va_hidden = 8;
  c.exp_sum_variant = variant;
  return c;
}

template <typename T>
std::vector<Image<T>> images(int n, std::mt19937_64& g) {
  std::vector<Image<T>> out;
  for (int i = 0; i < n; ++i) out.push_back(random_image<T>(32, g));
  return out;
}

std::vector<Labels> random_labels(int n, std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> cls(0, kMtlClasses - 1), bit(0, 1);
  std::vector<Labels> out(static_cast<std::size_t>(n));
  for (auto& l : out) {
    l.va = {u(g), u(g)};
    l.expression.index = cls(g);
    for (auto& a : l.au.values) a = bit(g);
  }
  return out;
}

/// Backward of L_VA alone; returns its value.
double va_only_backward(EmmaModel<double>& m, const std::vector<Image<double>>& imgs,
                        const std::vector<Labels>& labels) {
  m.params.zero_grad();
  Tape<double> t;
  auto g = emma_graph<double>(t, m, imgs, Mode::kEval, nullptr);
  const auto lb = make_label_batch<double>(labels);
  const auto va = loss_va<double>(g.va.value(), lb.va, lb.va_valid);
  t.backward(ag::custom_scalar<double>({g.va}, va.value, {va.grad}));
  return va.value;
}

double va_only_value(EmmaModel<double>& m, const std::vector<Image<double>>& imgs, const std::vector<Labels>& labels) {
  const auto s = emma_forward<double>(imgs, m);
  const auto lb = make_label_batch<double>(labels);
  return loss_va<double>(s.scores.va, lb.va, lb.va_valid).value;
}

}  // namespace

class EmmaStopGradient : public ::testing::TestWithParam<bool> {};

TEST_P(EmmaStopGradient, VaLossReachesOnlyTheVaHead) {
  std::mt19937_64 g(1);
  auto m = init_emma<double>(small_emma(GetParam()), 3);
  const auto imgs = images<double>(6, g);
  const auto labels = random_labels(6, g);
  va_only_backward(m, imgs, labels);
  double va_head_max = 0.0;
  for (const auto& p : m.params.all()) {
    if (p.name.rfind("va_head.", 0) == 0) {
      va_head_max = std::max(va_head_max, p.grad.cwiseAbs().maxCoeff());
    } else {
      EXPECT_EQ(p.grad.cwiseAbs().maxCoeff(), 0.0) << p.name;
    }
  }
  EXPECT_GT(va_head_max, 1e-8);
}

INSTANTIATE_TEST_SUITE_P(Variants, EmmaStopGradient, ::testing::Values(false, true));

TEST(Emma, VaHeadGradientMatchesFiniteDifferences) {
  std::mt19937_64 g(2);
  auto m = init_emma<double>(small_emma(), 4);
  const auto imgs = images<double>(5, g);
  const auto labels = random_labels(5, g);
  va_only_backward(m, imgs, labels);
  std::mt19937_64 pick(5);
  EXPECT_LT(affectlab::testing::param_grad_error(m.params, [&] { return va_only_value(m, imgs, labels); }, pick, 8,
                                                 1e-6, "va_head."),
            1e-5);
}

TEST(Emma, ZeroVaWeightsGiveBias) {
  std::mt19937_64 g(3);
  auto m = init_emma<double>(small_emma(), 5);
  m.params.at("va_head.fc2.weight").value.setZero();
  m.params.at("va_head.fc2.bias").value << 0.25, -0.4;
  const auto s = emma_forward<double>(images<double>(3, g), m);
  for (Eigen::Index r = 0; r < 3; ++r) {
    EXPECT_EQ(s.scores.va(r, 0), 0.25);
    EXPECT_EQ(s.scores.va(r, 1), -0.4);
  }
}

TEST(Emma, FeatureLengthIsFixed) {
  std::mt19937_64 g(4);
  const auto cfg = small_emma();
  EXPECT_EQ(EmmaConfig{}.feature_dim(), 28);
  auto m = init_emma<double>(cfg, 6);
  for (int size : {32, 48}) {
    std::vector<Image<double>> imgs = {random_image<double>(size, g)};
    const auto s = emma_forward<double>(imgs, m);
    EXPECT_EQ(s.feature.cols(), 28);
    EXPECT_EQ(s.scores.au_logits.cols(), kNumAus);
    EXPECT_EQ(s.scores.exp_logits.cols(), 8);
    EXPECT_EQ(s.exp2_logits.cols(), 8);
    EXPECT_EQ(s.scores.va.cols(), 2);
  }
}

TEST(Emma, FeatureConcatenatesRawLogits) {
  std::mt19937_64 g(5);
  auto m = init_emma<double>(small_emma(), 7);
  const auto s = emma_forward<double>(images<double>(2, g), m);
  EXPECT_EQ(s.feature.leftCols(kNumAus), s.scores.au_logits);
  EXPECT_EQ(s.feature.middleCols(kNumAus, 8), s.scores.exp_logits);
  EXPECT_EQ(s.feature.rightCols(8), s.exp2_logits);
}

TEST(Emma, ExpSumVariantChangesExpressionLoss) {
  std::mt19937_64 g(6);
  const auto imgs = images<double>(4, g);
  const auto labels = random_labels(4, g);
  const auto lb = make_label_batch<double>(labels);
  auto plain = init_emma<double>(small_emma(false), 8);
  auto summed = init_emma<double>(small_emma(true), 8);
  Tape<double> t1, t2;
  const auto l1 = emma_loss(emma_graph<double>(t1, plain, imgs, Mode::kEval, nullptr), lb, false).second;
  const auto l2 = emma_loss(emma_graph<double>(t2, summed, imgs, Mode::kEval, nullptr), lb, true).second;
  EXPECT_EQ(l1.au, l2.au);
  EXPECT_NE(l1.exp, l2.exp);
}

TEST(Emma, ExpSumVariantTrainsTheScorer) {
  std::mt19937_64 g(7);
  auto m = init_emma<double>(small_emma(true), 9);
  Rng rng(1);
  emma_backward<double>(m, images<double>(3, g), random_labels(3, g), rng);
  EXPECT_GT(m.params.at("cnn.fc.weight").grad.cwiseAbs().maxCoeff(), 0.0);
  auto frozen = init_emma<double>(small_emma(false), 9);
  emma_backward<double>(frozen, images<double>(3, g), random_labels(3, g), rng);
  EXPECT_EQ(frozen.params.at("cnn.fc.weight").grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Emma, VariantNeedsMatchingClassCounts) {
  auto c = small_emma(true);
  c.scorer.classes = 7;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Emma, TrainStepIsDeterministic) {
  std::mt19937_64 g(8);
  const auto imgs = images<float>(4, g);
  const auto labels = random_labels(4, g);
  auto step = [&] {
    auto m = init_emma<float>(small_emma(), 10);
    m.cfg.encoder.drop_path_rate = 0.2;
    Rng rng(77);
    AdamWState<float> st;
    m.params.zero_grad();
    emma_backward<float>(m, imgs, labels, rng);
    optim_step(m.params, st, {1e-3, 0.05, 1.0, 0.65, m.cfg.encoder.depth});
    return m;
  };
  auto a = step();
  auto b = step();
  for (const auto& p : a.params.all()) EXPECT_EQ(p.value, b.params.at(p.name).value) << p.name;
}

TEST(Emma, AllInvalidBatchGivesZeroGradient) {
  std::mt19937_64 g(9);
  auto m = init_emma<double>(small_emma(true), 11);
  std::vector<Labels> labels(3);
  for (auto& l : labels) {
    l.va = {kVaSentinel, kVaSentinel};
    l.expression.index = kExpSentinel;
    l.au.valid = false;
  }
  m.params.zero_grad();
  Rng rng(1);
  const auto r = emma_backward<double>(m, images<double>(3, g), labels, rng);
  EXPECT_EQ(r.loss.total, 0.0);
  EXPECT_EQ(m.params.grad_norm(), 0.0);
  const auto before = m.params;
  AdamWState<double> st;
  optim_step(m.params, st, {1e-2, 0.0, 1.0, 1.0, m.cfg.encoder.depth});
  for (const auto& p : m.params.all()) EXPECT_EQ(p.value, before.at(p.name).value) << p.name;
}

TEST(Emma, ConstantScorerStillTrainsAuAndExpression) {
  std::mt19937_64 g(10);
  auto m = init_emma<double>(small_emma(), 12);
  m.scorer_override = [](std::span<const Image<double>> imgs) {
    return Mat<double>::Constant(static_cast<Eigen::Index>(imgs.size()), 8, 0.3);
  };
  const auto imgs = images<double>(8, g);
  const auto labels = random_labels(8, g);
  const auto s0 = emma_forward<double>(imgs, m);
  EXPECT_EQ(s0.exp2_logits, Mat<double>::Constant(8, 8, 0.3));
  AdamWState<double> st;
  Rng rng(1);
  double first = 0, last = 0;
  for (int it = 0; it < 40; ++it) {
    m.params.zero_grad();
    const auto r = emma_backward<double>(m, imgs, labels, rng);
    const double l = r.loss.au + r.loss.exp;
    if (it == 0) first = l;
    last = l;
    optim_step(m.params, st, {3e-3, 0.0, 0.0, 1.0, m.cfg.encoder.depth});
  }
  EXPECT_LT(last, 0.8 * first);
}

TEST(Emma, OverrideWithWrongShapeIsShapeError) {
  std::mt19937_64 g(11);
  auto m = init_emma<double>(small_emma(), 13);
  m.scorer_override = [](std::span<const Image<double>> imgs) {
    return Mat<double>::Zero(static_cast<Eigen::Index>(imgs.size()), 3);
  };
  EXPECT_THROW(emma_forward<double>(images<double>(2, g), m), ShapeError);
}

TEST(Emma, PredictionIgnoresPositiveExpressionScaling) {
  std::mt19937_64 g(12);
  auto m = init_emma<double>(small_emma(), 14);
  const auto imgs = images<double>(6, g);
  const std::vector<std::string> ids = {"a", "b", "c", "d", "e", "f"};
  const auto before = emma_predict<double>(imgs, m, ids);
  auto& w = m.params.at("head.weight").value;
  auto& b = m.params.at("head.bias").value;
  w.rightCols(8) *= 3.7;
  b.rightCols(8) *= 3.7;
  const auto after = emma_predict<double>(imgs, m, ids);
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(before[i].expression, after[i].expression);
}

TEST(Emma, PredictionRules) {
  ProbOutput p;
  Eigen::RowVectorXd z(8);
  z << 0, 0, 0, 0, 0, 2.5, 0, 1;
  p.exp_probs = softmax_probs(z);
  p.au_probs.fill(sigmoid_prob(0.0));
  p.au_probs[3] = sigmoid_prob(0.01);
  p.valence = 1.7;
  p.arousal = -0.3;
  const auto r = decide(p, "x");
  EXPECT_EQ(r.expression, 5);
  EXPECT_EQ(r.valence, 1.0);
  EXPECT_EQ(r.arousal, -0.3);
  EXPECT_EQ(r.au[0], 0);
  EXPECT_EQ(r.au[3], 1);
}

TEST(Emma, PredictClampsVa) {
  std::mt19937_64 g(13);
  auto m = init_emma<double>(small_emma(), 15);
  m.params.at("va_head.fc2.weight").value.setZero();
  m.params.at("va_head.fc2.bias").value << 1.7, -0.3;
  const auto rows = emma_predict<double>(images<double>(2, g), m, {"p", "q"});
  for (const auto& r : rows) {
    EXPECT_EQ(r.valence, 1.0);
    EXPECT_DOUBLE_EQ(r.arousal, -0.3);
  }
  EXPECT_THROW(emma_predict<double>(images<double>(2, g), m, {"p"}), ShapeError);
}
