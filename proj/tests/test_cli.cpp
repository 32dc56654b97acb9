#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include "affectlab/cli/app.hpp"
#include "support.hpp"

using namespace affectlab;
using affectlab::Config;
using affectlab::testing::TempDir;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<PredictionRow> random_rows(int n, std::mt19937_64& g) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> cls(0, 7), bit(0, 1);
  std::vector<PredictionRow> rows(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& r = rows[static_cast<std::size_t>(i)];
    r.id = "img" + std::to_string(i);
    r.valence = u(g);
    r.arousal = u(g);
    r.expression = cls(g);
    for (auto& a : r.au) a = bit(g);
  }
  return rows;
}

/// Labels with every class present and every annotation valid.
std::vector<LabeledRow> full_labels(int n, std::mt19937_64& g) {
  std::vector<LabeledRow> out;
  for (const auto& r : random_rows(n, g)) {
    LabeledRow l;
    l.id = r.id;
    l.labels.va = {std::round(r.valence * 1e6) / 1e6, std::round(r.arousal * 1e6) / 1e6};
    l.labels.expression.index = static_cast<int>(out.size()) % kMtlClasses;
    l.labels.au.values = r.au;
    out.push_back(l);
  }
  return out;
}

std::vector<PredictionRow> as_predictions(const std::vector<LabeledRow>& labels) {
  std::vector<PredictionRow> rows;
  for (const auto& l : labels)
    rows.push_back({l.id, l.labels.va.valence, l.labels.va.arousal, l.labels.expression.index, l.labels.au.values});
  return rows;
}

}  // namespace

TEST(Config, ParsesCommentsAndWhitespace) {
  TempDir dir("cfg");
  write_text(dir.str("a.cfg"), "# recipe\nbase_lr = 2e-4  # peak\n\n  batch_size=64\nlambda = 0\n");
  Config c;
  c.load_file(dir.str("a.cfg"));
  EXPECT_DOUBLE_EQ(c.real("base_lr", 0), 2e-4);
  EXPECT_EQ(c.integer("batch_size", 0), 64);
  EXPECT_DOUBLE_EQ(c.real("lambda", 1), 0.0);
  EXPECT_TRUE(c.unused().empty());
}

TEST(Config, UnknownKeysAreListed) {
  TempDir dir("cfg");
  write_text(dir.str("a.cfg"), "base_lr = 1e-3\nlearning_rate = 1\nbatchsize = 4\n");
  Config c;
  try {
    c.load_file(dir.str("a.cfg"));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("learning_rate"), std::string::npos);
    EXPECT_NE(msg.find("batchsize"), std::string::npos);
  }
  EXPECT_THROW(c.set("nope", "1"), ConfigError);
}

TEST(Config, MalformedLineCarriesLocation) {
  TempDir dir("cfg");
  write_text(dir.str("a.cfg"), "seed = 1\njust words\n");
  Config c;
  try {
    c.load_file(dir.str("a.cfg"));
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("a.cfg:2"), std::string::npos) << e.what();
  }
}

TEST(Config, TypedAccessorsRejectGarbage) {
  Config c;
  c.set("batch_size", "12x");
  c.set("base_lr", "fast");
  c.set("exp_sum_variant", "yes");
  EXPECT_THROW((void)c.integer("batch_size", 1), ConfigError);
  EXPECT_THROW((void)c.real("base_lr", 1), ConfigError);
  EXPECT_THROW((void)c.flag("exp_sum_variant", false), ConfigError);
}

TEST(Config, FlagNamesMapToKeys) {
  EXPECT_EQ(key_to_flag("mask_ratio"), "mask-ratio");
  EXPECT_EQ(flag_to_key("--batch-size"), "batch_size");
  for (const auto& k : config_keys()) EXPECT_EQ(flag_to_key(key_to_flag(k.name)), k.name);
}

TEST(Config, UnusedKeysAreReported) {
  Config c;
  c.set("lambda", "1");
  c.set("seed", "3");
  (void)c.integer("seed", 0);
  EXPECT_EQ(c.unused(), std::vector<std::string>{"lambda"});
}

TEST(PredictionIo, RoundTripsHundredRows) {
  std::mt19937_64 g(1);
  const auto rows = random_rows(100, g);
  TempDir dir("pred");
  write_predictions(dir.str("p.csv"), rows);
  const auto back = read_predictions(dir.str("p.csv"));
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].id, rows[i].id);
    EXPECT_NEAR(back[i].valence, rows[i].valence, 5e-7);
    EXPECT_NEAR(back[i].arousal, rows[i].arousal, 5e-7);
    EXPECT_EQ(back[i].expression, rows[i].expression);
    EXPECT_EQ(back[i].au, rows[i].au);
  }
  write_predictions(dir.str("q.csv"), back);
  EXPECT_EQ(slurp(dir.path() / "p.csv"), slurp(dir.path() / "q.csv"));
  EXPECT_EQ(slurp(dir.path() / "p.csv").substr(0, 80),
            std::string("id,valence,arousal,expression,AU1,AU2,AU4,AU6,AU7,AU10,AU12,AU15,AU23,AU24,AU25,AU26\n")
                .substr(0, 80));
}

TEST(PredictionIo, MissingColumnIsNamed) {
  TempDir dir("pred");
  write_text(dir.str("p.csv"), "id,valence,arousal,expression,AU1,AU2,AU4,AU6,AU7,AU10,AU12,AU15,AU23,AU24,AU25\n"
                               "a,0,0,1,0,0,0,0,0,0,0,0,0,0,0\n");
  try {
    read_predictions(dir.str("p.csv"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("AU26"), std::string::npos) << e.what();
  }
}

TEST(PredictionIo, UnknownColumnIsRejected) {
  TempDir dir("pred");
  write_text(dir.str("p.csv"),
             "id,valence,arousal,expression,AU1,AU2,AU4,AU6,AU7,AU10,AU12,AU15,AU23,AU24,AU25,AU26,score\n");
  try {
    read_predictions(dir.str("p.csv"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("score"), std::string::npos) << e.what();
  }
}

TEST(PredictionIo, MalformedRealReportsLine) {
  TempDir dir("pred");
  write_text(dir.str("p.csv"), "id,valence,arousal,expression,AU1,AU2,AU4,AU6,AU7,AU10,AU12,AU15,AU23,AU24,AU25,AU26\n"
                               "a,0.1,0.2,1,0,0,0,0,0,0,0,0,0,0,0,0\n"
                               "b,0.1x,0.2,1,0,0,0,0,0,0,0,0,0,0,0,0\n");
  try {
    read_predictions(dir.str("p.csv"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("p.csv:3"), std::string::npos) << e.what();
  }
}

TEST(PredictionIo, SentinelValenceInLabelsIsExcluded) {
  TempDir dir("pred");
  write_text(dir.str("l.csv"),
             "id,valence,arousal,expression,AU1,AU2,AU4,AU6,AU7,AU10,AU12,AU15,AU23,AU24,AU25,AU26\n"
             "a,-5.000000,0.500000,1,0,0,0,0,0,0,0,0,0,0,0,0\n"
             "b,0.200000,0.100000,2,0,0,0,0,0,0,0,0,0,0,0,0\n"
             "c,-0.300000,0.400000,3,0,0,0,0,0,0,0,0,0,0,0,0\n");
  const auto labels = read_label_rows(dir.str("l.csv"));
  ASSERT_EQ(labels.size(), 3U);
  EXPECT_EQ(labels[0].labels.va.valence, kVaSentinel);
  EXPECT_FALSE(label_validity(labels[0].labels).va);
  EXPECT_TRUE(label_validity(labels[1].labels).va);
  std::vector<PredictionRow> preds = {{"a", 0.9, 0.9, 1, {}}, {"b", 0.2, 0.1, 2, {}}, {"c", -0.3, 0.4, 3, {}}};
  const auto r = eval_mtl(preds, labels);
  EXPECT_EQ(r.n_va, 2);
  EXPECT_NEAR(r.ccc_v, 1.0, 1e-12);
  EXPECT_NEAR(r.ccc_a, 1.0, 1e-12);
}

TEST(Cli, EvaluatePerfectPredictions) {
  std::mt19937_64 g(2);
  TempDir dir("cli");
  const auto labels = full_labels(24, g);
  write_labels_csv(dir.str("l.csv"), labels);
  write_predictions(dir.str("p.csv"), as_predictions(labels));
  const auto r = invoke({"evaluate", "--task", "mtl", "--pred", dir.str("p.csv"), "--labels", dir.str("l.csv"),
                         "--out", dir.str("m.txt")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "P_MTL = 3.000000");
  const auto report = MetricReport::from_kv(slurp(dir.path() / "m.txt"));
  EXPECT_DOUBLE_EQ(report.p_mtl, 3.0);
  EXPECT_EQ(report.f1_au.size(), 12U);
  const auto again = MetricReport::from_kv(r.out.substr(r.out.find('\n') + 1));
  EXPECT_EQ(again.to_kv(), report.to_kv());
}

TEST(Cli, EvaluatePerfectLsd) {
  TempDir dir("cli");
  std::vector<LabeledRow> labels;
  for (int i = 0; i < 12; ++i) {
    LabeledRow l;
    l.id = "x" + std::to_string(i);
    l.labels.expression.index = i % kLsdClasses;
    labels.push_back(l);
  }
  write_labels_csv(dir.str("l.csv"), labels);
  write_predictions(dir.str("p.csv"), as_predictions(labels));
  const auto r = invoke({"evaluate", "--task", "lsd", "--pred", dir.str("p.csv"), "--labels", dir.str("l.csv")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "P_LSD = 1.000000");
}

TEST(Cli, ExitCodes) {
  TempDir dir("cli");
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"evaluate", "--no-such-flag", "1"}).code, 2);
  EXPECT_EQ(invoke({"evaluate", "--task", "mtl", "--labels", dir.str("l.csv")}).code, 2);  // missing --pred
  EXPECT_EQ(invoke({"evaluate", "--pred", dir.str("absent.csv"), "--labels", dir.str("absent.csv")}).code, 3);
  write_text(dir.str("bad.cfg"), "typo_key = 3\n");
  const auto r = invoke({"gen-data", "--config", dir.str("bad.cfg")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("typo_key"), std::string::npos);
  EXPECT_EQ(invoke({"gen-data", "--task", "video", "--out", dir.str("d")}).code, 2);
  EXPECT_EQ(invoke({"predict", "--checkpoint", dir.str("none"), "--images", dir.str("none"), "--out", "x"}).code, 2);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST(Cli, RunRootComesFromEnvironment) {
  TempDir dir("cli");
  ::setenv("AFFECTLAB_RUNS", dir.path().c_str(), 1);
  Config c;
  c.set("seed", "7");
  EXPECT_EQ(cli::run_dir_for(c, "train-lsd"), dir.path() / "train-lsd-seed7");
  c.set("run_dir", dir.str("explicit"));
  EXPECT_EQ(cli::run_dir_for(c, "train-lsd"), dir.path() / "explicit");
  ::unsetenv("AFFECTLAB_RUNS");
  Config d;
  EXPECT_EQ(cli::run_dir_for(d, "train-mtl"), std::filesystem::path("runs") / "train-mtl-seed0");
}

TEST(Cli, EndToEndLsdWithFlagOverride) {
  TempDir dir("cli");
  ::setenv("AFFECTLAB_RUNS", dir.str("runs").c_str(), 1);
  ASSERT_EQ(invoke({"gen-data", "--task", "lsd", "--n", "6", "--seed", "2", "--out", dir.str("data")}).code, 0);
  write_text(dir.str("run.cfg"),
             "batch_size = 64\nembed_dim = 16\ndepth = 1\nheads = 2\ntotal_epochs = 1\nwarmup_epochs = 0\n"
             "mask_ratio = 0.75\nlambda = 0\n");
  const auto train = invoke({"train-lsd", "--config", dir.str("run.cfg"), "--batch-size", "1024", "--seed", "5",
                             "--data", dir.str("data"), "--val-data", dir.str("data")});
  ASSERT_EQ(train.code, 0) << train.err;
  const auto run = dir.path() / "runs" / "train-lsd-seed5";
  const auto cfg = read_meta(run / "config.txt");
  EXPECT_EQ(cfg.at("batch_size"), "1024");
  EXPECT_EQ(cfg.at("lambda"), "0");
  const auto pred = invoke({"predict", "--checkpoint", run.string(), "--images", dir.str("data"), "--out",
                            dir.str("p.csv")});
  ASSERT_EQ(pred.code, 0) << pred.err;
  EXPECT_EQ(read_predictions(dir.str("p.csv")).size(), 6U);
  const auto ens = invoke({"ensemble", "--checkpoints", run.string() + "," + run.string(), "--epochs", "1,2",
                           "--images", dir.str("data"), "--out", dir.str("e.csv")});
  ASSERT_EQ(ens.code, 0) << ens.err;
  EXPECT_EQ(slurp(dir.path() / "p.csv"), slurp(dir.path() / "e.csv"));
  const auto eval = invoke({"evaluate", "--task", "lsd", "--pred", dir.str("p.csv"), "--labels",
                            dir.str("data/labels.csv")});
  EXPECT_EQ(eval.code, 0) << eval.err;
  EXPECT_EQ(eval.out.rfind("P_LSD = ", 0), 0U);
  ::unsetenv("AFFECTLAB_RUNS");
}

TEST(Cli, UnusedSettingsWarn) {
  TempDir dir("cli");
  const auto r = invoke({"gen-data", "--task", "mtl", "--n", "2", "--out", dir.str("d"), "--lambda", "0.5"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("warning: setting 'lambda'"), std::string::npos) << r.err;
}
