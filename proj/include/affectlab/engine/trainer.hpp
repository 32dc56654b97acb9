#pragma once

// Training loops. Every random decision (shuffling, augmentation, masks,
// stochastic depth) draws from one stream seeded by TrainConfig::seed, and
// nothing time-dependent is written to the run directory, so identical
// configs reproduce bit-identical logs and checkpoints.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "affectlab/backbone/checkpoint.hpp"
#include "affectlab/backbone/mae.hpp"
#include "affectlab/backbone/scorer.hpp"
#include "affectlab/cotex.hpp"
#include "affectlab/data/augment.hpp"
#include "affectlab/emma.hpp"
#include "affectlab/engine/ensemble.hpp"
#include "affectlab/engine/model_io.hpp"
#include "affectlab/engine/optim.hpp"
#include "affectlab/metrics.hpp"

namespace affectlab {

/// Rows of log.csv; column 0 is the epoch.
struct TrainHistory {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  [[nodiscard]] std::size_t column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw ConfigError("no log column " + name);
    return static_cast<std::size_t>(it - columns.begin());
  }
  [[nodiscard]] std::vector<double> series(const std::string& name) const {
    const auto c = column(name);
    std::vector<double> s;
    for (const auto& r : rows) s.push_back(r[c]);
    return s;
  }
};

struct RunOptions {
  std::filesystem::path run_dir;  // empty: nothing is written
  int save_every = 1;             // checkpoint cadence in epochs; the last epoch is always saved
  int eval_batch = 32;
  Meta config_snapshot;           // written to config.txt
  std::function<void(const std::string&)> progress;
  std::function<bool(const TrainHistory&)> stop_when;  // checked after every epoch
};

namespace detail {

inline std::string epoch_dir(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%03d", epoch);
  return buf;
}

/// Run-directory bookkeeping shared by the trainers.
class RunWriter {
 public:
  RunWriter(const RunOptions& opt, std::vector<std::string> columns) : opt_(opt), columns_(std::move(columns)) {
    if (opt_.run_dir.empty()) return;
    std::filesystem::create_directories(opt_.run_dir / "checkpoints");
    write_meta(opt_.run_dir / "config.txt", opt_.config_snapshot);
    std::ofstream log(opt_.run_dir / "log.csv");
    for (std::size_t i = 0; i < columns_.size(); ++i) log << (i ? "," : "") << columns_[i];
    log << '\n';
  }

  void row(const std::vector<double>& values) {
    if (opt_.run_dir.empty()) return;
    std::ofstream log(opt_.run_dir / "log.csv", std::ios::app);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) log << ',';
      if (i == 0) log << static_cast<long>(values[i]);
      else log << csv::fmt6(values[i]);
    }
    log << '\n';
  }

  [[nodiscard]] bool wants_checkpoint(int epoch, int total) const {
    if (opt_.run_dir.empty()) return false;
    return epoch == total || (opt_.save_every > 0 && epoch % opt_.save_every == 0);
  }
  [[nodiscard]] std::filesystem::path checkpoint_path(int epoch) const {
    return opt_.run_dir / "checkpoints" / epoch_dir(epoch);
  }
  [[nodiscard]] std::filesystem::path best_path() const { return opt_.run_dir / "checkpoints" / "best"; }
  [[nodiscard]] bool active() const { return !opt_.run_dir.empty(); }

  void report(const std::string& text) const {
    if (opt_.run_dir.empty()) return;
    std::ofstream out(opt_.run_dir / "report.txt");
    out << text;
  }

  void progress(const std::string& line) const {
    if (opt_.progress) opt_.progress(line);
  }

 private:
  const RunOptions& opt_;
  std::vector<std::string> columns_;
};

/// Shuffled micro-batches grouped into optimizer steps.
inline std::vector<std::vector<std::vector<std::size_t>>> plan_epoch(std::size_t n, int batch, int accum, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> micro;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch))
    micro.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                       order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + static_cast<std::size_t>(batch))));
  std::vector<std::vector<std::vector<std::size_t>>> steps;
  for (std::size_t i = 0; i < micro.size(); i += static_cast<std::size_t>(accum))
    steps.emplace_back(micro.begin() + static_cast<std::ptrdiff_t>(i),
                       micro.begin() + static_cast<std::ptrdiff_t>(std::min(micro.size(), i + static_cast<std::size_t>(accum))));
  return steps;
}

inline long steps_per_epoch(std::size_t n, int batch, int accum) {
  const long micro = static_cast<long>((n + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch));
  return (micro + accum - 1) / accum;
}

template <typename T>
std::vector<Image<T>> eval_images(const std::vector<FaceSample<T>>& samples) {
  Rng unused(0);
  std::vector<Image<T>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(augment(s.image, AugmentMode::kEval, unused));
  return out;
}

template <typename T>
std::vector<LabelRow> label_rows(const std::vector<FaceSample<T>>& samples) {
  std::vector<LabelRow> rows;
  for (const auto& s : samples) rows.push_back({s.id, s.labels});
  return rows;
}

template <typename T>
std::vector<std::string> ids_of(const std::vector<FaceSample<T>>& samples) {
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.id);
  return ids;
}

inline StepSettings step_settings(const TrainConfig& tc, double multiplier, int depth) {
  return {tc.peak_lr() * multiplier, tc.weight_decay, tc.clip_grad, tc.layer_decay, depth};
}

}  // namespace detail

/// Batched eval-mode probabilities for an in-memory model.
template <typename T, typename Fn>
std::vector<ProbOutput> batched_probs(std::span<const Image<T>> images, int batch, Fn&& fn) {
  std::vector<ProbOutput> out;
  for (std::size_t i = 0; i < images.size(); i += static_cast<std::size_t>(batch)) {
    auto part = fn(images.subspan(i, std::min(images.size() - i, static_cast<std::size_t>(batch))));
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multi-task (EMMA)

template <typename T>
struct MtlRun {
  EmmaModel<T> model;
  TrainHistory history;
  int best_epoch = 0;
  double best_score = 0.0;
  MetricReport final_train;
};

inline std::vector<std::string> mtl_log_columns(bool with_val) {
  std::vector<std::string> c = {"epoch",        "lr",          "loss_total",   "loss_au",
                                "loss_exp",     "loss_va",     "grad_norm",    "train_ccc_v",
                                "train_ccc_a",  "train_f1_exp", "train_f1_au", "train_p_mtl"};
  if (with_val) c.insert(c.end(), {"val_ccc_v", "val_ccc_a", "val_f1_exp", "val_f1_au", "val_p_mtl"});
  return c;
}

/// Trains EMMA. The scorer weights come from `scorer_init` (cnn.*) when
/// given; the encoder from `encoder_init` (encoder.*) when given.
template <typename T>
MtlRun<T> train_mtl(const TrainConfig& tc, EmmaConfig ec, const std::vector<FaceSample<T>>& train,
                    const std::vector<FaceSample<T>>& val, const RunOptions& opt,
                    const ParamStore<T>* encoder_init = nullptr, const ParamStore<T>* scorer_init = nullptr) {
  tc.validate();
  if (train.empty()) throw DataError("train-mtl: empty training set");
  ec.encoder.drop_path_rate = tc.drop_path;
  MtlRun<T> run{init_emma<T>(ec, tc.seed), {}, 0, -1e300, {}};
  auto& model = run.model;
  if (encoder_init) transfer_encoder(model.params, *encoder_init);
  if (scorer_init) transfer_encoder(model.params, *scorer_init, "cnn.", "cnn.");

  const bool with_val = !val.empty();
  run.history.columns = mtl_log_columns(with_val);
  detail::RunWriter out(opt, run.history.columns);
  const auto val_images = detail::eval_images(val);
  const auto val_labels = detail::label_rows(val);
  const auto val_ids = detail::ids_of(val);

  Rng rng(tc.seed ^ 0x5DEECE66DULL);
  AdamWState<T> state;
  const long spe = detail::steps_per_epoch(train.size(), tc.batch_size, tc.accum_iters);
  long step = 0;
  for (int epoch = 1; epoch <= tc.total_epochs; ++epoch) {
    const double lr_first = tc.peak_lr() * lr_schedule(step, tc, spe);
    double l_total = 0, l_au = 0, l_exp = 0, l_va = 0, gnorm = 0;
    std::vector<PredictionRow> preds;
    std::vector<LabelRow> labels;
    const auto plan = detail::plan_epoch(train.size(), tc.batch_size, tc.accum_iters, rng);
    for (const auto& micro : plan) {
      const double mult = lr_schedule(step, tc, spe);
      StepStats st;
      accumulate<std::vector<std::size_t>>(
          micro, [&] { model.params.zero_grad(); },
          [&](const std::vector<std::size_t>& idx, double w) {
            std::vector<Image<T>> imgs;
            std::vector<Labels> labs;
            for (auto i : idx) {
              imgs.push_back(augment(train[i].image, AugmentMode::kTrainMtl, rng));
              labs.push_back(train[i].labels);
            }
            auto r = emma_backward<T>(model, imgs, labs, rng, static_cast<T>(w));
            const double share = static_cast<double>(idx.size()) / static_cast<double>(train.size());
            l_total += share * r.loss.total;
            l_au += share * r.loss.au;
            l_exp += share * r.loss.exp;
            l_va += share * r.loss.va;
            for (std::size_t k = 0; k < idx.size(); ++k) {
              ProbOutput p;
              const auto row = static_cast<Eigen::Index>(k);
              p.exp_probs = softmax_probs(r.scores.exp_logits.row(row));
              for (int j = 0; j < kNumAus; ++j)
                p.au_probs[static_cast<std::size_t>(j)] = sigmoid_prob(r.scores.au_logits(row, j));
              p.valence = r.scores.va(row, 0);
              p.arousal = r.scores.va(row, 1);
              preds.push_back(decide(p, train[idx[k]].id));
              labels.push_back({train[idx[k]].id, train[idx[k]].labels});
            }
            return static_cast<double>(r.loss.total);
          },
          [&] { st = optim_step(model.params, state, detail::step_settings(tc, mult, ec.encoder.depth)); });
      gnorm += st.grad_norm / static_cast<double>(plan.size());
      ++step;
    }
    const auto tr = eval_mtl(preds, labels);
    std::vector<double> row = {static_cast<double>(epoch), lr_first, l_total, l_au, l_exp, l_va, gnorm,
                               tr.ccc_v, tr.ccc_a, mean_of(tr.f1_exp), mean_of(tr.f1_au), tr.p_mtl};
    double score = tr.p_mtl;
    MetricReport vr;
    if (with_val) {
      const auto probs = batched_probs<T>(val_images, opt.eval_batch,
                                          [&](std::span<const Image<T>> b) { return emma_probs<T>(b, model); });
      vr = eval_mtl(decide_all<T>(probs, val_ids), val_labels);
      row.insert(row.end(), {vr.ccc_v, vr.ccc_a, mean_of(vr.f1_exp), mean_of(vr.f1_au), vr.p_mtl});
      score = vr.p_mtl;
    }
    run.history.rows.push_back(row);
    out.row(row);
    run.final_train = tr;
    Meta meta = opt.config_snapshot;
    meta["epoch"] = std::to_string(epoch);
    meta["seed"] = std::to_string(tc.seed);
    if (score > run.best_score) {
      run.best_score = score;
      run.best_epoch = epoch;
      if (out.active()) save_emma(out.best_path(), model, meta);
    }
    if (out.wants_checkpoint(epoch, tc.total_epochs)) save_emma(out.checkpoint_path(epoch), model, meta);
    char buf[200];
    std::snprintf(buf, sizeof(buf), "epoch %3d  loss %.4f  train P_MTL %.4f%s", epoch, l_total, tr.p_mtl,
                  with_val ? ("  val P_MTL " + csv::fmt6(vr.p_mtl)).c_str() : "");
    out.progress(buf);
    if (opt.stop_when && opt.stop_when(run.history)) break;
  }
  out.report("best_epoch=" + std::to_string(run.best_epoch) + "\nbest_score=" + csv::fmt6(run.best_score) +
             "\n# final training metrics\n" + run.final_train.to_kv());
  return run;
}

// ---------------------------------------------------------------------------
// Co-training (Masked CoTEX)

template <typename T>
struct LsdRun {
  TwinParams<T> twin;
  TrainHistory history;
  int best_epoch = 0;
  double best_score = 0.0;
};

inline std::vector<std::string> lsd_log_columns(bool with_val) {
  std::vector<std::string> c = {"epoch", "lr", "loss_total", "loss_js", "loss_h1", "loss_h2",
                                "grad_norm_1", "grad_norm_2", "train_f1"};
  if (with_val) c.insert(c.end(), {"val_f1", "val_acc", "val_js"});
  return c;
}

/// Mean JS between the two views' unmasked softmax outputs.
template <typename T>
double mean_view_js(std::span<const Image<T>> images, TwinParams<T>& tw, int batch = 32) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < images.size(); i += static_cast<std::size_t>(batch)) {
    const auto vp = cotex_view_probs<T>(images.subspan(i, std::min(images.size() - i, static_cast<std::size_t>(batch))), tw);
    for (std::size_t k = 0; k < vp[0].size(); ++k, ++n) s += js_divergence<double>(vp[0][k], vp[1][k]);
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

/// Mean JS between the two views on masked inputs: every image gets two
/// independent masks at `mask_ratio`, one per view, as in training. Eval
/// mode; `draws` mask pairs per image from a generator seeded by `seed`.
template <typename T>
double mean_masked_view_js(std::span<const Image<T>> images, TwinParams<T>& tw, double mask_ratio,
                           std::uint64_t seed, int draws = 4, int batch = 32) {
  if (images.empty()) return 0.0;
  const int ps = tw.cfg.encoder.patch_size;
  const auto spec = MaskSpec::make(mask_ratio, (images.front().height / ps) * (images.front().width / ps));
  Rng rng(seed);
  double s = 0;
  std::size_t n = 0;
  for (int d = 0; d < draws; ++d) {
    for (std::size_t i = 0; i < images.size(); i += static_cast<std::size_t>(batch)) {
      const auto chunk = images.subspan(i, std::min(images.size() - i, static_cast<std::size_t>(batch)));
      std::array<std::vector<TokenView<T>>, 2> views;
      for (const auto& img : chunk) {
        auto seq = patchify(img, ps);
        for (auto& v : views) {
          seq.kept = sample_mask(spec, rng);
          v.push_back(TokenView<T>::from_sequence(seq));
        }
      }
      std::array<Mat<T>, 2> z;
      for (std::size_t v = 0; v < 2; ++v) {
        Tape<T> t(false);
        z[v] = view_logits<T>(t, tw.views[v], tw.cfg, views[v], Mode::kEval, nullptr).value();
      }
      for (Eigen::Index r = 0; r < z[0].rows(); ++r, ++n)
        s += js_divergence<double>(softmax_probs(z[0].row(r)), softmax_probs(z[1].row(r)));
    }
  }
  return s / static_cast<double>(n);
}

template <typename T>
LsdRun<T> train_lsd(const TrainConfig& tc, CotexConfig cc, const std::vector<FaceSample<T>>& train,
                    const std::vector<FaceSample<T>>& val, const RunOptions& opt,
                    const ParamStore<T>* encoder_init = nullptr) {
  tc.validate();
  if (train.empty()) throw DataError("train-lsd: empty training set");
  for (const auto& s : train)
    if (s.labels.expression.index < 0 || s.labels.expression.index >= cc.classes)
      throw DataError("train-lsd: invalid expression label for id " + s.id);
  cc.encoder.drop_path_rate = tc.drop_path;
  LsdRun<T> run{init_twin<T>(cc, tc.seed, encoder_init), {}, 0, -1e300};
  auto& tw = run.twin;
  const bool with_val = !val.empty();
  run.history.columns = lsd_log_columns(with_val);
  detail::RunWriter out(opt, run.history.columns);
  const auto val_images = detail::eval_images(val);
  const auto val_labels = detail::label_rows(val);
  const auto val_ids = detail::ids_of(val);

  Rng rng(tc.seed ^ 0x5DEECE66DULL);
  std::array<AdamWState<T>, 2> states;
  const long spe = detail::steps_per_epoch(train.size(), tc.batch_size, tc.accum_iters);
  long step = 0;
  for (int epoch = 1; epoch <= tc.total_epochs; ++epoch) {
    const double lr_first = tc.peak_lr() * lr_schedule(step, tc, spe);
    double l_total = 0, l_js = 0, l_h1 = 0, l_h2 = 0, g1 = 0, g2 = 0;
    std::vector<PredictionRow> preds;
    std::vector<LabelRow> labels;
    const auto plan = detail::plan_epoch(train.size(), tc.batch_size, tc.accum_iters, rng);
    for (const auto& micro : plan) {
      const double mult = lr_schedule(step, tc, spe);
      accumulate<std::vector<std::size_t>>(
          micro,
          [&] {
            tw.views[0].zero_grad();
            tw.views[1].zero_grad();
          },
          [&](const std::vector<std::size_t>& idx, double w) {
            std::vector<Image<T>> imgs;
            std::vector<int> labs;
            for (auto i : idx) {
              imgs.push_back(augment(train[i].image, AugmentMode::kTrainLsd, rng));
              labs.push_back(train[i].labels.expression.index);
            }
            auto r = cotex_backward<T>(tw, imgs, labs, static_cast<T>(tc.lambda), tc.mask_ratio, rng, static_cast<T>(w));
            const double share = static_cast<double>(idx.size()) / static_cast<double>(train.size());
            l_total += share * r.stats.total;
            l_js += share * r.stats.js;
            l_h1 += share * r.stats.h1;
            l_h2 += share * r.stats.h2;
            for (std::size_t k = 0; k < idx.size(); ++k) {
              const auto row = static_cast<Eigen::Index>(k);
              ProbOutput p;
              p.exp_probs = average_views(softmax_probs(r.logits1.row(row)), softmax_probs(r.logits2.row(row)));
              preds.push_back(decide(p, train[idx[k]].id));
              labels.push_back({train[idx[k]].id, train[idx[k]].labels});
            }
            return r.stats.total;
          },
          [&] {
            const auto s = detail::step_settings(tc, mult, cc.encoder.depth);
            g1 += optim_step(tw.views[0], states[0], s).grad_norm / static_cast<double>(plan.size());
            g2 += optim_step(tw.views[1], states[1], s).grad_norm / static_cast<double>(plan.size());
          });
      ++step;
    }
    const auto tr = eval_lsd(preds, labels);
    std::vector<double> row = {static_cast<double>(epoch), lr_first, l_total, l_js, l_h1, l_h2, g1, g2, tr.p_lsd};
    double score = tr.p_lsd;
    if (with_val) {
      const auto probs = batched_probs<T>(val_images, opt.eval_batch,
                                          [&](std::span<const Image<T>> b) { return cotex_probs<T>(b, tw); });
      const auto vr = eval_lsd(decide_all<T>(probs, val_ids), val_labels);
      row.insert(row.end(), {vr.p_lsd, vr.acc, mean_view_js<T>(val_images, tw, opt.eval_batch)});
      score = vr.p_lsd;
    }
    run.history.rows.push_back(row);
    out.row(row);
    Meta meta = opt.config_snapshot;
    meta["epoch"] = std::to_string(epoch);
    meta["seed"] = std::to_string(tc.seed);
    if (score > run.best_score) {
      run.best_score = score;
      run.best_epoch = epoch;
      if (out.active()) save_twin(out.best_path(), tw, meta);
    }
    if (out.wants_checkpoint(epoch, tc.total_epochs)) save_twin(out.checkpoint_path(epoch), tw, meta);
    char buf[200];
    std::snprintf(buf, sizeof(buf), "epoch %3d  loss %.4f  js %.4f  train F1 %.4f", epoch, l_total, l_js, tr.p_lsd);
    out.progress(buf);
    if (opt.stop_when && opt.stop_when(run.history)) break;
  }
  out.report("best_epoch=" + std::to_string(run.best_epoch) + "\nbest_score=" + csv::fmt6(run.best_score) + "\n");
  return run;
}

// ---------------------------------------------------------------------------
// Stand-in scorer and MAE pretraining

template <typename T>
struct ScorerRun {
  ParamStore<T> params;  // cnn.*
  std::vector<double> train_acc;  // per epoch, from training forwards
};

/// Supervised training of the stand-in expression scorer on samples with a
/// valid expression label. Plain AdamW, no layer decay.
template <typename T>
ScorerRun<T> train_scorer(const ScorerConfig& sc, const std::vector<FaceSample<T>>& samples, const TrainConfig& tc,
                          const std::function<void(const std::string&)>& progress = {}) {
  tc.validate();
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int y = samples[i].labels.expression.index;
    if (y >= sc.classes) throw DataError("scorer: label out of range for id " + samples[i].id);
    if (y >= 0) usable.push_back(i);
  }
  if (usable.empty()) throw DataError("scorer: no expression-labeled samples");
  ScorerRun<T> run;
  Rng init(tc.seed);
  init_scorer(run.params, sc, init);
  Rng rng(tc.seed ^ 0x5DEECE66DULL);
  AdamWState<T> state;
  const long spe = detail::steps_per_epoch(usable.size(), tc.batch_size, tc.accum_iters);
  long step = 0;
  for (int epoch = 1; epoch <= tc.total_epochs; ++epoch) {
    long correct = 0;
    const auto plan = detail::plan_epoch(usable.size(), tc.batch_size, tc.accum_iters, rng);
    for (const auto& micro : plan) {
      const double mult = lr_schedule(step, tc, spe);
      accumulate<std::vector<std::size_t>>(
          micro, [&] { run.params.zero_grad(); },
          [&](const std::vector<std::size_t>& idx, double w) {
            std::vector<Image<T>> imgs;
            std::vector<int> labs;
            for (auto k : idx) {
              const auto& s = samples[usable[k]];
              imgs.push_back(augment(s.image, AugmentMode::kTrainMtl, rng));
              labs.push_back(s.labels.expression.index);
            }
            Tape<T> t;
            Var<T> z = scorer_forward<T>(t, run.params, sc, imgs);
            auto l = loss_exp(z.value(), labs);
            for (Eigen::Index r = 0; r < z.rows(); ++r) {
              Eigen::Index arg = 0;
              z.value().row(r).maxCoeff(&arg);
              if (arg == labs[static_cast<std::size_t>(r)]) ++correct;
            }
            t.backward(ag::custom_scalar<T>({z}, l.value, {l.grad}), static_cast<T>(w));
            return static_cast<double>(l.value);
          },
          [&] { optim_step(run.params, state, detail::step_settings(tc, mult, 1)); });
      ++step;
    }
    run.train_acc.push_back(static_cast<double>(correct) / static_cast<double>(usable.size()));
    if (progress) progress("scorer epoch " + std::to_string(epoch) + "  train acc " + csv::fmt6(run.train_acc.back()));
  }
  return run;
}

/// Eval-mode scorer accuracy over samples with a valid expression label.
template <typename T>
double scorer_accuracy(ParamStore<T>& ps, const ScorerConfig& sc, const std::vector<FaceSample<T>>& samples,
                       int batch = 64) {
  Rng unused(0);
  long correct = 0, total = 0;
  for (std::size_t i = 0; i < samples.size(); i += static_cast<std::size_t>(batch)) {
    std::vector<Image<T>> imgs;
    std::vector<int> labs;
    for (std::size_t k = i; k < std::min(samples.size(), i + static_cast<std::size_t>(batch)); ++k) {
      if (samples[k].labels.expression.index < 0) continue;
      imgs.push_back(augment(samples[k].image, AugmentMode::kEval, unused));
      labs.push_back(samples[k].labels.expression.index);
    }
    if (imgs.empty()) continue;
    Tape<T> t(false);
    const Mat<T> z = scorer_forward<T>(t, ps, sc, imgs).value();
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      Eigen::Index arg = 0;
      z.row(r).maxCoeff(&arg);
      correct += arg == labs[static_cast<std::size_t>(r)];
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

template <typename T>
struct MaeRun {
  ParamStore<T> params;  // encoder.* and decoder.*
  std::vector<double> losses;  // mean reconstruction loss per epoch
};

template <typename T>
MaeRun<T> pretrain_mae(EncoderConfig ec, const MaeDecoderConfig& dc, const std::vector<FaceSample<T>>& samples,
                       const TrainConfig& tc, const RunOptions& opt) {
  tc.validate();
  if (samples.empty()) throw DataError("pretrain-mae: empty dataset");
  ec.drop_path_rate = tc.drop_path;
  MaeRun<T> run;
  Rng init(tc.seed);
  init_encoder(run.params, ec, init);
  init_mae_decoder(run.params, ec, dc, init);
  detail::RunWriter out(opt, {"epoch", "lr", "loss"});
  Rng rng(tc.seed ^ 0x5DEECE66DULL);
  AdamWState<T> state;
  const long spe = detail::steps_per_epoch(samples.size(), tc.batch_size, tc.accum_iters);
  long step = 0;
  const double ratio = tc.mask_ratio > 0 ? tc.mask_ratio : kMaeDefaultMaskRatio;
  for (int epoch = 1; epoch <= tc.total_epochs; ++epoch) {
    const double lr_first = tc.peak_lr() * lr_schedule(step, tc, spe);
    double loss = 0;
    for (const auto& micro : detail::plan_epoch(samples.size(), tc.batch_size, tc.accum_iters, rng)) {
      const double mult = lr_schedule(step, tc, spe);
      accumulate<std::vector<std::size_t>>(
          micro, [&] { run.params.zero_grad(); },
          [&](const std::vector<std::size_t>& idx, double w) {
            std::vector<PatchSequence<T>> seqs;
            for (auto i : idx) {
              auto s = patchify(augment(samples[i].image, AugmentMode::kTrainMtl, rng), ec.patch_size);
              s.kept = sample_mask(MaskSpec::make(ratio, s.total()), rng);
              seqs.push_back(std::move(s));
            }
            Tape<T> t;
            MaeStepStats stats;
            auto l = mae_loss<T>(t, run.params, ec, dc, seqs, Mode::kTrain, &rng, &stats);
            t.backward(l, static_cast<T>(w));
            loss += stats.loss * static_cast<double>(idx.size()) / static_cast<double>(samples.size());
            return stats.loss;
          },
          [&] { optim_step(run.params, state, detail::step_settings(tc, mult, ec.depth)); });
      ++step;
    }
    run.losses.push_back(loss);
    out.row({static_cast<double>(epoch), lr_first, loss});
    if (out.wants_checkpoint(epoch, tc.total_epochs)) {
      Meta meta = opt.config_snapshot;
      meta["epoch"] = std::to_string(epoch);
      meta["seed"] = std::to_string(tc.seed);
      save_pretrained(out.checkpoint_path(epoch), run.params, ec, meta);
    }
    out.progress("mae epoch " + std::to_string(epoch) + "  loss " + csv::fmt6(loss));
  }
  return run;
}

// ---------------------------------------------------------------------------
// Ensembling over differently configured runs

/// Trains one EMMA per config and averages their probabilities.
template <typename T>
std::vector<PredictionRow> ensemble_params_mtl(const std::vector<TrainConfig>& configs, const EmmaConfig& ec,
                                               const std::vector<FaceSample<T>>& train,
                                               std::span<const Image<T>> images, const std::vector<std::string>& ids,
                                               const ParamStore<T>* scorer_init = nullptr) {
  if (configs.empty()) throw ConfigError("ensemble needs at least one configuration");
  ProbAverager avg;
  for (const auto& c : configs) {
    auto run = train_mtl<T>(c, ec, train, {}, RunOptions{}, nullptr, scorer_init);
    avg.add(batched_probs<T>(images, 32, [&](std::span<const Image<T>> b) { return emma_probs<T>(b, run.model); }));
  }
  return decide_all<T>(avg.mean(), ids);
}

template <typename T>
std::vector<PredictionRow> ensemble_params_lsd(const std::vector<TrainConfig>& configs, const CotexConfig& cc,
                                               const std::vector<FaceSample<T>>& train,
                                               std::span<const Image<T>> images, const std::vector<std::string>& ids) {
  if (configs.empty()) throw ConfigError("ensemble needs at least one configuration");
  ProbAverager avg;
  for (const auto& c : configs) {
    auto run = train_lsd<T>(c, cc, train, {}, RunOptions{});
    avg.add(batched_probs<T>(images, 32, [&](std::span<const Image<T>> b) { return cotex_probs<T>(b, run.twin); }));
  }
  return decide_all<T>(avg.mean(), ids);
}

}  // namespace affectlab
