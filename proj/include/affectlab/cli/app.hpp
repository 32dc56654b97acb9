#pragma once

// The affectlab command line. Kept in a header so the test suite can drive
// it in-process. Exit codes: 0 success, 2 configuration error, 3 data error,
// 1 anything else.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "affectlab/cli/config.hpp"
#include "affectlab/cli/prediction_io.hpp"
#include "affectlab/data/dataset_io.hpp"
#include "affectlab/data/synth.hpp"
#include "affectlab/engine/trainer.hpp"

namespace affectlab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;

inline int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kConfig: return kExitConfig;
    case ErrorKind::kData: return kExitData;
    default: return kExitOther;
  }
}

/// Default run directory: $AFFECTLAB_RUNS (or ./runs) / <command>-seed<seed>.
inline std::filesystem::path run_dir_for(const Config& c, const std::string& command) {
  if (c.has("run_dir")) return c.str("run_dir");
  const char* root = std::getenv("AFFECTLAB_RUNS");
  return std::filesystem::path(root && *root ? root : "runs") / (command + "-seed" + c.str("seed", "0"));
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto& part : csv::split(s)) {
    const auto t = csv::trim(part);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

/// A run directory stands for its best checkpoint.
inline std::filesystem::path resolve_checkpoint(const std::filesystem::path& p) {
  if (std::filesystem::exists(p / "meta.txt")) return p;
  if (std::filesystem::exists(p / "checkpoints" / "best" / "meta.txt")) return p / "checkpoints" / "best";
  throw ConfigError("no checkpoint at " + p.string());
}

/// A pretrain-mae run directory stands for its saved encoder.
inline std::filesystem::path resolve_pretrained(const std::filesystem::path& p) {
  if (std::filesystem::exists(p / "meta.txt")) return p;
  if (std::filesystem::exists(p / "encoder" / "meta.txt")) return p / "encoder";
  throw ConfigError("no pretrained encoder at " + p.string());
}

struct Context {
  Config config;
  std::ostream& out;
  std::ostream& err;

  void warn_unused() const {
    for (const auto& k : config.unused()) err << "warning: setting '" << k << "' is not used by this command\n";
  }
  void progress(const std::string& line) const { err << line << '\n'; }
  [[nodiscard]] RunOptions run_options(const std::filesystem::path& dir) const {
    RunOptions o;
    o.run_dir = dir;
    o.save_every = static_cast<int>(config.integer("save_every", 1));
    o.eval_batch = static_cast<int>(config.integer("eval_batch", 32));
    if (o.eval_batch < 1) throw ConfigError("eval_batch must be >= 1");
    for (const auto& [k, v] : config.values()) o.config_snapshot[k] = v;
    o.progress = [this](const std::string& l) { progress(l); };
    return o;
  }
};

using Sample = FaceSample<float>;

inline std::vector<Sample> load_optional(const Config& c, const std::string& key) {
  return c.has(key) ? load_dataset<float>(c.str(key)) : std::vector<Sample>{};
}

inline Task parse_task(const std::string& s) {
  if (s == "mtl") return Task::kMtl;
  if (s == "lsd") return Task::kLsd;
  throw ConfigError("task must be mtl or lsd, got '" + s + "'");
}

inline int cmd_gen_data(Context& ctx) {
  const auto task = parse_task(ctx.config.require("task"));
  const long n = ctx.config.integer("n", 512);
  const long seed = ctx.config.integer("seed", 0);
  const std::string out = ctx.config.require("out");
  ctx.warn_unused();
  if (n < 1) throw ConfigError("n must be >= 1");
  if (seed < 0) throw ConfigError("seed must be non-negative");
  write_dataset(out, synth_dataset<float>(static_cast<int>(n), task, static_cast<std::uint64_t>(seed)));
  ctx.out << "wrote " << n << " samples to " << out << '\n';
  return kExitOk;
}

inline int cmd_pretrain_mae(Context& ctx) {
  const auto& c = ctx.config;
  TrainConfig defaults;
  defaults.mask_ratio = kMaeDefaultMaskRatio;
  defaults.layer_decay = 1.0;
  defaults.clip_grad = 1.0;
  defaults.accum_iters = 1;
  defaults.batch_size = 64;
  const auto tc = train_config_from(c, defaults);
  const auto ec = encoder_config_from(c, tiny_encoder());
  const auto dc = decoder_config_from(c, MaeDecoderConfig{});
  const auto dir = run_dir_for(c, "pretrain-mae");
  const auto data = load_dataset<float>(c.require("data"));
  auto opt = ctx.run_options(dir);
  ctx.warn_unused();
  auto run = pretrain_mae<float>(ec, dc, data, tc, opt);
  save_pretrained(dir / "encoder", run.params, ec, opt.config_snapshot);
  ctx.out << "pretrained encoder saved to " << (dir / "encoder").string() << '\n';
  return kExitOk;
}

inline int cmd_train_mtl(Context& ctx) {
  const auto& c = ctx.config;
  const auto tc = train_config_from(c, TrainConfig::emma_defaults());
  EmmaConfig ec;
  ec.encoder = encoder_config_from(c, ec.encoder);
  ec.exp_sum_variant = c.flag("exp_sum_variant", false);
  ec.validate();
  const auto dir = run_dir_for(c, "train-mtl");
  const auto train = load_dataset<float>(c.require("data"));
  const auto val = load_optional(c, "val_data");
  std::unique_ptr<Checkpoint<float>> pretrained;
  if (c.has("pretrained"))
    pretrained = std::make_unique<Checkpoint<float>>(load_pretrained<float>(resolve_pretrained(c.str("pretrained")), ec.encoder));
  std::unique_ptr<Checkpoint<float>> scorer;
  const long scorer_epochs = c.integer("scorer_epochs", 10);
  auto opt = ctx.run_options(dir);
  ctx.warn_unused();
  if (c.has("scorer")) {
    scorer = std::make_unique<Checkpoint<float>>(load_checkpoint<float>(c.str("scorer")));
  } else if (scorer_epochs > 0) {
    TrainConfig st;
    st.base_lr = 1e-3;
    st.weight_decay = 1e-4;
    st.batch_size = 32;
    st.accum_iters = 1;
    st.clip_grad = 5.0;
    st.layer_decay = 1.0;
    st.warmup_epochs = 1;
    st.total_epochs = static_cast<int>(scorer_epochs);
    st.scale_lr = false;
    st.seed = tc.seed;
    auto sr = train_scorer<float>(ec.scorer, train, st, opt.progress);
    Meta meta;
    meta["model"] = "scorer";
    meta["scorer.classes"] = std::to_string(ec.scorer.classes);
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "scorer", sr.params, meta);
    scorer = std::make_unique<Checkpoint<float>>(Checkpoint<float>{std::move(sr.params), meta});
  }
  auto run = train_mtl<float>(tc, ec, train, val, opt, pretrained ? &pretrained->params : nullptr,
                              scorer ? &scorer->params : nullptr);
  ctx.out << "best epoch " << run.best_epoch << "  score " << csv::fmt6(run.best_score) << "  run " << dir.string()
          << '\n';
  return kExitOk;
}

inline int cmd_train_lsd(Context& ctx) {
  const auto& c = ctx.config;
  const auto tc = train_config_from(c, TrainConfig::cotex_defaults());
  CotexConfig cc;
  cc.encoder = encoder_config_from(c, cc.encoder);
  const auto dir = run_dir_for(c, "train-lsd");
  const auto train = load_dataset<float>(c.require("data"));
  const auto val = load_optional(c, "val_data");
  std::unique_ptr<Checkpoint<float>> pretrained;
  if (c.has("pretrained"))
    pretrained = std::make_unique<Checkpoint<float>>(load_pretrained<float>(resolve_pretrained(c.str("pretrained")), cc.encoder));
  auto opt = ctx.run_options(dir);
  ctx.warn_unused();
  auto run = train_lsd<float>(tc, cc, train, val, opt, pretrained ? &pretrained->params : nullptr);
  ctx.out << "best epoch " << run.best_epoch << "  score " << csv::fmt6(run.best_score) << "  run " << dir.string()
          << '\n';
  return kExitOk;
}

inline std::vector<Image<float>> eval_inputs(const std::vector<Sample>& samples) {
  return detail::eval_images(samples);
}

inline int cmd_predict(Context& ctx) {
  const auto& c = ctx.config;
  const auto ck = resolve_checkpoint(c.require("checkpoint"));
  const auto data = load_dataset<float>(c.require("images"));
  const std::string out = c.require("out");
  ctx.warn_unused();
  const auto images = eval_inputs(data);
  write_predictions(out, predict_checkpoint<float>(ck, images, detail::ids_of(data)));
  ctx.out << "wrote " << data.size() << " predictions to " << out << '\n';
  return kExitOk;
}

inline int cmd_evaluate(Context& ctx) {
  const auto& c = ctx.config;
  const std::string task = c.str("task", "mtl");
  const auto preds = read_predictions(c.require("pred"));
  const auto labels = read_label_rows(c.require("labels"));
  const std::string out = c.str("out");
  ctx.warn_unused();
  MetricReport r;
  if (task == "mtl") r = eval_mtl(preds, labels);
  else if (task == "lsd") r = eval_lsd(preds, labels);
  else throw ConfigError("task must be mtl or lsd, got '" + task + "'");
  char head[64];
  std::snprintf(head, sizeof(head), "%s = %.6f\n", task == "mtl" ? "P_MTL" : "P_LSD", task == "mtl" ? r.p_mtl : r.p_lsd);
  ctx.out << head << r.to_kv();
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw DataError("cannot write " + out);
    f << r.to_kv();
  }
  return kExitOk;
}

inline int cmd_ensemble(Context& ctx) {
  const auto& c = ctx.config;
  const auto paths = split_list(c.require("checkpoints"));
  const auto data = load_dataset<float>(c.require("images"));
  const std::string out = c.require("out");
  const auto epochs = split_list(c.str("epochs"));
  ctx.warn_unused();
  if (paths.empty()) throw ConfigError("ensemble needs at least one checkpoint");
  const auto images = eval_inputs(data);
  const auto ids = detail::ids_of(data);
  std::vector<PredictionRow> rows;
  if (!epochs.empty()) {
    if (epochs.size() != paths.size()) throw ConfigError("epochs and checkpoints differ in count");
    CheckpointSet set;
    for (std::size_t i = 0; i < paths.size(); ++i) {
      int e = 0;
      try {
        e = std::stoi(epochs[i]);
      } catch (const std::exception&) {
        throw ConfigError("epochs: not an integer '" + epochs[i] + "'");
      }
      set.add(e, resolve_checkpoint(paths[i]));
    }
    rows = ensemble_epochs<float>(set, images, ids);
  } else {
    std::vector<std::filesystem::path> resolved;
    for (const auto& p : paths) resolved.push_back(resolve_checkpoint(p));
    rows = decide_all<float>(ensemble_probs<float>(resolved, images), ids);
  }
  write_predictions(out, rows);
  ctx.out << "wrote " << rows.size() << " ensembled predictions to " << out << '\n';
  return kExitOk;
}

/// Runs one invocation; args excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"affect recognition toolkit: multi-task training, masked co-training, evaluation"};
  app.require_subcommand(1);
  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(Context&);
  };
  const std::vector<Sub> subs = {
      {"gen-data", "write a synthetic dataset", cmd_gen_data},
      {"pretrain-mae", "masked-autoencoder pretraining of the encoder", cmd_pretrain_mae},
      {"train-mtl", "multi-task training (AU, expression, valence-arousal)", cmd_train_mtl},
      {"train-lsd", "masked co-training on expression labels", cmd_train_lsd},
      {"predict", "predict with one checkpoint", cmd_predict},
      {"evaluate", "score a prediction file against labels", cmd_evaluate},
      {"ensemble", "average predictions over checkpoints", cmd_ensemble},
  };
  std::string config_path;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::App*> apps;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", config_path, "key = value configuration file");
    for (const auto& k : config_keys()) sub->add_option("--" + key_to_flag(k.name), flags[k.name], k.help);
    apps[s.name] = sub;
  }
  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  try {
    for (const auto& s : subs) {
      auto* sub = apps[s.name];
      if (!sub->parsed()) continue;
      Context ctx{Config{}, out, err};
      if (!config_path.empty()) ctx.config.load_file(config_path);
      for (const auto& k : config_keys())
        if (sub->count("--" + key_to_flag(k.name)) > 0) ctx.config.set(k.name, flags[k.name]);
      return s.fn(ctx);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitOther;
}

}  // namespace affectlab::cli
