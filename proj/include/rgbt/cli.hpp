// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end:
//
//   rgbt gen-data          --out DIR
//   rgbt train             --data DIR --run DIR [--resume]
//   rgbt eval              --data DIR --checkpoint FILE --out DIR
//                          [--branch fused|fusion|visible|thermal]
//                          [--from-detections DIR]
//   rgbt ablate-k          --data DIR --run DIR [--k-list 1,2,4,8,16,32,C]
//   rgbt ablate-components --data DIR --run DIR
//
// Every config key is also an option: `--batch-size 4` sets batch_size.
// Layering is defaults < --profile < --config file < options. Relative
// paths resolve under $RGBT_RUN_ROOT when it is set.
//
// Exit codes: 0 success, 1 usage, 2 data or integrity, 3 divergence.

#ifndef RGBT_CLI_HPP_
#define RGBT_CLI_HPP_

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rgbt/config.hpp"
#include "rgbt/data.hpp"
#include "rgbt/eval.hpp"
#include "rgbt/network.hpp"
#include "rgbt/train.hpp"

namespace rgbt::cli {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kDivergence = 3 };

inline constexpr const char* kRunRootEnv = "RGBT_RUN_ROOT";

inline fs::path resolve(const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv(kRunRootEnv); root && *root) return fs::path(root) / path;
  return path;
}

/// Advisory exclusive lock on `dir/.lock`, released on destruction.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) {
    fs::create_directories(dir);
    const auto path = dir / ".lock";
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0) throw IoError("cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw IoError(dir.string() + " is in use by another process");
    }
  }
  ~DirLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  int fd_ = -1;
};

inline std::string option_name(const std::string& key) {
  std::string s = key;
  for (auto& c : s)
    if (c == '_') c = '-';
  return s;
}

struct Common {
  std::string config_file;
  std::string profile = "toy";
  std::map<std::string, std::string> overrides;

  RunConfig resolve_config() const {
    RunConfig cfg;
    if (profile == "paper") {
      cfg.apply(RunConfig::paper_profile(), "profile paper");
    } else if (profile != "toy") {
      throw ConfigError("unknown profile '" + profile + "' (expected toy or paper)");
    }
    if (!config_file.empty()) cfg.apply_file(resolve(config_file));
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    return cfg;
  }
};

inline void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_file, "key = value config file");
  app->add_option("--profile", c.profile, "toy (default) or paper");
  for (const auto& [key, value] : RunConfig::defaults()) {
    const std::string k = key;
    app->add_option_function<std::string>(
           "--" + option_name(k), [&c, k](const std::string& v) { c.overrides[k] = v; }, "default: " + value)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)
        ->group("Config keys");
  }
}

inline void echo_config(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  fs::create_directories(dir);
  write_text_file(dir / "config.txt", cfg.echo());
  out << "effective config written to " << (dir / "config.txt").string() << "\n";
}

inline std::vector<ImagePair> load_split_checked(const fs::path& data, const std::string& split,
                                                 const NetworkConfig& net) {
  read_meta(data);  // validates dataset.meta
  if (SceneSpec::kNumClasses != net.num_classes)
    throw IntegrityError((data / "dataset.meta").string() + ": dataset has " +
                         std::to_string(SceneSpec::kNumClasses) + " classes, network expects " +
                         std::to_string(net.num_classes));
  return load_dataset(data, split, net.num_classes);
}

// ---------------------------------------------------------------------------

inline int cmd_gen_data(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
  const SceneSpec spec = cfg.scene();
  const auto meta = generate_dataset(spec, cfg.integer("n_train"), cfg.integer("n_test"), out_dir);
  write_text_file(out_dir / "config.txt", cfg.echo());
  out << "wrote " << meta.n_train << " train and " << meta.n_test << " test pairs to " << out_dir.string() << "\n";
  return kOk;
}

struct TrainSummary {
  TrainResult result;
  double initial_loss = 0, final_loss = 0;
};

inline TrainSummary run_training(const RunConfig& cfg, const std::vector<ImagePair>& train_set, const fs::path& run,
                                 bool resume, std::ostream& out) {
  Network<float> net(cfg.network());
  TrainOptions opt;
  opt.optim = cfg.optim();
  opt.weights = cfg.loss_weights();
  opt.run_dir = run;
  opt.resume = resume;
  opt.progress = &out;
  TrainSummary s;
  s.result = train(net, train_set, opt);
  if (!s.result.log.empty()) {
    s.initial_loss = s.result.log.front().loss.total;
    s.final_loss = s.result.log.back().loss.total;
  }
  return s;
}

inline int cmd_train(const RunConfig& cfg, const fs::path& data, const fs::path& run, bool resume, std::ostream& out) {
  DirLock lock(run);
  echo_config(cfg, run, out);
  const auto train_set = load_split_checked(data, "train", cfg.network());
  const auto s = run_training(cfg, train_set, run, resume, out);
  out << "trained " << s.result.steps_done << " steps; loss " << s.initial_loss << " -> " << s.final_loss << "\n"
      << "model: " << s.result.final_checkpoint.string() << "\n";
  return kOk;
}

inline PredictOptions branch_options(PredictOptions o, const std::string& branch) {
  if (branch == "fused") return o;
  if (branch == "fusion") {
    o.weights = {1, 0, 0};
  } else if (branch == "visible") {
    o.weights = {0, 1, 0};
  } else if (branch == "thermal") {
    o.weights = {0, 0, 1};
  } else {
    throw ConfigError("--branch must be fused, fusion, visible or thermal, got '" + branch + "'");
  }
  return o;
}

/// Network config of a checkpoint; explicitly configured network keys must
/// agree with it.
inline NetworkConfig checkpoint_config(const RunConfig& cfg, const fs::path& ckpt) {
  const auto a = read_archive<float>(ckpt);
  const NetworkConfig saved = Network<float>::read_config(a, ckpt.string());
  const kv::Map m = kv::parse(saved.serialize());
  for (const auto& [k, v] : m)
    if (cfg.is_explicit(k) && cfg.get(k) != v)
      throw CheckpointError(ckpt.string() + ": config key '" + k + "' is '" + cfg.get(k) + "' but the checkpoint has '" +
                            v + "'");
  return saved;
}

struct EvalSummary {
  FullReport report;
  double images_per_second = 0;
};

inline EvalSummary evaluate_checkpoint(const RunConfig& cfg, const fs::path& data, const fs::path& ckpt,
                                       const fs::path& out_dir, const std::string& branch) {
  const NetworkConfig net_cfg = checkpoint_config(cfg, ckpt);
  const auto model = Network<float>::load(ckpt);
  const auto test = load_split_checked(data, "test", net_cfg);
  const auto run = detect(model, test, branch_options(cfg.predict_options(), branch), cfg.integer("eval_batch_size"));
  write_detection_dir(out_dir / "detections", test, run.detections);
  EvalSummary s{evaluate_detections(run.detections, test, cfg.eval()), run.images_per_second};
  std::ostringstream extra;
  extra << "images_per_second: " << std::setprecision(6) << run.images_per_second << "\n";
  write_text_file(out_dir / "report.txt", format_full_report(s.report, extra.str()));
  write_text_file(out_dir / "mr_curve_visible.txt", format_curve(s.report.dual.visible.mr_sweep));
  write_text_file(out_dir / "mr_curve_thermal.txt", format_curve(s.report.dual.thermal.mr_sweep));
  return s;
}

inline int cmd_eval(const RunConfig& cfg, const fs::path& data, const std::string& ckpt, const fs::path& out_dir,
                    const std::string& branch, const std::string& from_detections, std::ostream& out) {
  DirLock lock(out_dir);
  echo_config(cfg, out_dir, out);
  std::string text;
  if (!from_detections.empty()) {
    const auto test = load_dataset(data, "test", cfg.integer("num_classes"));
    const auto dets = read_detection_dir(resolve(from_detections), test);
    text = format_full_report(evaluate_detections(dets, test, cfg.eval()));
    write_text_file(out_dir / "report.txt", text);
  } else {
    if (ckpt.empty()) throw ConfigError("eval needs --checkpoint or --from-detections");
    evaluate_checkpoint(cfg, data, resolve(ckpt), out_dir, branch);
    text = read_text(out_dir / "report.txt");
  }
  out << text;
  return kOk;
}

inline std::string metric_cell(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

inline std::vector<int> parse_k_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : kv::split(s, ',')) out.push_back(NetworkConfig::parse_k(kv::trim(item)));
  return out;
}

/// One model per K with shared seed and budget. Rows: K, MR-2 and mAP
/// (dual-modality), union mAP50; invalid K values become comment lines.
inline int cmd_ablate_k(const RunConfig& base, const fs::path& data, const fs::path& run, const std::string& k_list,
                        std::ostream& out) {
  DirLock lock(run);
  echo_config(base, run, out);
  const auto train_set = load_split_checked(data, "train", base.network());
  std::string table = "# K  MR-2  mAP50  mAP  union_mAP50\n";
  for (int k : parse_k_list(k_list)) {
    const std::string label = k == 0 ? "C" : std::to_string(k);
    RunConfig cfg = base;
    cfg.set("gsma_k", label);
    cfg.set("use_gsma", "true");
    try {
      cfg.network();
    } catch (const ConfigError& e) {
      table += "# K=" + label + " skipped: " + e.what() + "\n";
      continue;
    }
    const fs::path dir = run / ("k_" + label);
    echo_config(cfg, dir, out);
    run_training(cfg, train_set, dir, false, out);
    const auto s = evaluate_checkpoint(cfg, data, dir / "model.ckpt", dir / "eval", "fused");
    table += label + "  " + metric_cell(s.report.dual.mr2, 2) + "  " + metric_cell(100 * s.report.dual.map50, 2) +
             "  " + metric_cell(100 * s.report.dual.map, 2) + "  " + metric_cell(100 * s.report.union_set.map50, 2) +
             "\n";
  }
  write_text_file(run / "ablate_k.txt", table);
  out << table;
  return kOk;
}

/// {GSMA on/off} x {MS on/off}, shared seed and budget. GSMA off fuses P3
/// and P4 by concatenation; MS off keeps the union-supervised fusion branch
/// only.
inline int cmd_ablate_components(const RunConfig& base, const fs::path& data, const fs::path& run,
                                 std::ostream& out) {
  DirLock lock(run);
  echo_config(base, run, out);
  const auto train_set = load_split_checked(data, "train", base.network());
  std::string table = "# GSMA  MS  MR-2  mAP50  mAP  union_mAP50\n";
  for (bool gsma : {false, true})
    for (bool ms : {false, true}) {
      RunConfig cfg = base;
      cfg.set("use_gsma", kv::format_bool(gsma));
      cfg.set("multi_branch", kv::format_bool(ms));
      const std::string name = std::string("gsma_") + (gsma ? "on" : "off") + "_ms_" + (ms ? "on" : "off");
      const fs::path dir = run / name;
      echo_config(cfg, dir, out);
      run_training(cfg, train_set, dir, false, out);
      const auto s = evaluate_checkpoint(cfg, data, dir / "model.ckpt", dir / "eval", "fused");
      table += std::string(gsma ? "on" : "off") + "  " + (ms ? "on" : "off") + "  " +
               metric_cell(s.report.dual.mr2, 2) + "  " + metric_cell(100 * s.report.dual.map50, 2) + "  " +
               metric_cell(100 * s.report.dual.map, 2) + "  " + metric_cell(100 * s.report.union_set.map50, 2) + "\n";
    }
  write_text_file(run / "ablate_components.txt", table);
  out << table;
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"RGB-thermal detection toolkit"};
  app.require_subcommand(1);

  Common c_gen, c_train, c_eval, c_k, c_comp;
  std::string out_dir = "data", data = "data", run_dir, ckpt, branch = "fused", from_dets, eval_out,
              k_list = "1,2,4,8,16,32,C";
  bool resume = false;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic paired dataset");
  add_common(gen, c_gen);
  gen->add_option("--out", out_dir, "Output dataset directory");

  auto* tr = app.add_subcommand("train", "Train a model");
  add_common(tr, c_train);
  tr->add_option("--data", data, "Dataset directory");
  tr->add_option("--run", run_dir, "Run directory")->required();
  tr->add_flag("--resume", resume, "Continue from the run's last checkpoint");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_common(ev, c_eval);
  ev->add_option("--data", data, "Dataset directory");
  ev->add_option("--checkpoint", ckpt, "Model checkpoint");
  ev->add_option("--out", eval_out, "Output directory")->required();
  ev->add_option("--branch", branch, "fused, fusion, visible or thermal");
  ev->add_option("--from-detections", from_dets, "Recompute the report from saved detection files");

  auto* ak = app.add_subcommand("ablate-k", "Sweep the shuffle group count K");
  add_common(ak, c_k);
  ak->add_option("--data", data, "Dataset directory");
  ak->add_option("--run", run_dir, "Run directory")->required();
  ak->add_option("--k-list", k_list, "Comma-separated K values; C means K = channels");

  auto* ac = app.add_subcommand("ablate-components", "GSMA x multi-modal supervision grid");
  add_common(ac, c_comp);
  ac->add_option("--data", data, "Dataset directory");
  ac->add_option("--run", run_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(c_gen.resolve_config(), resolve(out_dir), out);
    if (tr->parsed()) return cmd_train(c_train.resolve_config(), resolve(data), resolve(run_dir), resume, out);
    if (ev->parsed())
      return cmd_eval(c_eval.resolve_config(), resolve(data), ckpt, resolve(eval_out), branch, from_dets, out);
    if (ak->parsed()) return cmd_ablate_k(c_k.resolve_config(), resolve(data), resolve(run_dir), k_list, out);
    if (ac->parsed()) return cmd_ablate_components(c_comp.resolve_config(), resolve(data), resolve(run_dir), out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace rgbt::cli

#endif  // RGBT_CLI_HPP_
