// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Momentum-SGD training loop with a per-step loss log, periodic resumable
// checkpoints and divergence detection.

#ifndef RGBT_TRAIN_HPP_
#define RGBT_TRAIN_HPP_

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "rgbt/archive.hpp"
#include "rgbt/config.hpp"
#include "rgbt/data.hpp"
#include "rgbt/network.hpp"
#include "rgbt/supervision.hpp"

namespace rgbt {

/// Classical momentum: v = mu v + (g + wd w), w -= lr v. Weight decay only
/// touches parameters flagged for it (conv and linear weights).
template <typename T>
class Sgd {
 public:
  Sgd(nn::ParamStore<T>& store, const OptimConfig& cfg) : store_(&store), cfg_(cfg) {
    for (const auto& p : store.params()) velocity_.emplace_back(p.var->value.shape());
  }

  /// Global L2 norm of the current gradients.
  double grad_norm() const {
    double s = 0;
    for (const auto& p : store_->params())
      for (std::size_t i = 0; i < p.var->grad.size(); ++i) s += static_cast<double>(p.var->grad[i]) * p.var->grad[i];
    return std::sqrt(s);
  }

  void step(double scale = 1.0) {
    auto& params = store_->params();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& w = params[k].var->value;
      const auto& g = params[k].var->grad;
      auto& v = velocity_[k];
      const double wd = params[k].decay ? cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = (g.empty() ? 0.0 : scale * g[i]) + wd * w[i];
        v[i] = static_cast<T>(cfg_.momentum * v[i] + gi);
        w[i] = static_cast<T>(w[i] - cfg_.lr * v[i]);
      }
    }
  }

  std::vector<Tensor<T>>& velocity() { return velocity_; }
  const std::vector<Tensor<T>>& velocity() const { return velocity_; }

 private:
  nn::ParamStore<T>* store_;
  OptimConfig cfg_;
  std::vector<Tensor<T>> velocity_;
};

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double lr = 0;
  LossBreakdown loss;
  double grad_norm = 0;
  double seconds = 0;
};

inline std::string loss_log_header() {
  return "# step epoch lr total fusion_cls fusion_obj fusion_bbox visible_cls visible_obj visible_bbox "
         "thermal_cls thermal_obj thermal_bbox seg_visible seg_thermal grad_norm seconds\n";
}

inline std::string format_step(const StepRecord& r) {
  const auto& l = r.loss;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%d %d %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.6g %.3f\n", r.step,
                r.epoch, r.lr, l.total, l.fusion.cls, l.fusion.obj, l.fusion.bbox, l.visible.cls, l.visible.obj,
                l.visible.bbox, l.thermal.cls, l.thermal.obj, l.thermal.bbox, l.seg_visible, l.seg_thermal,
                r.grad_norm, r.seconds);
  return buf;
}

inline std::vector<StepRecord> parse_loss_log(const std::string& text, const std::string& origin) {
  std::vector<StepRecord> out;
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    StepRecord r;
    auto& l = r.loss;
    if (!(ls >> r.step >> r.epoch >> r.lr >> l.total >> l.fusion.cls >> l.fusion.obj >> l.fusion.bbox >>
          l.visible.cls >> l.visible.obj >> l.visible.bbox >> l.thermal.cls >> l.thermal.obj >> l.thermal.bbox >>
          l.seg_visible >> l.seg_thermal >> r.grad_norm >> r.seconds))
      throw IntegrityError(origin + ":" + std::to_string(n) + ": malformed loss log row");
    out.push_back(r);
  }
  return out;
}

/// Image indices of optimizer step `step`: epoch-wise permutations drawn
/// from (seed, epoch), cut into full batches.
struct BatchPlan {
  std::size_t n_images = 0;
  int batch_size = 1;
  std::uint64_t seed = 0;

  int batches_per_epoch() const {
    return std::max(1, static_cast<int>(n_images / static_cast<std::size_t>(batch_size)));
  }
  int epoch_of(int step) const { return step / batches_per_epoch(); }

  std::vector<std::size_t> permutation(int epoch) const {
    std::vector<std::size_t> p(n_images);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::mt19937_64 rng(splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(epoch) + 1)));
    std::shuffle(p.begin(), p.end(), rng);
    return p;
  }

  std::vector<std::size_t> indices(int step) const {
    const auto perm = permutation(epoch_of(step));
    const std::size_t b = std::min(n_images, static_cast<std::size_t>(batch_size));
    const std::size_t start = static_cast<std::size_t>(step % batches_per_epoch()) * b;
    return {perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(start + b)};
  }

  std::vector<bool> flips(int step, std::size_t count, double prob) const {
    std::mt19937_64 rng(splitmix64(~seed ^ splitmix64(static_cast<std::uint64_t>(step))));
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<bool> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = u(rng) < prob;
    return out;
  }
};

inline constexpr const char* kVelocityPrefix = "optim.velocity.";

/// Model tensors plus optimizer state; loadable as a plain model checkpoint.
template <typename T>
void save_training_checkpoint(const Network<T>& net, const Sgd<T>& opt, int step, const fs::path& path) {
  std::vector<std::pair<std::string, const Tensor<T>*>> named;
  for (const auto& [n, t] : net.store().state()) named.emplace_back(n, t);
  const auto& params = net.store().params();
  std::vector<std::string> names;
  for (const auto& p : params) names.push_back(kVelocityPrefix + p.name);
  for (std::size_t k = 0; k < params.size(); ++k) named.emplace_back(names[k], &opt.velocity()[k]);
  write_archive<T>(path, net.header() + "train_step = " + std::to_string(step) + "\n", named);
}

/// Restores weights and momentum; returns the number of completed steps.
template <typename T>
int load_training_checkpoint(Network<T>& net, Sgd<T>& opt, const fs::path& path) {
  const auto a = read_archive<T>(path);
  const NetworkConfig cfg = Network<T>::read_config(a, path.string());
  if (cfg.serialize() != net.config().serialize())
    throw CheckpointError(path.string() + ": checkpoint network config differs from the run config");
  net.load_state(a, path.string());
  const auto& params = net.store().params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor<T>* v = a.find(kVelocityPrefix + params[k].name);
    if (!v || v->shape() != opt.velocity()[k].shape())
      throw CheckpointError(path.string() + ": missing optimizer state for '" + params[k].name + "'");
    opt.velocity()[k] = *v;
  }
  return kv::get_int(kv::parse(a.header, path.string()), "train_step");
}

struct TrainOptions {
  OptimConfig optim;
  LossWeights weights;
  /// Empty keeps everything in memory.
  fs::path run_dir;
  bool resume = false;
  std::ostream* progress = nullptr;
  int progress_every = 10;
};

struct TrainResult {
  std::vector<StepRecord> log;
  int steps_done = 0;
  fs::path final_checkpoint;
};

inline fs::path last_checkpoint_path(const fs::path& run_dir) { return run_dir / "checkpoints" / "last.ckpt"; }

/// Trains `net` in place on `data`. Non-finite losses or gradients raise
/// DivergenceError before any parameter update, so the most recent
/// checkpoint on disk stays the last good state.
template <typename T>
TrainResult train(Network<T>& net, const std::vector<ImagePair>& data, const TrainOptions& opt) {
  opt.optim.validate();
  if (data.empty()) throw IntegrityError("training split is empty");
  const auto& cfg = net.config();
  Sgd<T> sgd(net.store(), opt.optim);
  const BatchPlan plan{data.size(), opt.optim.batch_size, opt.optim.seed};
  const int total_steps = opt.optim.steps > 0 ? opt.optim.steps : opt.optim.epochs * plan.batches_per_epoch();
  const bool on_disk = !opt.run_dir.empty();

  TrainResult result;
  const fs::path log_path = opt.run_dir / "loss_log.txt";
  if (on_disk) {
    fs::create_directories(opt.run_dir / "checkpoints");
    if (opt.resume && fs::exists(last_checkpoint_path(opt.run_dir))) {
      result.steps_done = load_training_checkpoint(net, sgd, last_checkpoint_path(opt.run_dir));
      if (fs::exists(log_path))
        for (const auto& r : parse_loss_log(read_text(log_path), log_path.string()))
          if (r.step < result.steps_done) result.log.push_back(r);
    }
    std::string text = loss_log_header();
    for (const auto& r : result.log) text += format_step(r);
    write_text_file(log_path, text);
  }
  std::ofstream log_file;
  if (on_disk) log_file.open(log_path, std::ios::app);

  auto checkpoint = [&](int steps_done) {
    if (!on_disk) return;
    const fs::path p = opt.run_dir / "checkpoints" / ("step_" + std::to_string(steps_done) + ".ckpt");
    save_training_checkpoint(net, sgd, steps_done, p);
    save_training_checkpoint(net, sgd, steps_done, last_checkpoint_path(opt.run_dir));
  };
  auto diverged = [&](int step, const std::string& what) {
    std::string msg = "step " + std::to_string(step) + ": " + what;
    if (on_disk && fs::exists(last_checkpoint_path(opt.run_dir)))
      msg += "; last good checkpoint: " + last_checkpoint_path(opt.run_dir).string();
    return DivergenceError(msg);
  };

  for (int step = result.steps_done; step < total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto idx = plan.indices(step);
    const auto batch =
        make_batch<T>(data, idx, cfg.input_height, cfg.input_width, plan.flips(step, idx.size(), opt.optim.flip_prob));
    net.store().zero_grad();
    const auto out = net.forward(batch.visible, batch.thermal, true);
    TotalLoss<T> loss;
    try {
      loss = total_loss(out, batch.annotations, cfg, opt.weights);
    } catch (const DivergenceError& e) {
      throw diverged(step, e.what());
    }
    if (!std::isfinite(loss.breakdown.total)) throw diverged(step, "non-finite loss");
    backward(loss.value);
    const double norm = sgd.grad_norm();
    if (!std::isfinite(norm)) throw diverged(step, "non-finite gradient");
    const double scale = opt.optim.grad_clip > 0 && norm > opt.optim.grad_clip ? opt.optim.grad_clip / norm : 1.0;
    sgd.step(scale);

    StepRecord r{step, plan.epoch_of(step), opt.optim.lr, loss.breakdown, norm,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
    result.log.push_back(r);
    result.steps_done = step + 1;
    if (on_disk) log_file << format_step(r) << std::flush;
    if (opt.progress && (step % opt.progress_every == 0 || step + 1 == total_steps))
      *opt.progress << "step " << step + 1 << "/" << total_steps << " loss " << r.loss.total << " ("
                    << r.seconds << " s)\n"
                    << std::flush;
    if (opt.optim.checkpoint_every > 0 && result.steps_done % opt.optim.checkpoint_every == 0 &&
        result.steps_done < total_steps)
      checkpoint(result.steps_done);
  }
  if (on_disk) {
    checkpoint(result.steps_done);
    result.final_checkpoint = opt.run_dir / "model.ckpt";
    net.save(result.final_checkpoint);
  }
  return result;
}

}  // namespace rgbt

#endif  // RGBT_TRAIN_HPP_
