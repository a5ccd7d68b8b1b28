// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Group shuffled multi-receptive attention (GSMA).
//
// Each modality runs its own multi-receptive attention path:
//   SPC      split C channels into S parts, part i goes through a k_i x k_i
//            grouped convolution, results are re-concatenated;
//   SEWeight global pool -> bottleneck -> ReLU -> expand -> sigmoid, one
//            module per modality shared by its S branches;
//   softmax  optional normalization of the S weight vectors across branches;
// and the two recalibrated maps are merged by the cross-modal group shuffle.

#ifndef RGBT_GSMA_HPP_
#define RGBT_GSMA_HPP_

#include <string>
#include <vector>

#include "rgbt/nn.hpp"
#include "rgbt/shuffle.hpp"

namespace rgbt {

enum class ShuffleOrder { kAfterAttention, kBeforeAttention };

struct GsmaConfig {
  int channels_per_modality = 0;
  /// K; 0 means K = C.
  int shuffle_groups = 16;
  std::vector<int> spc_kernel_sizes{3, 5, 7, 9};
  std::vector<int> spc_group_counts{1, 4, 8, 16};
  int se_reduction = 4;
  bool cross_scale_softmax = true;
  /// Normalization + activation after each SPC convolution.
  bool spc_norm_act = true;
  /// false bypasses the attention paths, leaving the bare group shuffle.
  bool attention = true;
  ShuffleOrder order = ShuffleOrder::kAfterAttention;

  int branches() const { return static_cast<int>(spc_kernel_sizes.size()); }
  int resolved_groups() const { return shuffle_groups == 0 ? channels_per_modality : shuffle_groups; }

  /// Channel count seen by the attention path (2C when shuffling first).
  int attention_channels() const {
    return order == ShuffleOrder::kBeforeAttention ? 2 * channels_per_modality : channels_per_modality;
  }

  /// Largest divisor of the branch width that does not exceed the requested
  /// group count.
  int effective_groups(int branch, int total_channels) const {
    const int width = total_channels / branches();
    int g = std::min(spc_group_counts.at(branch), width);
    while (g > 1 && width % g != 0) --g;
    return std::max(g, 1);
  }

  void validate() const {
    if (spc_kernel_sizes.empty() || spc_kernel_sizes.size() != spc_group_counts.size())
      throw ConfigError("SPC kernel sizes and group counts must be non-empty and equal length");
    for (int k : spc_kernel_sizes)
      if (k <= 0 || k % 2 == 0) throw ConfigError("SPC kernel sizes must be odd and positive");
    for (int g : spc_group_counts)
      if (g <= 0) throw ConfigError("SPC group counts must be positive");
    if (se_reduction <= 0) throw ConfigError("SE reduction must be positive");
    if (channels_per_modality <= 0) throw ConfigError("GSMA channel count must be positive");
    if (attention && attention_channels() % branches() != 0)
      throw ConfigError("GSMA channel count " + std::to_string(attention_channels()) +
                        " not divisible by SPC branch count " + std::to_string(branches()));
    if (!ShuffleSpec::valid(channels_per_modality, resolved_groups()))
      throw ConfigError("shuffle groups K=" + std::to_string(resolved_groups()) +
                        " invalid for C=" + std::to_string(channels_per_modality));
  }
};

/// Squeeze pyramid concat over a (B, C, H, W) map.
template <typename T>
class Spc {
 public:
  Spc() = default;
  Spc(nn::ParamStore<T>& store, const std::string& name, const GsmaConfig& cfg, int channels)
      : width_(channels / cfg.branches()) {
    if (channels % cfg.branches() != 0)
      throw ConfigError("SPC input channels " + std::to_string(channels) +
                        " not divisible by branch count " + std::to_string(cfg.branches()));
    for (int i = 0; i < cfg.branches(); ++i) {
      const int g = cfg.effective_groups(i, channels);
      groups_.push_back(g);
      convs_.emplace_back(store, name + ".branch" + std::to_string(i), width_, width_,
                          cfg.spc_kernel_sizes[i], 1, g, cfg.spc_norm_act ? nn::Act::kSiLU : nn::Act::kNone,
                          cfg.spc_norm_act);
    }
  }

  /// Per-branch outputs, each (B, C/S, H, W).
  std::vector<Var<T>> branches(const Var<T>& x, bool training) const {
    if (x->shape()[1] != width_ * static_cast<int>(convs_.size()))
      throw ShapeError("SPC input " + shape_str(x->shape()) + " has the wrong channel count");
    std::vector<Var<T>> out;
    for (std::size_t i = 0; i < convs_.size(); ++i)
      out.push_back(convs_[i](ops::slice(x, static_cast<int>(i) * width_, width_), training));
    return out;
  }

  Var<T> operator()(const Var<T>& x, bool training) const { return ops::concat(branches(x, training)); }

  int branch_width() const { return width_; }
  const std::vector<int>& groups() const { return groups_; }
  const std::vector<nn::ConvNormAct<T>>& convs() const { return convs_; }

 private:
  int width_ = 0;
  std::vector<int> groups_;
  std::vector<nn::ConvNormAct<T>> convs_;
};

/// Channel attention: (B, Cb, H, W) -> (B, Cb) with every entry in (0, 1).
template <typename T>
class SeWeight {
 public:
  SeWeight() = default;
  SeWeight(nn::ParamStore<T>& store, const std::string& name, int channels, int reduction)
      : hidden_(std::max(1, channels / reduction)),
        reduce_(store, name + ".fc1", channels, hidden_),
        expand_(store, name + ".fc2", hidden_, channels) {}

  Var<T> operator()(const Var<T>& x) const {
    return ops::sigmoid(expand_(ops::relu(reduce_(ops::global_avg_pool(x)))));
  }

  int hidden() const { return hidden_; }
  const nn::Linear<T>& fc1() const { return reduce_; }
  const nn::Linear<T>& fc2() const { return expand_; }

 private:
  int hidden_ = 1;
  nn::Linear<T> reduce_, expand_;
};

template <typename T>
struct AttentionResult {
  Var<T> output;
  /// (B, S * C/S): branch i occupies columns [i*C/S, (i+1)*C/S).
  Var<T> weights;
};

/// SPC -> SEWeight -> (softmax across branches) -> recalibration.
template <typename T>
class MultiReceptiveAttention {
 public:
  MultiReceptiveAttention() = default;
  MultiReceptiveAttention(nn::ParamStore<T>& store, const std::string& name, const GsmaConfig& cfg,
                          int channels)
      : softmax_(cfg.cross_scale_softmax),
        spc_(store, name + ".spc", cfg, channels),
        se_(store, name + ".se", spc_.branch_width(), cfg.se_reduction) {}

  AttentionResult<T> forward(const Var<T>& x, bool training) const {
    auto ys = spc_.branches(x, training);
    std::vector<Var<T>> ws;
    for (const auto& y : ys) ws.push_back(se_(y));
    auto weights = ops::concat(ws);
    const int S = static_cast<int>(ys.size());
    const int W = spc_.branch_width();
    if (softmax_) weights = ops::softmax_across_blocks(weights, S);
    std::vector<Var<T>> outs;
    for (int i = 0; i < S; ++i) outs.push_back(ops::scale_channels(ys[i], ops::slice(weights, i * W, W)));
    return {ops::concat(outs), weights};
  }

  Var<T> operator()(const Var<T>& x, bool training) const { return forward(x, training).output; }

  const Spc<T>& spc() const { return spc_; }
  const SeWeight<T>& se() const { return se_; }

 private:
  bool softmax_ = true;
  Spc<T> spc_;
  SeWeight<T> se_;
};

/// Two-modality GSMA block: (B, C, H, W) x 2 -> (B, 2C, H, W).
template <typename T>
class Gsma {
 public:
  Gsma() = default;
  Gsma(nn::ParamStore<T>& store, const std::string& name, GsmaConfig cfg)
      : cfg_(std::move(cfg)), spec_(cfg_.channels_per_modality, cfg_.resolved_groups()) {
    cfg_.validate();
    if (!cfg_.attention) return;
    if (cfg_.order == ShuffleOrder::kAfterAttention) {
      visible_ = MultiReceptiveAttention<T>(store, name + ".visible", cfg_, cfg_.channels_per_modality);
      thermal_ = MultiReceptiveAttention<T>(store, name + ".thermal", cfg_, cfg_.channels_per_modality);
    } else {
      joint_ = MultiReceptiveAttention<T>(store, name + ".joint", cfg_, 2 * cfg_.channels_per_modality);
    }
  }

  Var<T> operator()(const Var<T>& visible, const Var<T>& thermal, bool training) const {
    if (visible->shape() != thermal->shape())
      throw ShapeError("GSMA inputs differ: " + shape_str(visible->shape()) + " vs " +
                       shape_str(thermal->shape()));
    if (!cfg_.attention) return group_shuffle(visible, thermal, spec_);
    if (cfg_.order == ShuffleOrder::kBeforeAttention)
      return joint_(group_shuffle(visible, thermal, spec_), training);
    return group_shuffle(visible_(visible, training), thermal_(thermal, training), spec_);
  }

  /// Recalibrated single-modality features before the shuffle.
  Var<T> refine_visible(const Var<T>& x, bool training) const { return visible_(x, training); }
  Var<T> refine_thermal(const Var<T>& x, bool training) const { return thermal_(x, training); }

  const GsmaConfig& config() const { return cfg_; }
  const ShuffleSpec& shuffle_spec() const { return spec_; }
  const MultiReceptiveAttention<T>& visible_path() const { return visible_; }
  const MultiReceptiveAttention<T>& thermal_path() const { return thermal_; }

 private:
  GsmaConfig cfg_;
  ShuffleSpec spec_{1, 1};
  MultiReceptiveAttention<T> visible_, thermal_, joint_;
};

}  // namespace rgbt

#endif  // RGBT_GSMA_HPP_
