// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dual-stream detector:
//
//   visible -> backbone_v -> P3v P4v P5v ---------------------> neck_v -> grids_v
//                              |   |   |   GSMA(P3) GSMA(P4)
//                              |   |   +-> concat(P5)  ---------> neck_f -> grids_f
//   thermal -> backbone_t -> P3t P4t P5t ---------------------> neck_t -> grids_t
//
// plus a 1x1 segmentation head on each stream's P3, evaluated only for the
// training loss.

#ifndef RGBT_NETWORK_HPP_
#define RGBT_NETWORK_HPP_

#include <atomic>
#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "rgbt/archive.hpp"
#include "rgbt/detector_types.hpp"
#include "rgbt/gsma.hpp"
#include "rgbt/nn.hpp"

namespace rgbt {

template <typename T>
struct Pyramid {
  Var<T> p3, p4, p5;
};

/// Five strided stages, each a 3x3 stride-2 convolution followed by
/// residual blocks.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(nn::ParamStore<T>& store, const std::string& name, const NetworkConfig& cfg) {
    int cin = 3;
    for (int s = 0; s < 5; ++s) {
      const std::string stage = name + ".stage" + std::to_string(s + 1);
      const int c = cfg.stage_width(s);
      downs_.emplace_back(store, stage + ".down", cin, c, 3, 2);
      std::vector<nn::Residual<T>> blocks;
      for (int d = 0; d < cfg.stage_depths[s]; ++d)
        blocks.emplace_back(store, stage + ".block" + std::to_string(d), c);
      blocks_.push_back(std::move(blocks));
      cin = c;
    }
  }

  Pyramid<T> operator()(const Var<T>& x, bool training) const {
    Var<T> y = x;
    std::vector<Var<T>> stages;
    for (std::size_t s = 0; s < downs_.size(); ++s) {
      y = downs_[s](y, training);
      for (const auto& b : blocks_[s]) y = b(y, training);
      stages.push_back(y);
    }
    return {stages[2], stages[3], stages[4]};
  }

 private:
  std::vector<nn::ConvNormAct<T>> downs_;
  std::vector<std::vector<nn::Residual<T>>> blocks_;
};

/// PANet neck and per-scale prediction convolutions. `width_factor` is the
/// input width relative to one stream; wider inputs are first reduced by
/// 1x1 transition convolutions.
template <typename T>
class Neck {
 public:
  Neck() = default;
  Neck(nn::ParamStore<T>& store, const std::string& name, const NetworkConfig& cfg, int width_factor)
      : anchors_(NetworkConfig::kAnchorsPerScale) {
    const int c3 = cfg.stage_width(2), c4 = cfg.stage_width(3), c5 = cfg.stage_width(4);
    const int n3 = cfg.neck_width(0), n4 = cfg.neck_width(1), n5 = cfg.neck_width(2);
    if (width_factor != 1) {
      const int cs[3] = {c3, c4, c5};
      for (int s = 0; s < 3; ++s)
        transitions_.emplace_back(store, name + ".transition" + std::to_string(s + 3), width_factor * cs[s],
                                  cs[s], 1, 1);
    }
    lat5_ = nn::ConvNormAct<T>(store, name + ".lateral5", c5, n4, 1, 1);
    td4_ = nn::ConvNormAct<T>(store, name + ".topdown4", n4 + c4, n4, 3, 1);
    lat4_ = nn::ConvNormAct<T>(store, name + ".lateral4", n4, n3, 1, 1);
    out3_ = nn::ConvNormAct<T>(store, name + ".out3", n3 + c3, n3, 3, 1);
    down3_ = nn::ConvNormAct<T>(store, name + ".down3", n3, n3, 3, 2);
    out4_ = nn::ConvNormAct<T>(store, name + ".out4", 2 * n3, n4, 3, 1);
    down4_ = nn::ConvNormAct<T>(store, name + ".down4", n4, n4, 3, 2);
    out5_ = nn::ConvNormAct<T>(store, name + ".out5", 2 * n4, n5, 3, 1);
    const int ns[3] = {n3, n4, n5};
    const int K = cfg.outputs_per_anchor();
    for (int s = 0; s < 3; ++s) {
      heads_.emplace_back(store, name + ".head" + std::to_string(s + 3), ns[s], anchors_ * K, 1);
      // Prior-probability bias: about 8 objects per image for objectness,
      // 0.6 spread over the classes for class scores.
      auto& b = heads_.back().bias()->value;
      const double cells = static_cast<double>(cfg.grid_height(s)) * cfg.grid_width(s);
      for (int a = 0; a < anchors_; ++a) {
        b[a * K + 4] = static_cast<T>(std::log(8.0 / cells));
        for (int c = 0; c < cfg.num_classes; ++c)
          b[a * K + 5 + c] = static_cast<T>(std::log(0.6 / std::max(cfg.num_classes - 0.99, 0.01)));
      }
    }
  }

  std::vector<Var<T>> operator()(Pyramid<T> pyr, bool training) const {
    if (!transitions_.empty()) {
      pyr.p3 = transitions_[0](pyr.p3, training);
      pyr.p4 = transitions_[1](pyr.p4, training);
      pyr.p5 = transitions_[2](pyr.p5, training);
    }
    const auto l5 = lat5_(pyr.p5, training);
    const auto t4 = td4_(ops::concat<T>({ops::upsample2x(l5), pyr.p4}), training);
    const auto l4 = lat4_(t4, training);
    const auto o3 = out3_(ops::concat<T>({ops::upsample2x(l4), pyr.p3}), training);
    const auto o4 = out4_(ops::concat<T>({down3_(o3, training), l4}), training);
    const auto o5 = out5_(ops::concat<T>({down4_(o4, training), l5}), training);
    return {ops::head_to_grid(heads_[0](o3), anchors_), ops::head_to_grid(heads_[1](o4), anchors_),
            ops::head_to_grid(heads_[2](o5), anchors_)};
  }

 private:
  int anchors_ = 3;
  std::vector<nn::ConvNormAct<T>> transitions_;
  nn::ConvNormAct<T> lat5_, td4_, lat4_, out3_, down3_, out4_, down4_, out5_;
  std::vector<nn::Conv2d<T>> heads_;
};

inline constexpr const char* kModelFormat = "rgbt-model";
inline constexpr int kModelVersion = 1;

template <typename T>
class Network {
 public:
  explicit Network(const NetworkConfig& cfg) : cfg_(cfg), store_(std::make_unique<nn::ParamStore<T>>(cfg.seed)) {
    cfg_.validate();
    auto& st = *store_;
    backbone_v_ = Backbone<T>(st, "backbone.visible", cfg_);
    backbone_t_ = Backbone<T>(st, "backbone.thermal", cfg_);
    if (cfg_.use_gsma) {
      gsma3_ = Gsma<T>(st, "gsma3", cfg_.gsma.for_channels(cfg_.stage_width(2)));
      gsma4_ = Gsma<T>(st, "gsma4", cfg_.gsma.for_channels(cfg_.stage_width(3)));
    }
    neck_f_ = Neck<T>(st, "neck.fusion", cfg_, 2);
    if (cfg_.multi_branch) {
      neck_v_ = Neck<T>(st, "neck.visible", cfg_, 1);
      neck_t_ = Neck<T>(st, "neck.thermal", cfg_, 1);
      seg_v_ = nn::Conv2d<T>(st, "seg.visible", cfg_.stage_width(2), 1, 1);
      seg_t_ = nn::Conv2d<T>(st, "seg.thermal", cfg_.stage_width(2), 1, 1);
    }
  }

  /// Visible input (B, 3, H, W); thermal (B, 1, H, W) is replicated to three
  /// channels. Segmentation maps are produced only when `training` is set on
  /// a multi-branch network.
  BranchOutputs<T> forward(const Var<T>& visible, const Var<T>& thermal, bool training) const {
    check_inputs(visible, thermal);
    Var<T> th = thermal->shape()[1] == 1 ? ops::gather_channels(thermal, {0, 0, 0}) : thermal;
    const Pyramid<T> pv = backbone_v_(visible, training);
    const Pyramid<T> pt = backbone_t_(th, training);
    BranchOutputs<T> out;
    out.fusion = neck_f_(fuse_features(pv, pt, training), training);
    if (cfg_.multi_branch) {
      out.visible = neck_v_(pv, training);
      out.thermal = neck_t_(pt, training);
      if (training) {
        seg_calls_->fetch_add(1);
        out.seg_visible = seg_v_(pv.p3);
        out.seg_thermal = seg_t_(pt.p3);
      }
    }
    return out;
  }

  BranchOutputs<T> forward(const Tensor<T>& visible, const Tensor<T>& thermal, bool training) const {
    return forward(constant(visible), constant(thermal), training);
  }

  /// Frozen-parameter evaluation: running normalization statistics, no
  /// segmentation heads, no graph.
  BranchOutputs<T> infer(const Tensor<T>& visible, const Tensor<T>& thermal) const {
    NoGradGuard guard;
    return forward(constant(visible), constant(thermal), false);
  }

  /// Per-stream pyramids, exposed for inspection.
  std::pair<Pyramid<T>, Pyramid<T>> backbone(const Tensor<T>& visible, const Tensor<T>& thermal,
                                             bool training) const {
    auto v = constant(visible), t = constant(thermal);
    check_inputs(v, t);
    if (t->shape()[1] == 1) t = ops::gather_channels(t, {0, 0, 0});
    return {backbone_v_(v, training), backbone_t_(t, training)};
  }

  Pyramid<T> fuse_features(const Pyramid<T>& pv, const Pyramid<T>& pt, bool training) const {
    Pyramid<T> f;
    if (cfg_.use_gsma) {
      f.p3 = gsma3_(pv.p3, pt.p3, training);
      f.p4 = gsma4_(pv.p4, pt.p4, training);
    } else {
      f.p3 = ops::concat<T>({pv.p3, pt.p3});
      f.p4 = ops::concat<T>({pv.p4, pt.p4});
    }
    f.p5 = ops::concat<T>({pv.p5, pt.p5});
    return f;
  }

  const NetworkConfig& config() const { return cfg_; }
  nn::ParamStore<T>& store() { return *store_; }
  const nn::ParamStore<T>& store() const { return *store_; }
  int gsma_count() const { return cfg_.use_gsma ? 2 : 0; }
  std::size_t seg_head_calls() const { return seg_calls_->load(); }

  std::string header() const {
    return std::string("format = ") + kModelFormat + "\nversion = " + std::to_string(kModelVersion) + "\n" +
           cfg_.serialize();
  }

  void save(const std::filesystem::path& path) const {
    std::vector<std::pair<std::string, const Tensor<T>*>> named;
    for (const auto& [n, t] : store_->state()) named.emplace_back(n, t);
    write_archive<T>(path, header(), named);
  }

  /// Copies matching tensors from an archive; every model tensor must be
  /// present with the same shape.
  void load_state(const Archive<T>& a, const std::string& origin) {
    for (const auto& [name, t] : store_->state()) {
      const Tensor<T>* src = a.find(name);
      if (!src) throw CheckpointError(origin + ": missing tensor '" + name + "'");
      if (src->shape() != t->shape())
        throw CheckpointError(origin + ": tensor '" + name + "' has shape " + shape_str(src->shape()) +
                              ", model expects " + shape_str(t->shape()));
      *t = *src;
    }
  }

  static NetworkConfig read_config(const Archive<T>& a, const std::string& origin) {
    const kv::Map m = kv::parse(a.header, origin);
    auto f = m.find("format");
    if (f == m.end() || f->second != kModelFormat) throw CheckpointError(origin + ": not a model checkpoint");
    const int version = kv::get_int(m, "version");
    if (version != kModelVersion)
      throw CheckpointError(origin + ": checkpoint version " + std::to_string(version) +
                            " is not supported (expected " + std::to_string(kModelVersion) + ")");
    return NetworkConfig::parse(a.header);
  }

  static Network load(const std::filesystem::path& path) {
    const auto a = read_archive<T>(path);
    Network net(read_config(a, path.string()));
    net.load_state(a, path.string());
    return net;
  }

 private:
  void check_inputs(const Var<T>& v, const Var<T>& t) const {
    const Shape& vs = v->shape();
    const Shape& ts = t->shape();
    if (vs.size() != 4 || vs[1] != 3 || vs[2] != cfg_.input_height || vs[3] != cfg_.input_width)
      throw ShapeError("visible input " + shape_str(vs) + " does not match (B,3," + std::to_string(cfg_.input_height) +
                       "," + std::to_string(cfg_.input_width) + ")");
    if (ts.size() != 4 || (ts[1] != 1 && ts[1] != 3) || ts[0] != vs[0] || ts[2] != vs[2] || ts[3] != vs[3])
      throw ShapeError("thermal input " + shape_str(ts) + " does not match visible input " + shape_str(vs));
  }

  NetworkConfig cfg_;
  std::unique_ptr<nn::ParamStore<T>> store_;
  Backbone<T> backbone_v_, backbone_t_;
  Gsma<T> gsma3_, gsma4_;
  Neck<T> neck_f_, neck_v_, neck_t_;
  nn::Conv2d<T> seg_v_, seg_t_;
  std::unique_ptr<std::atomic<std::size_t>> seg_calls_ = std::make_unique<std::atomic<std::size_t>>(0);
};

}  // namespace rgbt

#endif  // RGBT_NETWORK_HPP_
