// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Network configuration and the output bundle shared by the network,
// supervision and fusion modules.

#ifndef RGBT_DETECTOR_TYPES_HPP_
#define RGBT_DETECTOR_TYPES_HPP_

#include <array>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "rgbt/gsma.hpp"
#include "rgbt/kv.hpp"

namespace rgbt {

struct AnchorShape {
  double w = 0;
  double h = 0;
  bool operator==(const AnchorShape&) const = default;
};

/// GSMA settings shared by both insertion points (the channel count is
/// filled in per stage).
struct GsmaSettings {
  int shuffle_groups = 16;  // 0 = C
  std::vector<int> kernel_sizes{3, 5, 7, 9};
  std::vector<int> group_counts{1, 4, 8, 16};
  int se_reduction = 4;
  bool cross_scale_softmax = true;
  bool attention = true;
  ShuffleOrder order = ShuffleOrder::kAfterAttention;

  GsmaConfig for_channels(int channels) const {
    GsmaConfig cfg;
    cfg.channels_per_modality = channels;
    cfg.shuffle_groups = shuffle_groups;
    cfg.spc_kernel_sizes = kernel_sizes;
    cfg.spc_group_counts = group_counts;
    cfg.se_reduction = se_reduction;
    cfg.cross_scale_softmax = cross_scale_softmax;
    cfg.attention = attention;
    cfg.order = order;
    return cfg;
  }
};

struct NetworkConfig {
  static constexpr std::array<int, 5> kStageStrides{2, 4, 8, 16, 32};
  static constexpr std::array<int, 3> kDetectionStrides{8, 16, 32};
  static constexpr int kAnchorsPerScale = 3;
  static constexpr int kSegStride = 8;

  int input_height = 256;
  int input_width = 256;
  int num_classes = 3;
  int base_width = 16;
  std::vector<int> width_multipliers{1, 2, 4, 8, 16};
  std::vector<int> stage_depths{1, 2, 2, 3, 2};
  /// Neck width as a fraction of the per-stream stage width.
  double neck_ratio = 0.5;
  /// Nine (w, h) pixel anchors, ascending area; scale s uses [3s, 3s+3).
  std::vector<AnchorShape> anchors{{14, 14}, {20, 20}, {26, 26}, {32, 32}, {38, 38},
                                   {44, 44}, {50, 50}, {58, 58}, {66, 66}};
  /// GSMA at P3/P4; false fuses those stages by plain concatenation.
  bool use_gsma = true;
  GsmaSettings gsma;
  /// Separate visible/thermal branches with their own supervision plus the
  /// segmentation heads; false keeps the fusion branch only.
  bool multi_branch = true;
  std::uint64_t seed = 0;

  int stage_width(int stage) const { return base_width * width_multipliers.at(stage); }
  int neck_width(int scale) const {
    return std::max(1, static_cast<int>(stage_width(scale + 2) * neck_ratio));
  }
  int grid_height(int scale) const { return input_height / kDetectionStrides.at(scale); }
  int grid_width(int scale) const { return input_width / kDetectionStrides.at(scale); }
  int outputs_per_anchor() const { return 5 + num_classes; }
  const AnchorShape& anchor(int scale, int a) const { return anchors.at(scale * kAnchorsPerScale + a); }

  void validate() const {
    if (input_height <= 0 || input_width <= 0 || input_height % 32 || input_width % 32)
      throw ConfigError("input size " + std::to_string(input_height) + "x" + std::to_string(input_width) +
                        " must be positive and divisible by 32");
    if (num_classes <= 0) throw ConfigError("num_classes must be positive");
    if (base_width <= 0) throw ConfigError("base_width must be positive");
    if (width_multipliers.size() != 5 || stage_depths.size() != 5)
      throw ConfigError("width_multipliers and stage_depths need 5 entries (P1..P5)");
    for (int m : width_multipliers)
      if (m <= 0) throw ConfigError("width multipliers must be positive");
    for (int d : stage_depths)
      if (d < 0) throw ConfigError("stage depths must be non-negative");
    if (anchors.size() != 9) throw ConfigError("exactly 9 anchors are required");
    for (const auto& a : anchors)
      if (a.w <= 0 || a.h <= 0) throw ConfigError("anchor sizes must be positive");
    if (neck_ratio <= 0) throw ConfigError("neck_ratio must be positive");
    if (use_gsma) {
      gsma.for_channels(stage_width(2)).validate();
      gsma.for_channels(stage_width(3)).validate();
    }
  }

  std::string serialize() const {
    kv::Map m;
    m["input_height"] = std::to_string(input_height);
    m["input_width"] = std::to_string(input_width);
    m["num_classes"] = std::to_string(num_classes);
    m["base_width"] = std::to_string(base_width);
    m["width_multipliers"] = kv::join(width_multipliers);
    m["stage_depths"] = kv::join(stage_depths);
    m["neck_ratio"] = kv::format_double(neck_ratio);
    m["anchors"] = format_anchors(anchors);
    m["use_gsma"] = kv::format_bool(use_gsma);
    m["gsma_k"] = gsma.shuffle_groups == 0 ? "C" : std::to_string(gsma.shuffle_groups);
    m["gsma_kernels"] = kv::join(gsma.kernel_sizes);
    m["gsma_groups"] = kv::join(gsma.group_counts);
    m["gsma_se_reduction"] = std::to_string(gsma.se_reduction);
    m["gsma_softmax"] = kv::format_bool(gsma.cross_scale_softmax);
    m["gsma_attention"] = kv::format_bool(gsma.attention);
    m["gsma_order"] = gsma.order == ShuffleOrder::kAfterAttention ? "after" : "before";
    m["multi_branch"] = kv::format_bool(multi_branch);
    m["seed"] = std::to_string(seed);
    return kv::dump(m);
  }

  static NetworkConfig parse(const std::string& text) {
    const kv::Map m = kv::parse(text);
    NetworkConfig c;
    c.input_height = kv::get_int(m, "input_height");
    c.input_width = kv::get_int(m, "input_width");
    c.num_classes = kv::get_int(m, "num_classes");
    c.base_width = kv::get_int(m, "base_width");
    c.width_multipliers = kv::parse_ints(kv::get(m, "width_multipliers"));
    c.stage_depths = kv::parse_ints(kv::get(m, "stage_depths"));
    c.neck_ratio = kv::get_double(m, "neck_ratio");
    c.anchors = parse_anchors(kv::get(m, "anchors"));
    c.use_gsma = kv::parse_bool(kv::get(m, "use_gsma"));
    c.gsma.shuffle_groups = parse_k(kv::get(m, "gsma_k"));
    c.gsma.kernel_sizes = kv::parse_ints(kv::get(m, "gsma_kernels"));
    c.gsma.group_counts = kv::parse_ints(kv::get(m, "gsma_groups"));
    c.gsma.se_reduction = kv::get_int(m, "gsma_se_reduction");
    c.gsma.cross_scale_softmax = kv::parse_bool(kv::get(m, "gsma_softmax"));
    c.gsma.attention = kv::parse_bool(kv::get(m, "gsma_attention"));
    c.gsma.order = parse_order(kv::get(m, "gsma_order"));
    c.multi_branch = kv::parse_bool(kv::get(m, "multi_branch"));
    c.seed = std::stoull(kv::get(m, "seed"));
    return c;
  }

  static int parse_k(const std::string& s) {
    if (s == "C" || s == "c") return 0;
    return kv::parse_int(s);
  }

  static ShuffleOrder parse_order(const std::string& s) {
    if (s == "after") return ShuffleOrder::kAfterAttention;
    if (s == "before") return ShuffleOrder::kBeforeAttention;
    throw ConfigError("gsma order must be 'after' or 'before', got '" + s + "'");
  }

  static std::string format_anchors(const std::vector<AnchorShape>& anchors) {
    std::ostringstream os;
    for (std::size_t i = 0; i < anchors.size(); ++i)
      os << (i ? "," : "") << kv::format_double(anchors[i].w) << 'x' << kv::format_double(anchors[i].h);
    return os.str();
  }

  static std::vector<AnchorShape> parse_anchors(const std::string& s) {
    std::vector<AnchorShape> out;
    for (const auto& item : kv::split(s, ',')) {
      const auto x = item.find('x');
      if (x == std::string::npos) throw ConfigError("anchor '" + item + "' is not WxH");
      out.push_back({kv::parse_double(item.substr(0, x)), kv::parse_double(item.substr(x + 1))});
    }
    return out;
  }
};

/// Raw outputs of one forward pass. Detection grids are per scale with shape
/// (B, A, H_s, W_s, 5 + num_classes): t_x, t_y, t_w, t_h, objectness logit,
/// class logits. The visible/thermal grids are empty for single-branch
/// networks; the segmentation maps are null unless requested.
template <typename T>
struct BranchOutputs {
  std::vector<Var<T>> fusion;
  std::vector<Var<T>> visible;
  std::vector<Var<T>> thermal;
  Var<T> seg_visible;
  Var<T> seg_thermal;
};

}  // namespace rgbt

#endif  // RGBT_DETECTOR_TYPES_HPP_
