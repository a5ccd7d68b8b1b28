// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Annotations, union-annotation construction, anchor target assignment and
// the three-branch training loss.
//
//   L_total = l_cls (cls_f + cls_v + cls_t) + l_obj (obj_f + obj_v + obj_t)
//           + l_bbox (bbox_f + bbox_v + bbox_t) + l_seg (seg_v + seg_t)
//
// The fusion branch is supervised with union annotations, the visible and
// thermal branches with their own modality's annotations.

#ifndef RGBT_SUPERVISION_HPP_
#define RGBT_SUPERVISION_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <tuple>
#include <vector>

#include "rgbt/box.hpp"
#include "rgbt/detector_types.hpp"
#include "rgbt/dual.hpp"

namespace rgbt {

/// One object, box normalized to image fractions.
struct Annotation {
  int class_id = 0;
  double cx = 0, cy = 0, w = 0, h = 0;

  Box box() const { return Box::from_center(cx, cy, w, h); }
  Box pixel_box(int width, int height) const {
    return Box::from_center(cx * width, cy * height, w * width, h * height);
  }
  bool valid(int num_classes) const {
    return class_id >= 0 && class_id < num_classes && w > 0 && h > 0 && w <= 1 && h <= 1 &&
           cx >= 0 && cx <= 1 && cy >= 0 && cy <= 1;
  }
  bool operator==(const Annotation&) const = default;
};

struct AnnotationTriplet {
  std::vector<Annotation> visible;
  std::vector<Annotation> thermal;
  std::vector<Annotation> union_set;
};

struct LossWeights {
  double cls = 0.5;
  double obj = 1.0;
  double bbox = 0.05;
  double seg = 0.25;
};

/// Merges the two modality lists. Same-class cross-modal pairs are matched
/// greedily by descending IoU (ties: lower visible index, then lower thermal
/// index); a pair with IoU >= iou_merge becomes one box at the coordinate-wise
/// mean. Output: visible-ordered merged/unmatched visible boxes, followed by
/// the unmatched thermal boxes in order.
inline std::vector<Annotation> build_union(const std::vector<Annotation>& visible,
                                           const std::vector<Annotation>& thermal,
                                           double iou_merge = 0.5) {
  struct Pair {
    double iou;
    std::size_t v, t;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < visible.size(); ++i)
    for (std::size_t j = 0; j < thermal.size(); ++j) {
      if (visible[i].class_id != thermal[j].class_id) continue;
      const double o = iou(visible[i].box(), thermal[j].box());
      if (o >= iou_merge) pairs.push_back({o, i, j});
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(b.iou, a.v, a.t) < std::tie(a.iou, b.v, b.t);
  });
  std::vector<int> v_match(visible.size(), -1);
  std::vector<bool> t_used(thermal.size(), false);
  for (const auto& p : pairs) {
    if (v_match[p.v] >= 0 || t_used[p.t]) continue;
    v_match[p.v] = static_cast<int>(p.t);
    t_used[p.t] = true;
  }
  std::vector<Annotation> out;
  for (std::size_t i = 0; i < visible.size(); ++i) {
    if (v_match[i] < 0) {
      out.push_back(visible[i]);
      continue;
    }
    const Annotation& a = visible[i];
    const Annotation& b = thermal[v_match[i]];
    out.push_back({a.class_id, 0.5 * (a.cx + b.cx), 0.5 * (a.cy + b.cy), 0.5 * (a.w + b.w),
                   0.5 * (a.h + b.h)});
  }
  for (std::size_t j = 0; j < thermal.size(); ++j)
    if (!t_used[j]) out.push_back(thermal[j]);
  return out;
}

/// A positive (scale, anchor, cell) slot and its regression target. Target
/// and anchor are in grid units of that scale; (tx, ty) is the box center
/// relative to the cell's top-left corner.
struct TargetSlot {
  int scale = 0, anchor = 0, gy = 0, gx = 0;
  int box = 0;
  int class_id = 0;
  double tx = 0, ty = 0, tw = 0, th = 0;
  double anchor_w = 0, anchor_h = 0;

  bool operator==(const TargetSlot&) const = default;
};

/// Positive slots of one image, sorted by (scale, anchor, gy, gx).
struct TargetAssignment {
  std::vector<TargetSlot> slots;
  int skipped_degenerate = 0;
};

/// A box is positive for anchor a at the cell containing its center, on
/// every scale where max(w/aw, aw/w, h/ah, ah/h) < ratio_threshold. A slot
/// claimed twice goes to the box with larger shape IoU against the anchor,
/// then the lower box index.
inline TargetAssignment assign_targets(const std::vector<Annotation>& boxes, const NetworkConfig& cfg,
                                       double ratio_threshold = 4.0) {
  TargetAssignment out;
  std::map<std::array<int, 4>, std::pair<double, TargetSlot>> claims;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const Annotation& a = boxes[i];
    const double w = a.w * cfg.input_width, h = a.h * cfg.input_height;
    if (!(w > 0) || !(h > 0)) {
      ++out.skipped_degenerate;
      continue;
    }
    const double cx = a.cx * cfg.input_width, cy = a.cy * cfg.input_height;
    for (int s = 0; s < 3; ++s) {
      const double stride = NetworkConfig::kDetectionStrides[s];
      const int gx = std::clamp(static_cast<int>(std::floor(cx / stride)), 0, cfg.grid_width(s) - 1);
      const int gy = std::clamp(static_cast<int>(std::floor(cy / stride)), 0, cfg.grid_height(s) - 1);
      for (int k = 0; k < NetworkConfig::kAnchorsPerScale; ++k) {
        const AnchorShape& an = cfg.anchor(s, k);
        const double ratio = std::max({w / an.w, an.w / w, h / an.h, an.h / h});
        if (!(ratio < ratio_threshold)) continue;
        const double score = shape_iou(w, h, an.w, an.h);
        TargetSlot slot{s,  k,           gy,          gx,        static_cast<int>(i), a.class_id,
                        cx / stride - gx, cy / stride - gy, w / stride, h / stride, an.w / stride,
                        an.h / stride};
        auto key = std::array<int, 4>{s, k, gy, gx};
        auto it = claims.find(key);
        if (it == claims.end() || score > it->second.first) claims[key] = {score, slot};
      }
    }
  }
  for (auto& [key, claim] : claims) out.slots.push_back(claim.second);
  return out;
}

namespace detail {

template <typename S>
S sigmoid_s(const S& x) {
  using std::exp;
  return S(1.0) / (S(1.0) + exp(-x));
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Binary cross-entropy on a logit and d/dlogit.
inline double bce_logit(double x, double y) {
  return std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
}
inline double bce_logit_grad(double x, double y) { return sigmoid_s(x) - y; }

}  // namespace detail

/// Cell-relative predicted box (grid units) from raw offsets.
template <typename S>
std::array<S, 4> decode_offsets(const S& tx, const S& ty, const S& tw, const S& th, double anchor_w,
                                double anchor_h) {
  const S sx = detail::sigmoid_s(tx), sy = detail::sigmoid_s(ty);
  const S sw = S(2.0) * detail::sigmoid_s(tw), sh = S(2.0) * detail::sigmoid_s(th);
  return {S(2.0) * sx - S(0.5), S(2.0) * sy - S(0.5), sw * sw * S(anchor_w), sh * sh * S(anchor_h)};
}

/// Inverse of decode_offsets. Needs x, y in (-0.5, 1.5) and w/aw, h/ah in (0, 4).
inline std::array<double, 4> encode_offsets(double x, double y, double w, double h, double anchor_w,
                                            double anchor_h) {
  return {detail::logit((x + 0.5) / 2.0), detail::logit((y + 0.5) / 2.0),
          detail::logit(std::sqrt(w / anchor_w) / 2.0), detail::logit(std::sqrt(h / anchor_h) / 2.0)};
}

/// Complete IoU of a predicted box (center/size) against a fixed target.
template <typename S>
S complete_iou(const S& px, const S& py, const S& pw, const S& ph, double gx, double gy, double gw,
               double gh) {
  using std::atan;
  constexpr double eps = 1e-7;
  const S half(0.5);
  const S p_x1 = px - pw * half, p_x2 = px + pw * half, p_y1 = py - ph * half, p_y2 = py + ph * half;
  const S g_x1(gx - 0.5 * gw), g_x2(gx + 0.5 * gw), g_y1(gy - 0.5 * gh), g_y2(gy + 0.5 * gh);
  S iw = (p_x2 < g_x2 ? p_x2 : g_x2) - (p_x1 > g_x1 ? p_x1 : g_x1);
  S ih = (p_y2 < g_y2 ? p_y2 : g_y2) - (p_y1 > g_y1 ? p_y1 : g_y1);
  if (value_of(iw) < 0) iw = S(0.0);
  if (value_of(ih) < 0) ih = S(0.0);
  const S inter = iw * ih;
  const S uni = pw * ph + S(gw * gh) - inter + S(eps);
  const S overlap = inter / uni;
  const S cw = (p_x2 > g_x2 ? p_x2 : g_x2) - (p_x1 < g_x1 ? p_x1 : g_x1);
  const S ch = (p_y2 > g_y2 ? p_y2 : g_y2) - (p_y1 < g_y1 ? p_y1 : g_y1);
  const S c2 = cw * cw + ch * ch + S(eps);
  const S dx = px - S(gx), dy = py - S(gy);
  const S rho2 = dx * dx + dy * dy;
  const S da = S(atan(gw / gh)) - atan(pw / ph);
  const S v = S(4.0 / (std::numbers::pi * std::numbers::pi)) * da * da;
  const S alpha = v / (v - overlap + S(1.0 + eps));
  return overlap - (rho2 / c2 + v * alpha);
}

/// 1 - CIoU of the slot's prediction against its target.
template <typename S>
S box_loss(const S& tx, const S& ty, const S& tw, const S& th, const TargetSlot& t) {
  const auto p = decode_offsets(tx, ty, tw, th, t.anchor_w, t.anchor_h);
  return S(1.0) - complete_iou(p[0], p[1], p[2], p[3], t.tx, t.ty, t.tw, t.th);
}

/// Loss terms of one branch and the gradient of each term with respect to
/// the branch's grids.
template <typename T>
struct DetectionLoss {
  double cls = 0, obj = 0, bbox = 0;
  std::size_t matched = 0;
  std::vector<Tensor<T>> grad_cls, grad_obj, grad_bbox;
};

namespace detail {

template <typename T>
void check_grid(const std::vector<Var<T>>& grid, std::size_t batch, const NetworkConfig& cfg) {
  if (grid.size() != 3) throw ShapeError("detection grid needs 3 scales");
  for (int s = 0; s < 3; ++s) {
    const Shape want{static_cast<int>(batch), NetworkConfig::kAnchorsPerScale, cfg.grid_height(s),
                     cfg.grid_width(s), cfg.outputs_per_anchor()};
    if (grid[s]->shape() != want)
      throw ShapeError("grid scale " + std::to_string(s) + " has shape " + shape_str(grid[s]->shape()) +
                       ", expected " + shape_str(want));
  }
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* what) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i]))
      throw DivergenceError(std::string("non-finite value in ") + what + " at flat index " +
                            std::to_string(i) + " of shape " + shape_str(t.shape()));
}

}  // namespace detail

/// L_cls: mean BCE over class logits of positive slots (0 without positives).
/// L_obj: mean BCE over the objectness logit of every slot of every scale.
/// L_bbox: mean (1 - CIoU) over positive slots (0 without positives).
template <typename T>
DetectionLoss<T> detection_loss(const std::vector<Var<T>>& grid, const std::vector<TargetAssignment>& targets,
                                const NetworkConfig& cfg) {
  detail::check_grid(grid, targets.size(), cfg);
  const int K = cfg.outputs_per_anchor(), nc = cfg.num_classes;
  DetectionLoss<T> out;
  std::size_t total_slots = 0;
  for (int s = 0; s < 3; ++s) {
    detail::check_finite(grid[s]->value, "detection grid");
    total_slots += grid[s]->value.size() / K;
    out.grad_cls.emplace_back(grid[s]->shape());
    out.grad_obj.emplace_back(grid[s]->shape());
    out.grad_bbox.emplace_back(grid[s]->shape());
  }
  for (const auto& t : targets) out.matched += t.slots.size();

  // Objectness over all slots.
  std::vector<std::vector<char>> positive(3);
  for (int s = 0; s < 3; ++s) positive[s].assign(grid[s]->value.size() / K, 0);
  auto slot_index = [&](int b, const TargetSlot& t) {
    const int H = cfg.grid_height(t.scale), W = cfg.grid_width(t.scale);
    return ((static_cast<std::size_t>(b) * NetworkConfig::kAnchorsPerScale + t.anchor) * H + t.gy) * W + t.gx;
  };
  for (std::size_t b = 0; b < targets.size(); ++b)
    for (const auto& t : targets[b].slots) positive[t.scale][slot_index(static_cast<int>(b), t)] = 1;
  const double inv_total = 1.0 / static_cast<double>(total_slots);
  double obj_sum = 0;
  for (int s = 0; s < 3; ++s) {
    const Tensor<T>& g = grid[s]->value;
    for (std::size_t i = 0; i < positive[s].size(); ++i) {
      const double x = g[i * K + 4], y = positive[s][i] ? 1.0 : 0.0;
      obj_sum += detail::bce_logit(x, y);
      out.grad_obj[s][i * K + 4] = static_cast<T>(detail::bce_logit_grad(x, y) * inv_total);
    }
  }
  out.obj = obj_sum * inv_total;

  if (out.matched == 0) return out;
  const double inv_cls = 1.0 / static_cast<double>(out.matched * nc);
  const double inv_box = 1.0 / static_cast<double>(out.matched);
  double cls_sum = 0, box_sum = 0;
  for (std::size_t b = 0; b < targets.size(); ++b) {
    for (const auto& t : targets[b].slots) {
      const Tensor<T>& g = grid[t.scale]->value;
      const std::size_t base = slot_index(static_cast<int>(b), t) * K;
      for (int c = 0; c < nc; ++c) {
        const double x = g[base + 5 + c], y = c == t.class_id ? 1.0 : 0.0;
        cls_sum += detail::bce_logit(x, y);
        out.grad_cls[t.scale][base + 5 + c] = static_cast<T>(detail::bce_logit_grad(x, y) * inv_cls);
      }
      using D = Dual<4>;
      const D l = box_loss(D::variable(g[base], 0), D::variable(g[base + 1], 1), D::variable(g[base + 2], 2),
                           D::variable(g[base + 3], 3), t);
      box_sum += l.v;
      for (int k = 0; k < 4; ++k) out.grad_bbox[t.scale][base + k] = static_cast<T>(l.d[k] * inv_box);
    }
  }
  out.cls = cls_sum * inv_cls;
  out.bbox = box_sum * inv_box;
  return out;
}

/// Per-cell binary mask at grid resolution: 1 where the cell center lies
/// inside any box.
inline Tensor<double> rasterize_boxes(const std::vector<Annotation>& boxes, int height, int width) {
  Tensor<double> mask({height, width});
  for (const auto& a : boxes) {
    const Box b = a.box();
    for (int i = 0; i < height; ++i) {
      const double v = (i + 0.5) / height;
      if (v < b.y1 || v > b.y2) continue;
      for (int j = 0; j < width; ++j) {
        const double u = (j + 0.5) / width;
        if (u >= b.x1 && u <= b.x2) mask.at(i, j) = 1.0;
      }
    }
  }
  return mask;
}

template <typename T>
struct SegmentationLoss {
  double value = 0;
  Tensor<T> grad;
};

/// Mean BCE of a (B, 1, H, W) logit map against rasterized boxes.
template <typename T>
SegmentationLoss<T> segmentation_loss(const Var<T>& logits, const std::vector<std::vector<Annotation>>& boxes) {
  const Shape& s = logits->shape();
  if (s.size() != 4 || s[1] != 1 || static_cast<std::size_t>(s[0]) != boxes.size())
    throw ShapeError("segmentation logits " + shape_str(s) + " do not match " + std::to_string(boxes.size()) +
                     " annotation lists");
  detail::check_finite(logits->value, "segmentation logits");
  const int H = s[2], W = s[3];
  SegmentationLoss<T> out{0, Tensor<T>(s)};
  const double inv = 1.0 / static_cast<double>(logits->value.size());
  double sum = 0;
  for (int b = 0; b < s[0]; ++b) {
    const auto mask = rasterize_boxes(boxes[b], H, W);
    for (int i = 0; i < H * W; ++i) {
      const std::size_t idx = static_cast<std::size_t>(b) * H * W + i;
      const double x = logits->value[idx];
      sum += detail::bce_logit(x, mask[i]);
      out.grad[idx] = static_cast<T>(detail::bce_logit_grad(x, mask[i]) * inv);
    }
  }
  out.value = sum * inv;
  return out;
}

struct LossTerms {
  double cls = 0, obj = 0, bbox = 0;
  bool operator==(const LossTerms&) const = default;
};

struct LossBreakdown {
  LossTerms fusion, visible, thermal;
  double seg_visible = 0, seg_thermal = 0;
  double total = 0;

  double recombine(const LossWeights& w) const {
    return w.cls * (fusion.cls + visible.cls + thermal.cls) + w.obj * (fusion.obj + visible.obj + thermal.obj) +
           w.bbox * (fusion.bbox + visible.bbox + thermal.bbox) + w.seg * (seg_visible + seg_thermal);
  }
};

template <typename T>
struct TotalLoss {
  Var<T> value;
  LossBreakdown breakdown;
};

/// Full training objective for one batch. Absent branches (single-branch
/// networks, segmentation heads not evaluated) contribute zero terms.
template <typename T>
TotalLoss<T> total_loss(const BranchOutputs<T>& out, const std::vector<AnnotationTriplet>& batch,
                        const NetworkConfig& cfg, const LossWeights& w) {
  std::vector<std::vector<Annotation>> vis, th, uni;
  for (const auto& t : batch) {
    vis.push_back(t.visible);
    th.push_back(t.thermal);
    uni.push_back(t.union_set);
  }
  auto assign_all = [&](const std::vector<std::vector<Annotation>>& lists) {
    std::vector<TargetAssignment> a;
    for (const auto& l : lists) a.push_back(assign_targets(l, cfg));
    return a;
  };

  std::vector<Var<T>> inputs;
  std::vector<Tensor<T>> grads;
  LossBreakdown br;
  auto add_branch = [&](const std::vector<Var<T>>& grid, const std::vector<std::vector<Annotation>>& lists,
                        LossTerms& terms) {
    if (grid.empty()) return;
    auto dl = detection_loss(grid, assign_all(lists), cfg);
    terms = {dl.cls, dl.obj, dl.bbox};
    for (int s = 0; s < 3; ++s) {
      Tensor<T> g(grid[s]->shape());
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = static_cast<T>(w.cls * dl.grad_cls[s][i] + w.obj * dl.grad_obj[s][i] + w.bbox * dl.grad_bbox[s][i]);
      inputs.push_back(grid[s]);
      grads.push_back(std::move(g));
    }
  };
  add_branch(out.fusion, uni, br.fusion);
  add_branch(out.visible, vis, br.visible);
  add_branch(out.thermal, th, br.thermal);
  auto add_seg = [&](const Var<T>& logits, const std::vector<std::vector<Annotation>>& lists, double& term) {
    if (!logits) return;
    auto sl = segmentation_loss(logits, lists);
    term = sl.value;
    for (auto& g : sl.grad.vec()) g = static_cast<T>(w.seg * g);
    inputs.push_back(logits);
    grads.push_back(std::move(sl.grad));
  };
  add_seg(out.seg_visible, vis, br.seg_visible);
  add_seg(out.seg_thermal, th, br.seg_thermal);
  br.total = br.recombine(w);
  if (!std::isfinite(br.total)) throw DivergenceError("total loss is not finite");
  return {ops::external_scalar(std::move(inputs), static_cast<T>(br.total), std::move(grads)), br};
}

}  // namespace rgbt

#endif  // RGBT_SUPERVISION_HPP_
