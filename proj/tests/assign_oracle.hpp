// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Brute-force target assignment: scan every cell of every scale, keep the
// anchors under the ratio limit, resolve shared slots by the tie-break.

#ifndef RGBT_TESTS_ASSIGN_ORACLE_HPP_
#define RGBT_TESTS_ASSIGN_ORACLE_HPP_

#include <algorithm>
#include <random>
#include <tuple>
#include <vector>

#include "rgbt/supervision.hpp"

namespace rgbt::testing {

inline std::vector<Annotation> random_boxes(std::mt19937_64& rng, int n, int num_classes) {
  std::uniform_real_distribution<double> pos(0.0, 1.0), size(0.05, 0.9);
  std::uniform_int_distribution<int> cls(0, num_classes - 1);
  std::vector<Annotation> out;
  for (int i = 0; i < n; ++i) out.push_back({cls(rng), pos(rng), pos(rng), size(rng), size(rng)});
  return out;
}

// Every (box, scale, anchor, cell) candidate enumerated by scanning cells,
// then each slot resolved by the documented tie-break.
inline std::vector<TargetSlot> brute_force_assign(const std::vector<Annotation>& boxes, const NetworkConfig& cfg) {
  struct Cand {
    double score;
    int box;
    TargetSlot slot;
  };
  std::vector<Cand> cands;
  for (int i = 0; i < static_cast<int>(boxes.size()); ++i) {
    const auto& a = boxes[i];
    const double w = a.w * cfg.input_width, h = a.h * cfg.input_height;
    const double cx = a.cx * cfg.input_width, cy = a.cy * cfg.input_height;
    for (int s = 0; s < 3; ++s) {
      const int stride = NetworkConfig::kDetectionStrides[s];
      const int H = cfg.input_height / stride, W = cfg.input_width / stride;
      for (int gy = 0; gy < H; ++gy)
        for (int gx = 0; gx < W; ++gx) {
          const bool in_x = (cx >= gx * stride || gx == 0) && (cx < (gx + 1) * stride || gx == W - 1);
          const bool in_y = (cy >= gy * stride || gy == 0) && (cy < (gy + 1) * stride || gy == H - 1);
          if (!in_x || !in_y) continue;
          for (int k = 0; k < 3; ++k) {
            const auto an = cfg.anchors[s * 3 + k];
            const double r = std::max(std::max(w / an.w, an.w / w), std::max(h / an.h, an.h / h));
            if (r >= 4.0) continue;
            const double inter = std::min(w, an.w) * std::min(h, an.h);
            const double score = inter / (w * h + an.w * an.h - inter);
            cands.push_back({score, i,
                             {s, k, gy, gx, i, a.class_id, cx / stride - gx, cy / stride - gy, w / stride,
                              h / stride, an.w / stride, an.h / stride}});
          }
        }
    }
  }
  std::vector<TargetSlot> out;
  for (const auto& c : cands) {
    bool best = true;
    for (const auto& o : cands) {
      if (std::tie(o.slot.scale, o.slot.anchor, o.slot.gy, o.slot.gx) !=
          std::tie(c.slot.scale, c.slot.anchor, c.slot.gy, c.slot.gx))
        continue;
      if (o.score > c.score || (o.score == c.score && o.box < c.box)) best = false;
    }
    if (best) out.push_back(c.slot);
  }
  std::sort(out.begin(), out.end(), [](const TargetSlot& a, const TargetSlot& b) {
    return std::tie(a.scale, a.anchor, a.gy, a.gx) < std::tie(b.scale, b.anchor, b.gy, b.gx);
  });
  return out;
}

}  // namespace rgbt::testing

#endif  // RGBT_TESTS_ASSIGN_ORACLE_HPP_
