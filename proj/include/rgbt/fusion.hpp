// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Decision-level fusion of the fusion, visible and thermal branch
// predictions, box decoding, NMS and the per-image detection file format.
//
//   p = (l1 p_f + l2 p_v + l3 p_t) / (l1 + l2 + l3)
//
// applied per anchor slot to objectness and class probabilities and to the
// decoded pixel boxes.

#ifndef RGBT_FUSION_HPP_
#define RGBT_FUSION_HPP_

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rgbt/box.hpp"
#include "rgbt/network.hpp"
#include "rgbt/supervision.hpp"

namespace rgbt {

struct FusionWeights {
  double fusion = 0.5;
  double visible = 0.25;
  double thermal = 0.25;

  double sum() const { return fusion + visible + thermal; }
  void validate() const {
    if (fusion < 0 || visible < 0 || thermal < 0) throw ConfigError("fusion weights must be non-negative");
    if (!(sum() > 0)) throw ConfigError("fusion weights must not all be zero");
  }
};

struct Detection {
  int class_id = 0;
  double score = 0;
  Box box;
  bool operator==(const Detection&) const = default;
};

/// Activated grid: per scale a (B, A, H, W, 5 + nc) tensor holding the
/// decoded pixel box (cx, cy, w, h), the objectness probability and the
/// class probabilities.
using ProbabilityGrid = std::vector<Tensor<double>>;

template <typename T>
ProbabilityGrid activate(const std::vector<Tensor<T>>& grid, const NetworkConfig& cfg) {
  if (grid.size() != 3) throw ShapeError("detection grid needs 3 scales");
  ProbabilityGrid out;
  const int K = cfg.outputs_per_anchor();
  for (int s = 0; s < 3; ++s) {
    const Tensor<T>& g = grid[s];
    const Shape& sh = g.shape();
    if (sh.size() != 5 || sh[1] != NetworkConfig::kAnchorsPerScale || sh[2] != cfg.grid_height(s) ||
        sh[3] != cfg.grid_width(s) || sh[4] != K)
      throw ShapeError("grid scale " + std::to_string(s) + " has shape " + shape_str(sh));
    Tensor<double> p(sh);
    const double stride = NetworkConfig::kDetectionStrides[s];
    for (int b = 0; b < sh[0]; ++b)
      for (int a = 0; a < sh[1]; ++a) {
        const AnchorShape& an = cfg.anchor(s, a);
        for (int y = 0; y < sh[2]; ++y)
          for (int x = 0; x < sh[3]; ++x) {
            const T* in = &g.at(b, a, y, x, 0);
            double* o = &p.at(b, a, y, x, 0);
            const auto d = decode_offsets<double>(in[0], in[1], in[2], in[3], an.w, an.h);
            o[0] = (d[0] + x) * stride;
            o[1] = (d[1] + y) * stride;
            o[2] = d[2];
            o[3] = d[3];
            for (int k = 4; k < K; ++k) o[k] = detail::sigmoid_s<double>(in[k]);
          }
      }
    out.push_back(std::move(p));
  }
  return out;
}

template <typename T>
ProbabilityGrid activate(const std::vector<Var<T>>& grid, const NetworkConfig& cfg) {
  std::vector<Tensor<T>> values;
  for (const auto& v : grid) values.push_back(v->value);
  return activate(values, cfg);
}

/// Slot-wise weighted average of three activated grids. With
/// `average_boxes` false the fusion branch's boxes are kept unchanged and
/// only the probabilities are averaged.
inline ProbabilityGrid fuse_grids(const ProbabilityGrid& f, const ProbabilityGrid& v, const ProbabilityGrid& t,
                                  const FusionWeights& w, bool average_boxes = true) {
  w.validate();
  if (f.size() != v.size() || f.size() != t.size()) throw ShapeError("fused grids differ in scale count");
  const double inv = 1.0 / w.sum();
  ProbabilityGrid out;
  for (std::size_t s = 0; s < f.size(); ++s) {
    if (f[s].shape() != v[s].shape() || f[s].shape() != t[s].shape())
      throw ShapeError("fused grids differ at scale " + std::to_string(s) + ": " + shape_str(f[s].shape()) + ", " +
                       shape_str(v[s].shape()) + ", " + shape_str(t[s].shape()));
    const int K = f[s].shape().back();
    Tensor<double> o(f[s].shape());
    for (std::size_t i = 0; i < o.size(); ++i) {
      if (!average_boxes && static_cast<int>(i % K) < 4) {
        o[i] = f[s][i];
        continue;
      }
      o[i] = (w.fusion * f[s][i] + w.visible * v[s][i] + w.thermal * t[s][i]) * inv;
    }
    out.push_back(std::move(o));
  }
  return out;
}

/// Inverse of `activate`: logits and offsets that decode to the given
/// probabilities and boxes (probabilities clamped away from 0 and 1).
inline std::vector<Tensor<double>> encode_grid(const ProbabilityGrid& p, const NetworkConfig& cfg) {
  std::vector<Tensor<double>> out;
  constexpr double lo = 1e-12;
  for (int s = 0; s < static_cast<int>(p.size()); ++s) {
    const Shape& sh = p[s].shape();
    const int K = sh[4];
    const double stride = NetworkConfig::kDetectionStrides[s];
    Tensor<double> g(sh);
    for (int b = 0; b < sh[0]; ++b)
      for (int a = 0; a < sh[1]; ++a) {
        const AnchorShape& an = cfg.anchor(s, a);
        for (int y = 0; y < sh[2]; ++y)
          for (int x = 0; x < sh[3]; ++x) {
            const double* in = &p[s].at(b, a, y, x, 0);
            double* o = &g.at(b, a, y, x, 0);
            const auto e = encode_offsets(in[0] / stride - x, in[1] / stride - y, in[2], in[3], an.w, an.h);
            std::copy(e.begin(), e.end(), o);
            for (int k = 4; k < K; ++k) o[k] = detail::logit(std::clamp(in[k], lo, 1.0 - lo));
          }
      }
    out.push_back(std::move(g));
  }
  return out;
}

/// Detections of image `b`: best class per slot, score = p_obj * p_cls,
/// kept when score >= score_thresh, boxes clipped to the image.
inline std::vector<Detection> decode_grid(const ProbabilityGrid& p, const NetworkConfig& cfg, int b,
                                          double score_thresh) {
  std::vector<Detection> out;
  for (const auto& g : p) {
    const Shape& sh = g.shape();
    if (b < 0 || b >= sh[0]) throw BoundsError("image index " + std::to_string(b) + " out of range");
    const int K = sh[4];
    for (int a = 0; a < sh[1]; ++a)
      for (int y = 0; y < sh[2]; ++y)
        for (int x = 0; x < sh[3]; ++x) {
          const double* s = &g.at(b, a, y, x, 0);
          int best = 0;
          for (int c = 1; c < K - 5; ++c)
            if (s[5 + c] > s[5 + best]) best = c;
          const double score = std::clamp(s[4] * s[5 + best], 0.0, 1.0);
          if (score < score_thresh) continue;
          Box box = Box::from_center(s[0], s[1], s[2], s[3]);
          box.x1 = std::clamp(box.x1, 0.0, static_cast<double>(cfg.input_width));
          box.x2 = std::clamp(box.x2, 0.0, static_cast<double>(cfg.input_width));
          box.y1 = std::clamp(box.y1, 0.0, static_cast<double>(cfg.input_height));
          box.y2 = std::clamp(box.y2, 0.0, static_cast<double>(cfg.input_height));
          // Sub-pixel slivers would not survive the detection file format.
          if (!(box.width() >= 1e-3) || !(box.height() >= 1e-3)) continue;
          out.push_back({best, score, box});
        }
  }
  return out;
}

/// Indices of `dets` sorted by descending score, ties by input index.
inline std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> idx(dets.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return idx;
}

/// Per-class greedy suppression. Survivors come out in descending score
/// order (ties by input index).
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thresh = 0.5,
                                  std::size_t max_det = 0) {
  std::vector<Detection> kept;
  for (std::size_t i : score_order(dets)) {
    bool suppressed = false;
    for (const auto& k : kept)
      if (k.class_id == dets[i].class_id && iou(k.box, dets[i].box) > iou_thresh) {
        suppressed = true;
        break;
      }
    if (suppressed) continue;
    kept.push_back(dets[i]);
    if (max_det && kept.size() == max_det) break;
  }
  return kept;
}

/// Alternative fusion operand: the three decoded lists with lambda-scaled
/// scores, merged and suppressed together.
inline std::vector<Detection> fuse_detection_lists(const std::vector<Detection>& f, const std::vector<Detection>& v,
                                                   const std::vector<Detection>& t, const FusionWeights& w,
                                                   double iou_thresh = 0.5, std::size_t max_det = 0) {
  w.validate();
  std::vector<Detection> all;
  auto add = [&](const std::vector<Detection>& ds, double lambda) {
    for (auto d : ds) {
      d.score = std::min(1.0, d.score * lambda);
      all.push_back(d);
    }
  };
  add(f, w.fusion);
  add(v, w.visible);
  add(t, w.thermal);
  return nms(all, iou_thresh, max_det);
}

enum class FusionMode { kSlot, kList };

struct PredictOptions {
  FusionWeights weights;
  FusionMode mode = FusionMode::kSlot;
  bool average_boxes = true;
  double score_thresh = 0.001;
  double iou_thresh = 0.5;
  std::size_t max_det = 300;
};

/// Fused detections per image of an activated output bundle.
inline std::vector<std::vector<Detection>> postprocess(const ProbabilityGrid& f, const ProbabilityGrid* v,
                                                       const ProbabilityGrid* t, const NetworkConfig& cfg,
                                                       const PredictOptions& opt) {
  const int batch = f.at(0).shape()[0];
  std::vector<std::vector<Detection>> out(batch);
  if (!v || !t) {
    for (int b = 0; b < batch; ++b)
      out[b] = nms(decode_grid(f, cfg, b, opt.score_thresh), opt.iou_thresh, opt.max_det);
    return out;
  }
  if (opt.mode == FusionMode::kSlot) {
    const auto fused = fuse_grids(f, *v, *t, opt.weights, opt.average_boxes);
    for (int b = 0; b < batch; ++b)
      out[b] = nms(decode_grid(fused, cfg, b, opt.score_thresh), opt.iou_thresh, opt.max_det);
    return out;
  }
  for (int b = 0; b < batch; ++b) {
    // The score threshold applies after lambda scaling.
    auto all = [&](const ProbabilityGrid& g) { return decode_grid(g, cfg, b, 0.0); };
    auto merged = fuse_detection_lists(all(f), all(*v), all(*t), opt.weights, opt.iou_thresh, 0);
    std::vector<Detection> kept;
    for (const auto& d : merged)
      if (d.score >= opt.score_thresh && (!opt.max_det || kept.size() < opt.max_det)) kept.push_back(d);
    out[b] = std::move(kept);
  }
  return out;
}

/// forward -> fuse -> decode -> NMS for a batch of image pairs. Single-branch
/// models use the fusion branch alone.
template <typename T>
std::vector<std::vector<Detection>> predict(const Network<T>& model, const Tensor<T>& visible,
                                            const Tensor<T>& thermal, const PredictOptions& opt = {}) {
  const auto out = model.infer(visible, thermal);
  const auto& cfg = model.config();
  const auto f = activate(out.fusion, cfg);
  if (out.visible.empty()) return postprocess(f, nullptr, nullptr, cfg, opt);
  const auto v = activate(out.visible, cfg), t = activate(out.thermal, cfg);
  return postprocess(f, &v, &t, cfg, opt);
}

// ---------------------------------------------------------------------------
// Detection files: one line per detection, `class_id score x1 y1 x2 y2`.

inline std::string format_detections(const std::vector<Detection>& dets) {
  std::string out;
  char line[160];
  for (const auto& d : dets) {
    std::snprintf(line, sizeof line, "%d %.9f %.6f %.6f %.6f %.6f\n", d.class_id, d.score, d.box.x1, d.box.y1,
                  d.box.x2, d.box.y2);
    out += line;
  }
  return out;
}

inline std::vector<Detection> parse_detections(const std::string& text, const std::string& origin) {
  std::vector<Detection> out;
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Detection d;
    std::string extra;
    if (!(ls >> d.class_id >> d.score >> d.box.x1 >> d.box.y1 >> d.box.x2 >> d.box.y2) || (ls >> extra))
      throw IntegrityError(origin + ":" + std::to_string(n) + ": expected 'class_id score x1 y1 x2 y2'");
    if (d.class_id < 0 || !(d.score >= 0 && d.score <= 1) || !(d.box.x1 < d.box.x2) || !(d.box.y1 < d.box.y2))
      throw IntegrityError(origin + ":" + std::to_string(n) + ": invalid detection");
    out.push_back(d);
  }
  return out;
}

/// Round trip through the file format, so live results and results read back
/// from disk are identical.
inline std::vector<Detection> canonicalize(const std::vector<Detection>& dets) {
  return parse_detections(format_detections(dets), "<memory>");
}

inline void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << format_detections(dets);
  if (!os) throw IoError("write failed: " + path.string());
}

inline std::vector<Detection> read_detections(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_detections(ss.str(), path.string());
}

}  // namespace rgbt

#endif  // RGBT_FUSION_HPP_
