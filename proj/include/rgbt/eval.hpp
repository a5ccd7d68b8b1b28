// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Test-split evaluation: batched prediction, detection files in image pixel
// coordinates, and the metric report against visible, thermal and union
// ground truth.

#ifndef RGBT_EVAL_HPP_
#define RGBT_EVAL_HPP_

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "rgbt/data.hpp"
#include "rgbt/fusion.hpp"
#include "rgbt/metrics.hpp"
#include "rgbt/network.hpp"

namespace rgbt {

enum class GtSet { kVisible, kThermal, kUnion };

struct DetectionRun {
  std::vector<std::vector<Detection>> detections;  // per pair, image pixels
  double seconds = 0;
  double images_per_second = 0;
};

/// Runs `predict` over `pairs` and maps boxes from network input pixels to
/// image pixels. Detections are canonicalized, i.e. exactly what a
/// detection file stores.
template <typename T>
DetectionRun detect(const Network<T>& model, const std::vector<ImagePair>& pairs, const PredictOptions& opt,
                    int batch_size = 8) {
  const auto& cfg = model.config();
  DetectionRun run;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(pairs.size(), start + batch_size); ++i) idx.push_back(i);
    const auto batch = make_batch<T>(pairs, idx, cfg.input_height, cfg.input_width);
    auto dets = predict(model, batch.visible, batch.thermal, opt);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& img = pairs[idx[b]].visible;
      const double sx = static_cast<double>(img.width) / cfg.input_width;
      const double sy = static_cast<double>(img.height) / cfg.input_height;
      for (auto& d : dets[b]) d.box = {d.box.x1 * sx, d.box.y1 * sy, d.box.x2 * sx, d.box.y2 * sy};
      run.detections.push_back(canonicalize(dets[b]));
    }
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.images_per_second = run.seconds > 0 ? static_cast<double>(pairs.size()) / run.seconds : 0.0;
  return run;
}

inline std::vector<ImageResult> image_results(const std::vector<std::vector<Detection>>& dets,
                                              const std::vector<ImagePair>& pairs, GtSet which) {
  if (dets.size() != pairs.size())
    throw IntegrityError("have detections for " + std::to_string(dets.size()) + " images, expected " +
                         std::to_string(pairs.size()));
  std::vector<ImageResult> out(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& a = pairs[i].annotations;
    const auto& list = which == GtSet::kVisible ? a.visible : which == GtSet::kThermal ? a.thermal : a.union_set;
    out[i].dets = dets[i];
    for (const auto& g : list) out[i].gts.push_back({g.class_id, g.pixel_box(pairs[i].visible.width, pairs[i].visible.height)});
  }
  return out;
}

struct FullReport {
  EvalReport dual;  // mean over visible and thermal ground truth
  ModalityMetrics union_set;
};

inline FullReport evaluate_detections(const std::vector<std::vector<Detection>>& dets,
                                      const std::vector<ImagePair>& pairs, const EvalConfig& cfg) {
  FullReport r;
  r.dual = dual_modality_report(evaluate(image_results(dets, pairs, GtSet::kVisible), cfg),
                                evaluate(image_results(dets, pairs, GtSet::kThermal), cfg));
  r.union_set = evaluate(image_results(dets, pairs, GtSet::kUnion), cfg);
  return r;
}

inline std::string format_full_report(const FullReport& r, const std::string& extra = "") {
  const auto& u = r.union_set;
  std::string ex;
  for (std::size_t i = 0; i < u.excluded_classes.size(); ++i) ex += (i ? "," : "") + std::to_string(u.excluded_classes[i]);
  return format_report(r.dual, "union.mr2: " + detail::fmt(u.mr2) + "\nunion.map50: " + detail::fmt(u.map50) +
                                   "\nunion.map: " + detail::fmt(u.map) +
                                   "\nunion.ap50_per_class: " + detail::join_doubles(u.ap50) +
                                   "\nunion.excluded_classes: " + (ex.empty() ? "none" : ex) + "\n" + extra);
}

inline void write_detection_dir(const fs::path& dir, const std::vector<ImagePair>& pairs,
                                const std::vector<std::vector<Detection>>& dets) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < pairs.size(); ++i) write_detections(dir / (pairs[i].stem + ".txt"), dets.at(i));
}

inline std::vector<std::vector<Detection>> read_detection_dir(const fs::path& dir,
                                                              const std::vector<ImagePair>& pairs) {
  std::vector<std::vector<Detection>> out;
  for (const auto& p : pairs) {
    const fs::path f = dir / (p.stem + ".txt");
    if (!fs::exists(f)) throw IntegrityError("missing detection file " + f.string());
    out.push_back(read_detections(f));
  }
  return out;
}

}  // namespace rgbt

#endif  // RGBT_EVAL_HPP_
