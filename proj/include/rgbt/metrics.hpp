// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Detection evaluation: log-average miss rate over an FPPI range and
// 101-point interpolated average precision.
//
// Matching is class-aware and greedy in descending score order. The miss
// rate pools every class; AP is computed per class and averaged over the
// classes that have ground truth.

#ifndef RGBT_METRICS_HPP_
#define RGBT_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rgbt/box.hpp"
#include "rgbt/fusion.hpp"

namespace rgbt {

struct GtBox {
  int class_id = 0;
  Box box;
  bool operator==(const GtBox&) const = default;
};

/// Detections and ground truth of one image.
struct ImageResult {
  std::vector<Detection> dets;
  std::vector<GtBox> gts;
};

struct EvalConfig {
  double iou_match = 0.5;
  double fppi_min = 1e-2;
  double fppi_max = 1.0;
  int fppi_points = 9;
  std::vector<double> map_ious{0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
  double miss_rate_floor = 1e-10;
  int num_classes = 3;

  /// Log-spaced reference FPPI values, both ends included.
  std::vector<double> fppi_samples() const {
    std::vector<double> out;
    const double a = std::log10(fppi_min), b = std::log10(fppi_max);
    for (int i = 0; i < fppi_points; ++i)
      out.push_back(std::pow(10.0, fppi_points == 1 ? a : a + (b - a) * i / (fppi_points - 1)));
    return out;
  }

  void validate() const {
    if (!(iou_match > 0 && iou_match < 1)) throw ConfigError("iou_match must lie in (0, 1)");
    if (!(fppi_min > 0 && fppi_min < fppi_max) || fppi_points < 2)
      throw ConfigError("FPPI range must be positive and increasing with at least 2 points");
    for (double t : map_ious)
      if (!(t > 0 && t < 1)) throw ConfigError("mAP IoU thresholds must lie in (0, 1)");
    if (num_classes <= 0) throw ConfigError("num_classes must be positive");
  }
};

struct MatchResult {
  std::vector<bool> tp;          // per detection
  std::vector<bool> gt_matched;  // per ground-truth box
};

/// Each detection, in the given order, claims the unmatched same-class
/// ground truth with the highest IoU >= iou_match (ties: lower index).
inline MatchResult match_detections(const std::vector<Detection>& dets, const std::vector<GtBox>& gts,
                                    double iou_match) {
  MatchResult r{std::vector<bool>(dets.size(), false), std::vector<bool>(gts.size(), false)};
  for (std::size_t i = 0; i < dets.size(); ++i) {
    int best = -1;
    double best_iou = iou_match;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (r.gt_matched[j] || gts[j].class_id != dets[i].class_id) continue;
      const double o = iou(dets[i].box, gts[j].box);
      if (o >= best_iou && (best < 0 || o > best_iou)) {
        best = static_cast<int>(j);
        best_iou = o;
      }
    }
    if (best >= 0) {
      r.tp[i] = true;
      r.gt_matched[best] = true;
    }
  }
  return r;
}

struct CurvePoint {
  double fppi = 0;
  double miss_rate = 1;
  bool operator==(const CurvePoint&) const = default;
};

namespace detail {

/// Detections of one image in descending score order (stable).
inline std::vector<Detection> sorted_dets(const std::vector<Detection>& dets) {
  std::vector<Detection> out;
  for (std::size_t i : score_order(dets)) out.push_back(dets[i]);
  return out;
}

inline std::size_t count_gts(const std::vector<ImageResult>& images, int class_id) {
  std::size_t n = 0;
  for (const auto& im : images)
    for (const auto& g : im.gts)
      if (class_id < 0 || g.class_id == class_id) ++n;
  return n;
}

}  // namespace detail

/// (FPPI, miss rate) after each distinct score threshold, starting from the
/// empty detection set at (0, 1).
inline std::vector<CurvePoint> miss_rate_sweep(const std::vector<ImageResult>& images, double iou_match) {
  if (images.empty()) throw Error("miss rate is undefined for an empty image set");
  const std::size_t total_gt = detail::count_gts(images, -1);
  if (total_gt == 0) throw Error("miss rate is undefined without ground truth");
  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> all;
  for (const auto& im : images) {
    const auto dets = detail::sorted_dets(im.dets);
    const auto m = match_detections(dets, im.gts, iou_match);
    for (std::size_t i = 0; i < dets.size(); ++i) all.push_back({dets[i].score, m.tp[i]});
  }
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  std::vector<CurvePoint> curve{{0.0, 1.0}};
  std::size_t tp = 0, fp = 0;
  const double n = static_cast<double>(images.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    (all[i].tp ? tp : fp) += 1;
    if (i + 1 < all.size() && all[i + 1].score == all[i].score) continue;
    curve.push_back({static_cast<double>(fp) / n, 1.0 - static_cast<double>(tp) / static_cast<double>(total_gt)});
  }
  return curve;
}

/// Miss rate at each reference FPPI: the point with the largest FPPI not
/// above the reference (lowest miss rate among equal FPPI), 1 if none.
inline std::vector<CurvePoint> sample_curve(const std::vector<CurvePoint>& sweep, const EvalConfig& cfg) {
  std::vector<CurvePoint> out;
  for (double ref : cfg.fppi_samples()) {
    CurvePoint pick{ref, 1.0};
    double best_fppi = -1;
    for (const auto& p : sweep) {
      if (p.fppi > ref) continue;
      if (p.fppi > best_fppi || (p.fppi == best_fppi && p.miss_rate < pick.miss_rate)) {
        best_fppi = p.fppi;
        pick.miss_rate = p.miss_rate;
      }
    }
    out.push_back(pick);
  }
  return out;
}

inline std::vector<CurvePoint> miss_rate_curve(const std::vector<ImageResult>& images, const EvalConfig& cfg) {
  return sample_curve(miss_rate_sweep(images, cfg.iou_match), cfg);
}

/// exp(mean(ln(max(mr, floor)))) * 100.
inline double log_average_miss_rate(const std::vector<CurvePoint>& samples, double floor = 1e-10) {
  if (samples.empty()) throw Error("log-average miss rate needs at least one sample");
  double s = 0;
  for (const auto& p : samples) s += std::log(std::max(p.miss_rate, floor));
  return std::exp(s / static_cast<double>(samples.size())) * 100.0;
}

/// 101-point interpolated AP of one class; NaN when the class has no
/// ground truth.
inline double average_precision(const std::vector<ImageResult>& images, int class_id, double iou_thresh) {
  const std::size_t n_gt = detail::count_gts(images, class_id);
  if (n_gt == 0) return std::nan("");
  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> all;
  for (const auto& im : images) {
    std::vector<Detection> dets;
    std::vector<GtBox> gts;
    for (const auto& d : im.dets)
      if (d.class_id == class_id) dets.push_back(d);
    for (const auto& g : im.gts)
      if (g.class_id == class_id) gts.push_back(g);
    dets = detail::sorted_dets(dets);
    const auto m = match_detections(dets, gts, iou_thresh);
    for (std::size_t i = 0; i < dets.size(); ++i) all.push_back({dets[i].score, m.tp[i]});
  }
  std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  std::vector<double> precision(all.size()), recall(all.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    tp += all[i].tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  // Monotone envelope from the right.
  for (std::size_t i = all.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0;
  std::size_t k = 0;
  for (int r = 0; r <= 100; ++r) {
    const double level = r / 100.0;
    while (k < recall.size() && recall[k] < level) ++k;
    if (k < recall.size()) sum += precision[k];
  }
  return sum / 101.0;
}

struct ModalityMetrics {
  double mr2 = 100;
  double map50 = 0;
  double map = 0;
  std::vector<double> ap50;  // per class, NaN when excluded
  std::vector<int> excluded_classes;
  std::vector<CurvePoint> mr_samples;
  std::vector<CurvePoint> mr_sweep;
};

inline ModalityMetrics evaluate(const std::vector<ImageResult>& images, const EvalConfig& cfg) {
  cfg.validate();
  ModalityMetrics m;
  m.mr_sweep = miss_rate_sweep(images, cfg.iou_match);
  m.mr_samples = sample_curve(m.mr_sweep, cfg);
  m.mr2 = log_average_miss_rate(m.mr_samples, cfg.miss_rate_floor);
  auto mean_ap = [&](double t, std::vector<double>* per_class) {
    double s = 0;
    int n = 0;
    for (int c = 0; c < cfg.num_classes; ++c) {
      const double ap = average_precision(images, c, t);
      if (per_class) per_class->push_back(ap);
      if (std::isnan(ap)) continue;
      s += ap;
      ++n;
    }
    return n ? s / n : 0.0;
  };
  m.map50 = mean_ap(0.5, &m.ap50);
  for (int c = 0; c < cfg.num_classes; ++c)
    if (std::isnan(m.ap50[c])) m.excluded_classes.push_back(c);
  double s = 0;
  for (double t : cfg.map_ious) s += mean_ap(t, nullptr);
  m.map = cfg.map_ious.empty() ? 0.0 : s / static_cast<double>(cfg.map_ious.size());
  return m;
}

/// Headline numbers are the arithmetic mean of the visible-GT and
/// thermal-GT evaluations of the same detections.
struct EvalReport {
  ModalityMetrics visible, thermal;
  double mr2 = 100, map50 = 0, map = 0;
};

inline EvalReport dual_modality_report(ModalityMetrics visible, ModalityMetrics thermal) {
  EvalReport r;
  r.mr2 = 0.5 * (visible.mr2 + thermal.mr2);
  r.map50 = 0.5 * (visible.map50 + thermal.map50);
  r.map = 0.5 * (visible.map + thermal.map);
  r.visible = std::move(visible);
  r.thermal = std::move(thermal);
  return r;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join_doubles(const std::vector<double>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + fmt(xs[i]);
  return s;
}

}  // namespace detail

/// `key: value` lines.
inline std::string format_report(const EvalReport& r, const std::string& extra = "") {
  std::string out;
  auto line = [&](const std::string& k, const std::string& v) { out += k + ": " + v + "\n"; };
  line("mr2", detail::fmt(r.mr2));
  line("map50", detail::fmt(r.map50));
  line("map", detail::fmt(r.map));
  for (const auto* m : {&r.visible, &r.thermal}) {
    const std::string p = m == &r.visible ? "visible." : "thermal.";
    line(p + "mr2", detail::fmt(m->mr2));
    line(p + "map50", detail::fmt(m->map50));
    line(p + "map", detail::fmt(m->map));
    line(p + "ap50_per_class", detail::join_doubles(m->ap50));
    std::string ex;
    for (std::size_t i = 0; i < m->excluded_classes.size(); ++i) ex += (i ? "," : "") + std::to_string(m->excluded_classes[i]);
    line(p + "excluded_classes", ex.empty() ? "none" : ex);
    std::vector<double> mr;
    for (const auto& s : m->mr_samples) mr.push_back(s.miss_rate);
    line(p + "miss_rate_at_fppi", detail::join_doubles(mr));
  }
  return out + extra;
}

/// Reads the numeric headline keys back from a report.
inline std::map<std::string, double> parse_report(const std::string& text) {
  std::map<std::string, double> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto c = line.find(':');
    if (c == std::string::npos) continue;
    const std::string key = kv::trim(line.substr(0, c)), value = kv::trim(line.substr(c + 1));
    char* end = nullptr;
    const double v = std::strtod(value.c_str(), &end);
    if (end && *end == '\0' && !value.empty()) out[key] = v;
  }
  return out;
}

/// Two-column `fppi miss_rate` sweep for plotting.
inline std::string format_curve(const std::vector<CurvePoint>& curve) {
  std::string out = "# fppi miss_rate\n";
  for (const auto& p : curve) out += detail::fmt(p.fppi) + " " + detail::fmt(p.miss_rate) + "\n";
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace rgbt

#endif  // RGBT_METRICS_HPP_
