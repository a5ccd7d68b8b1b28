// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic paired visible/thermal scenes and the on-disk dataset layout:
//
//   root/images/visible/<stem>.png      8-bit RGB
//   root/images/thermal/<stem>.png      8-bit gray
//   root/annotations/{visible,thermal,union}/<stem>.txt
//                                       `class_id cx cy w h`, normalized
//   root/scenes/<stem>.txt              optional per-image scene record
//   root/{train,test}.txt               one stem per line
//   root/dataset.meta                   generator settings and anchors
//
// Objects are circles (class 0), squares (1) and triangles (2). Each one is
// visible in both modalities or in only one; thermal copies are shifted by
// a per-object offset.

#ifndef RGBT_DATA_HPP_
#define RGBT_DATA_HPP_

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rgbt/detector_types.hpp"
#include "rgbt/kv.hpp"
#include "rgbt/supervision.hpp"
#include "rgbt/tensor.hpp"

namespace rgbt {

namespace fs = std::filesystem;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// ---------------------------------------------------------------------------
// Images and PNG I/O.

/// 8-bit interleaved image, rows top to bottom.
struct Image {
  int width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, fill) {}

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

inline void write_png(const fs::path& path, const Image& img) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, img.pixels.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + png.message);
}

/// Reads any PNG, converting to `channels` (1 = gray, 3 = RGB).
inline Image read_png(const fs::path& path, int channels) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str()))
    throw IntegrityError("cannot read PNG " + path.string() + ": " + png.message);
  png.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image img(static_cast<int>(png.width), static_cast<int>(png.height), channels);
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr))
    throw IntegrityError("cannot decode PNG " + path.string() + ": " + png.message);
  return img;
}

inline double intensity_std(const Image& img) {
  double s = 0, s2 = 0;
  for (auto p : img.pixels) {
    s += p;
    s2 += static_cast<double>(p) * p;
  }
  const double n = static_cast<double>(img.pixels.size());
  return std::sqrt(std::max(0.0, s2 / n - (s / n) * (s / n)));
}

// ---------------------------------------------------------------------------
// Annotation files.

inline std::string format_annotations(const std::vector<Annotation>& anns) {
  std::string out;
  char line[128];
  for (const auto& a : anns) {
    std::snprintf(line, sizeof line, "%d %.6f %.6f %.6f %.6f\n", a.class_id, a.cx, a.cy, a.w, a.h);
    out += line;
  }
  return out;
}

inline std::vector<Annotation> parse_annotations(const std::string& text, const std::string& origin,
                                                 int num_classes) {
  std::vector<Annotation> out;
  std::istringstream is(text);
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Annotation a;
    std::string extra;
    if (!(ls >> a.class_id >> a.cx >> a.cy >> a.w >> a.h) || (ls >> extra))
      throw IntegrityError(origin + ":" + std::to_string(n) + ": expected 'class_id cx cy w h'");
    if (!a.valid(num_classes))
      throw IntegrityError(origin + ":" + std::to_string(n) + ": annotation out of range");
    out.push_back(a);
  }
  return out;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IntegrityError("missing file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Scene generation.

enum class Visibility { kBoth, kVisibleOnly, kThermalOnly };

inline const char* visibility_name(Visibility v) {
  switch (v) {
    case Visibility::kBoth:
      return "both";
    case Visibility::kVisibleOnly:
      return "visible";
    case Visibility::kThermalOnly:
      return "thermal";
  }
  return "?";
}

struct SceneSpec {
  int width = 256;
  int height = 256;
  int min_objects = 1;
  int max_objects = 6;
  /// Object side length in pixels.
  double min_size = 24;
  double max_size = 64;
  double p_both = 0.7;
  double p_visible_only = 0.15;
  double p_thermal_only = 0.15;
  double misalignment_max_px = 4;
  double night_fraction = 0.4;
  std::uint64_t seed = 0;

  static constexpr int kNumClasses = 3;

  void validate() const {
    if (width <= 0 || height <= 0) throw ConfigError("image size must be positive");
    if (min_objects < 0 || max_objects < min_objects) throw ConfigError("object count range is invalid");
    if (!(min_size > 0) || max_size < min_size) throw ConfigError("object size range is invalid");
    if (p_both < 0 || p_visible_only < 0 || p_thermal_only < 0 ||
        std::abs(p_both + p_visible_only + p_thermal_only - 1.0) > 1e-9)
      throw ConfigError("visibility probabilities must be non-negative and sum to 1");
    if (misalignment_max_px < 0 || misalignment_max_px > 8)
      throw ConfigError("misalignment must lie in [0, 8] pixels");
    if (night_fraction < 0 || night_fraction > 1) throw ConfigError("night fraction must lie in [0, 1]");
    if (max_size + 2 * misalignment_max_px >= std::min(width, height))
      throw ConfigError("objects do not fit in the image");
  }

  kv::Map to_map() const {
    kv::Map m;
    m["image_width"] = std::to_string(width);
    m["image_height"] = std::to_string(height);
    m["min_objects"] = std::to_string(min_objects);
    m["max_objects"] = std::to_string(max_objects);
    m["min_object_size"] = kv::format_double(min_size);
    m["max_object_size"] = kv::format_double(max_size);
    m["p_both"] = kv::format_double(p_both);
    m["p_visible_only"] = kv::format_double(p_visible_only);
    m["p_thermal_only"] = kv::format_double(p_thermal_only);
    m["misalignment_max_px"] = kv::format_double(misalignment_max_px);
    m["night_fraction"] = kv::format_double(night_fraction);
    m["data_seed"] = std::to_string(seed);
    return m;
  }

  static SceneSpec from_map(const kv::Map& m) {
    SceneSpec s;
    s.width = kv::get_int(m, "image_width");
    s.height = kv::get_int(m, "image_height");
    s.min_objects = kv::get_int(m, "min_objects");
    s.max_objects = kv::get_int(m, "max_objects");
    s.min_size = kv::get_double(m, "min_object_size");
    s.max_size = kv::get_double(m, "max_object_size");
    s.p_both = kv::get_double(m, "p_both");
    s.p_visible_only = kv::get_double(m, "p_visible_only");
    s.p_thermal_only = kv::get_double(m, "p_thermal_only");
    s.misalignment_max_px = kv::get_double(m, "misalignment_max_px");
    s.night_fraction = kv::get_double(m, "night_fraction");
    s.seed = std::stoull(kv::get(m, "data_seed"));
    return s;
  }
};

struct SceneObject {
  int class_id = 0;
  double cx = 0, cy = 0, size = 0;  // visible-frame pixels
  double dx = 0, dy = 0;            // thermal offset
  Visibility visibility = Visibility::kBoth;
  std::uint8_t color[3] = {0, 0, 0};
  std::uint8_t heat = 0;
};

struct SceneLayout {
  bool night = false;
  std::uint8_t background[3] = {0, 0, 0};
  std::uint8_t thermal_background = 0;
  std::vector<SceneObject> objects;
  std::uint64_t noise_seed = 0;
};

/// Layout of image `index`, drawn from its own stream seeded by seed ^ index.
inline SceneLayout sample_layout(const SceneSpec& spec, std::uint64_t index) {
  std::mt19937_64 rng(splitmix64(spec.seed ^ splitmix64(index)));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SceneLayout L;
  L.night = u(rng) < spec.night_fraction;
  for (auto& c : L.background) c = static_cast<std::uint8_t>(70 + 110 * u(rng));
  L.thermal_background = static_cast<std::uint8_t>(15 + 35 * u(rng));
  L.noise_seed = rng();
  const int n = std::uniform_int_distribution<int>(spec.min_objects, spec.max_objects)(rng);
  const double m = spec.misalignment_max_px;
  for (int i = 0; i < n; ++i) {
    SceneObject o;
    o.class_id = std::uniform_int_distribution<int>(0, SceneSpec::kNumClasses - 1)(rng);
    o.size = spec.min_size + (spec.max_size - spec.min_size) * u(rng);
    const double k = u(rng);
    o.visibility = k < spec.p_both                           ? Visibility::kBoth
                   : k < spec.p_both + spec.p_visible_only ? Visibility::kVisibleOnly
                                                             : Visibility::kThermalOnly;
    o.dx = m * (2 * u(rng) - 1);
    o.dy = m * (2 * u(rng) - 1);
    for (int c = 0; c < 3; ++c) {
      // Push each channel well away from the background.
      const double off = 60 + 60 * u(rng);
      const double v = L.background[c] + (u(rng) < 0.5 ? -off : off);
      o.color[c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    o.heat = static_cast<std::uint8_t>(150 + 100 * u(rng));
    // Rejection-sample a position whose padded box (covering the thermal
    // shift) stays inside the image and clear of earlier objects.
    const double half = o.size / 2 + m;
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      o.cx = half + (spec.width - 2 * half) * u(rng);
      o.cy = half + (spec.height - 2 * half) * u(rng);
      placed = true;
      for (const auto& p : L.objects) {
        const double gap = (o.size + p.size) / 2 + 2 * m + 4;
        if (std::abs(o.cx - p.cx) < gap && std::abs(o.cy - p.cy) < gap) {
          placed = false;
          break;
        }
      }
    }
    if (placed) L.objects.push_back(o);
  }
  return L;
}

namespace detail {

inline bool inside_shape(int class_id, double x, double y, double cx, double cy, double s) {
  const double h = s / 2;
  switch (class_id) {
    case 0:
      return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= h * h;
    case 1:
      return std::abs(x - cx) <= h && std::abs(y - cy) <= h;
    default: {
      const double top = cy - h;
      if (y < top || y > cy + h) return false;
      return std::abs(x - cx) <= (y - top) / 2;
    }
  }
}

/// Calls fn(y, x, coverage) for every pixel the shape touches, with 4x4
/// supersampled coverage.
template <typename Fn>
void rasterize(int class_id, double cx, double cy, double s, int width, int height, Fn&& fn) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - s / 2)) - 1);
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(cx + s / 2)) + 1);
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - s / 2)) - 1);
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(cy + s / 2)) + 1);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx)
          hits += inside_shape(class_id, x + (sx + 0.5) / 4, y + (sy + 0.5) / 4, cx, cy, s);
      if (hits) fn(y, x, hits / 16.0);
    }
}

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace detail

struct ImagePair {
  std::string stem;
  Image visible;
  Image thermal;
  AnnotationTriplet annotations;
  /// Present for generated data only.
  bool has_scene = false;
  bool night = false;
  std::vector<SceneObject> objects;
};

/// Renders a layout: colored anti-aliased shapes on a shaded background in
/// the visible image, warm blobs on a dark background in the thermal image.
/// Night scenes keep 30% of the visible contrast plus sensor noise.
inline ImagePair render_scene(const SceneSpec& spec, const SceneLayout& L, const std::string& stem = "") {
  const int W = spec.width, H = spec.height;
  std::mt19937_64 noise(L.noise_seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> vis(static_cast<std::size_t>(W) * H * 3), th(static_cast<std::size_t>(W) * H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double shade = 20.0 * (static_cast<double>(x) / W - 0.5) + 10.0 * (static_cast<double>(y) / H - 0.5);
      for (int c = 0; c < 3; ++c) vis[(static_cast<std::size_t>(y) * W + x) * 3 + c] = L.background[c] + shade;
      th[static_cast<std::size_t>(y) * W + x] = L.thermal_background + 8.0 * static_cast<double>(y) / H;
    }
  ImagePair pair;
  pair.stem = stem;
  pair.has_scene = true;
  pair.night = L.night;
  pair.objects = L.objects;
  for (const auto& o : L.objects) {
    const Annotation av{o.class_id, o.cx / W, o.cy / H, o.size / W, o.size / H};
    const Annotation at{o.class_id, (o.cx + o.dx) / W, (o.cy + o.dy) / H, o.size / W, o.size / H};
    if (o.visibility != Visibility::kThermalOnly) {
      detail::rasterize(o.class_id, o.cx, o.cy, o.size, W, H, [&](int y, int x, double a) {
        for (int c = 0; c < 3; ++c) {
          double& p = vis[(static_cast<std::size_t>(y) * W + x) * 3 + c];
          p = (1 - a) * p + a * o.color[c];
        }
      });
      pair.annotations.visible.push_back(av);
    }
    if (o.visibility != Visibility::kVisibleOnly) {
      detail::rasterize(o.class_id, o.cx + o.dx, o.cy + o.dy, o.size, W, H, [&](int y, int x, double a) {
        double& p = th[static_cast<std::size_t>(y) * W + x];
        p = (1 - a) * p + a * o.heat;
      });
      pair.annotations.thermal.push_back(at);
    }
  }
  pair.visible = Image(W, H, 3);
  pair.thermal = Image(W, H, 1);
  for (std::size_t i = 0; i < vis.size(); ++i) {
    const double v = L.night ? 0.3 * vis[i] + 3.0 * n(noise) : vis[i] + 2.0 * n(noise);
    pair.visible.pixels[i] = detail::to_byte(v);
  }
  for (std::size_t i = 0; i < th.size(); ++i) pair.thermal.pixels[i] = detail::to_byte(th[i] + 2.0 * n(noise));
  pair.annotations.union_set = build_union(pair.annotations.visible, pair.annotations.thermal);
  return pair;
}

/// The stored annotations are the 6-decimal file values, so generated and
/// reloaded pairs agree exactly.
inline void quantize_annotations(AnnotationTriplet& t) {
  for (auto* list : {&t.visible, &t.thermal, &t.union_set})
    *list = parse_annotations(format_annotations(*list), "<memory>", SceneSpec::kNumClasses);
}

inline std::string format_scene(const ImagePair& p) {
  std::string out = std::string("night = ") + (p.night ? "true" : "false") + "\n";
  for (std::size_t i = 0; i < p.objects.size(); ++i) {
    const auto& o = p.objects[i];
    char line[160];
    std::snprintf(line, sizeof line, "object%zu = %d %s %.6f %.6f\n", i, o.class_id, visibility_name(o.visibility),
                  o.dx, o.dy);
    out += line;
  }
  return out;
}

/// Union-box k-means under the 1 - shape IoU distance; 9 anchors sorted by
/// ascending area. Deterministic: centers start at area quantiles.
inline std::vector<AnchorShape> kmeans_anchors(const std::vector<AnchorShape>& boxes, int k = 9, int iterations = 100) {
  if (boxes.empty()) throw ConfigError("k-means anchors need at least one box");
  std::vector<AnchorShape> sorted = boxes;
  std::stable_sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.w * a.h < b.w * b.h; });
  std::vector<AnchorShape> centers;
  for (int i = 0; i < k; ++i) centers.push_back(sorted[(2 * i + 1) * sorted.size() / (2 * k)]);
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> sw(k, 0), sh(k, 0);
    std::vector<int> cnt(k, 0);
    for (const auto& b : sorted) {
      int best = 0;
      double best_iou = -1;
      for (int c = 0; c < k; ++c) {
        const double o = shape_iou(b.w, b.h, centers[c].w, centers[c].h);
        if (o > best_iou) {
          best_iou = o;
          best = c;
        }
      }
      sw[best] += b.w;
      sh[best] += b.h;
      ++cnt[best];
    }
    bool moved = false;
    for (int c = 0; c < k; ++c) {
      if (!cnt[c]) continue;
      const AnchorShape next{sw[c] / cnt[c], sh[c] / cnt[c]};
      if (!(next == centers[c])) moved = true;
      centers[c] = next;
    }
    if (!moved) break;
  }
  std::stable_sort(centers.begin(), centers.end(), [](auto& a, auto& b) { return a.w * a.h < b.w * b.h; });
  return centers;
}

inline std::string stem_for(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

struct DatasetMeta {
  SceneSpec spec;
  int n_train = 0, n_test = 0;
  std::vector<AnchorShape> anchors;
};

inline std::string format_meta(const DatasetMeta& meta) {
  kv::Map m = meta.spec.to_map();
  m["format"] = "rgbt-dataset";
  m["version"] = "1";
  m["n_train"] = std::to_string(meta.n_train);
  m["n_test"] = std::to_string(meta.n_test);
  m["num_classes"] = std::to_string(SceneSpec::kNumClasses);
  m["anchors"] = NetworkConfig::format_anchors(meta.anchors);
  return kv::dump(m);
}

inline DatasetMeta read_meta(const fs::path& root) {
  const auto path = root / "dataset.meta";
  const kv::Map m = kv::parse(read_text(path), path.string());
  DatasetMeta meta;
  meta.spec = SceneSpec::from_map(m);
  meta.n_train = kv::get_int(m, "n_train");
  meta.n_test = kv::get_int(m, "n_test");
  meta.anchors = NetworkConfig::parse_anchors(kv::get(m, "anchors"));
  return meta;
}

/// Writes `n_train + n_test` pairs; image i uses stem `%06d` of i. The
/// result depends only on the scene settings and the counts.
inline DatasetMeta generate_dataset(const SceneSpec& spec, int n_train, int n_test, const fs::path& root) {
  spec.validate();
  if (n_train < 0 || n_test < 0) throw ConfigError("image counts must be non-negative");
  const fs::path parent = fs::absolute(root).parent_path();
  if (!fs::is_directory(parent)) throw IoError("output parent directory does not exist: " + parent.string());
  std::error_code ec;
  for (const char* d : {"images/visible", "images/thermal", "annotations/visible", "annotations/thermal",
                        "annotations/union", "scenes"}) {
    fs::create_directories(root / d, ec);
    if (ec) throw IoError("cannot create " + (root / d).string() + ": " + ec.message());
  }
  std::string train_list, test_list;
  std::vector<AnchorShape> train_boxes;
  for (int i = 0; i < n_train + n_test; ++i) {
    const std::string stem = stem_for(static_cast<std::size_t>(i));
    ImagePair p = render_scene(spec, sample_layout(spec, static_cast<std::uint64_t>(i)), stem);
    write_png(root / "images/visible" / (stem + ".png"), p.visible);
    write_png(root / "images/thermal" / (stem + ".png"), p.thermal);
    write_text_file(root / "annotations/visible" / (stem + ".txt"), format_annotations(p.annotations.visible));
    write_text_file(root / "annotations/thermal" / (stem + ".txt"), format_annotations(p.annotations.thermal));
    write_text_file(root / "annotations/union" / (stem + ".txt"), format_annotations(p.annotations.union_set));
    write_text_file(root / "scenes" / (stem + ".txt"), format_scene(p));
    (i < n_train ? train_list : test_list) += stem + "\n";
    if (i < n_train)
      for (const auto& a : p.annotations.union_set) train_boxes.push_back({a.w * spec.width, a.h * spec.height});
  }
  write_text_file(root / "train.txt", train_list);
  write_text_file(root / "test.txt", test_list);
  DatasetMeta meta{spec, n_train, n_test, {}};
  meta.anchors = train_boxes.size() >= 9 ? kmeans_anchors(train_boxes) : NetworkConfig{}.anchors;
  write_text_file(root / "dataset.meta", format_meta(meta));
  return meta;
}

inline std::vector<std::string> read_split(const fs::path& root, const std::string& split) {
  const auto path = root / (split + ".txt");
  std::vector<std::string> stems;
  std::istringstream is(read_text(path));
  std::string line;
  while (std::getline(is, line)) {
    line = kv::trim(line);
    if (!line.empty()) stems.push_back(line);
  }
  return stems;
}

inline ImagePair load_pair(const fs::path& root, const std::string& stem, int num_classes = SceneSpec::kNumClasses) {
  ImagePair p;
  p.stem = stem;
  const fs::path vis = root / "images/visible" / (stem + ".png"), th = root / "images/thermal" / (stem + ".png");
  for (const auto& f : {vis, th})
    if (!fs::exists(f)) throw IntegrityError("missing file " + f.string());
  auto ann = [&](const char* kind) {
    const fs::path f = root / "annotations" / kind / (stem + ".txt");
    if (!fs::exists(f)) throw IntegrityError("missing file " + f.string());
    return parse_annotations(read_text(f), f.string(), num_classes);
  };
  p.annotations.visible = ann("visible");
  p.annotations.thermal = ann("thermal");
  p.annotations.union_set = ann("union");
  p.visible = read_png(vis, 3);
  p.thermal = read_png(th, 1);
  if (p.visible.width != p.thermal.width || p.visible.height != p.thermal.height)
    throw IntegrityError(th.string() + ": size differs from its visible counterpart");
  const fs::path scene = root / "scenes" / (stem + ".txt");
  if (fs::exists(scene)) {
    const kv::Map m = kv::parse(read_text(scene), scene.string());
    p.has_scene = true;
    p.night = kv::parse_bool(kv::get(m, "night"));
  }
  return p;
}

/// Pairs of a split in list-file order.
inline std::vector<ImagePair> load_dataset(const fs::path& root, const std::string& split,
                                           int num_classes = SceneSpec::kNumClasses) {
  std::vector<ImagePair> out;
  for (const auto& stem : read_split(root, split)) out.push_back(load_pair(root, stem, num_classes));
  return out;
}

// ---------------------------------------------------------------------------
// Batching.

/// Mirror image and every annotation set left to right.
inline void flip_horizontal(ImagePair& p) {
  for (Image* img : {&p.visible, &p.thermal})
    for (int y = 0; y < img->height; ++y)
      for (int x = 0; x < img->width / 2; ++x)
        for (int c = 0; c < img->channels; ++c) std::swap(img->at(y, x, c), img->at(y, img->width - 1 - x, c));
  for (auto* list : {&p.annotations.visible, &p.annotations.thermal, &p.annotations.union_set})
    for (auto& a : *list) a.cx = 1.0 - a.cx;
}

/// Bilinear resampling into `out` at (B, C, H, W) offset `b`, scaled to
/// [0, 1].
template <typename T>
void image_to_tensor(const Image& img, Tensor<T>& out, int b) {
  const int C = out.shape()[1], H = out.shape()[2], W = out.shape()[3];
  if (img.channels != C) throw ShapeError("image has " + std::to_string(img.channels) + " channels, expected " + std::to_string(C));
  const double sy = static_cast<double>(img.height) / H, sx = static_cast<double>(img.width) / W;
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double v;
        if (img.width == W && img.height == H) {
          v = img.at(y, x, c);
        } else {
          const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
          const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
          const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
          const int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
          const double ay = fy - y0, ax = fx - x0;
          v = (1 - ay) * ((1 - ax) * img.at(y0, x0, c) + ax * img.at(y0, x1, c)) +
              ay * ((1 - ax) * img.at(y1, x0, c) + ax * img.at(y1, x1, c));
        }
        out.at(b, c, y, x) = static_cast<T>(v / 255.0);
      }
}

template <typename T>
struct Batch {
  Tensor<T> visible;  // (B, 3, H, W)
  Tensor<T> thermal;  // (B, 1, H, W)
  std::vector<AnnotationTriplet> annotations;
};

/// Builds a batch from `pairs[indices]`, flipping the images whose flag is
/// set.
template <typename T>
Batch<T> make_batch(const std::vector<ImagePair>& pairs, const std::vector<std::size_t>& indices, int height,
                    int width, const std::vector<bool>& flips = {}) {
  const int B = static_cast<int>(indices.size());
  Batch<T> batch{Tensor<T>({B, 3, height, width}), Tensor<T>({B, 1, height, width}), {}};
  for (int b = 0; b < B; ++b) {
    const ImagePair* p = &pairs.at(indices[b]);
    ImagePair flipped;
    if (!flips.empty() && flips[b]) {
      flipped = *p;
      flip_horizontal(flipped);
      p = &flipped;
    }
    image_to_tensor(p->visible, batch.visible, b);
    image_to_tensor(p->thermal, batch.thermal, b);
    batch.annotations.push_back(p->annotations);
  }
  return batch;
}

}  // namespace rgbt

#endif  // RGBT_DATA_HPP_
