// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "rgbt/data.hpp"

namespace rgbt {
namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("rgbt_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SceneSpec small_spec() {
  SceneSpec s;
  s.width = s.height = 96;
  s.min_size = 16;
  s.max_size = 28;
  s.max_objects = 3;
  s.seed = 11;
  return s;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

TEST(SceneSpec, ValidateAndRoundTrip) {
  SceneSpec s;
  s.validate();
  s.seed = 123456789012345ull;
  s.night_fraction = 0.25;
  const auto back = SceneSpec::from_map(kv::parse(kv::dump(s.to_map())));
  EXPECT_EQ(back.seed, s.seed);
  EXPECT_EQ(back.night_fraction, 0.25);
  EXPECT_EQ(back.max_size, s.max_size);
  s.misalignment_max_px = 9;
  EXPECT_THROW(s.validate(), ConfigError);
  s = SceneSpec{};
  s.p_both = 0.5;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Layout, DeterministicPerIndex) {
  const SceneSpec s = small_spec();
  const auto a = render_scene(s, sample_layout(s, 5)), b = render_scene(s, sample_layout(s, 5));
  EXPECT_EQ(a.visible, b.visible);
  EXPECT_EQ(a.thermal, b.thermal);
  EXPECT_EQ(a.annotations.union_set, b.annotations.union_set);
  const auto c = render_scene(s, sample_layout(s, 6));
  EXPECT_NE(a.visible, c.visible);
}

TEST(Layout, VisibilityFractions) {
  SceneSpec s;
  std::size_t total = 0, vis_only = 0, th_only = 0;
  for (std::uint64_t i = 0; i < 1000; ++i)
    for (const auto& o : sample_layout(s, i).objects) {
      ++total;
      vis_only += o.visibility == Visibility::kVisibleOnly;
      th_only += o.visibility == Visibility::kThermalOnly;
    }
  ASSERT_GT(total, 2000u);
  EXPECT_NEAR(static_cast<double>(vis_only) / total, 0.15, 0.03);
  EXPECT_NEAR(static_cast<double>(th_only) / total, 0.15, 0.03);
}

TEST(Layout, MisalignmentBoundAndPlacement) {
  SceneSpec s;
  s.misalignment_max_px = 6;
  const double bound = 6 * std::sqrt(2.0) + 1e-9;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto L = sample_layout(s, i);
    for (const auto& o : L.objects) {
      EXPECT_LE(std::hypot(o.dx, o.dy), bound);
      EXPECT_GE(o.cx + o.dx - o.size / 2, 0.0);
      EXPECT_LE(o.cx + o.dx + o.size / 2, s.width);
      EXPECT_GE(o.cy + o.dy - o.size / 2, 0.0);
      EXPECT_LE(o.cy + o.dy + o.size / 2, s.height);
    }
  }
}

TEST(Layout, DefaultShiftMergesEveryPairedObject) {
  // 24 px objects shifted by (4, 4) still overlap with IoU 0.53.
  SceneSpec s;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto L = sample_layout(s, i);
    const auto p = render_scene(s, L);
    std::size_t both = 0;
    for (const auto& o : L.objects) both += o.visibility == Visibility::kBoth;
    // Every "both" object is one union entry at this object size.
    EXPECT_EQ(p.annotations.union_set.size(), L.objects.size()) << i;
    EXPECT_EQ(p.annotations.visible.size() + p.annotations.thermal.size() - both, L.objects.size());
  }
}

TEST(Layout, BothOnlyWithoutShiftGivesIdenticalAnnotations) {
  SceneSpec s = small_spec();
  s.p_both = 1;
  s.p_visible_only = s.p_thermal_only = 0;
  s.misalignment_max_px = 0;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto p = render_scene(s, sample_layout(s, i));
    EXPECT_EQ(p.annotations.visible, p.annotations.thermal);
    EXPECT_EQ(format_annotations(p.annotations.visible), format_annotations(p.annotations.union_set));
  }
}

TEST(Render, NightLowersVisibleContrast) {
  SceneSpec s;
  double day = 0, night = 0;
  int nd = 0, nn = 0;
  for (std::uint64_t i = 0; i < 40; ++i) {
    const auto p = render_scene(s, sample_layout(s, i));
    (p.night ? night : day) += intensity_std(p.visible);
    ++(p.night ? nn : nd);
  }
  ASSERT_GT(nd, 0);
  ASSERT_GT(nn, 0);
  EXPECT_LT(night / nn, 0.6 * day / nd);
}

TEST(Render, ObjectsAreWarmInThermal) {
  SceneSpec s = small_spec();
  s.p_both = 0;
  s.p_visible_only = 0;
  s.p_thermal_only = 1;
  s.misalignment_max_px = 0;
  const auto L = sample_layout(s, 3);
  ASSERT_FALSE(L.objects.empty());
  const auto p = render_scene(s, L);
  const auto& o = L.objects[0];
  EXPECT_GT(p.thermal.at(static_cast<int>(o.cy), static_cast<int>(o.cx), 0), 120);
  EXPECT_LT(p.thermal.at(0, 0, 0), 80);
  EXPECT_TRUE(p.annotations.visible.empty());
}

TEST(Annotations, FormatParseRoundTrip) {
  std::vector<Annotation> a{{0, 0.5, 0.25, 0.125, 0.2}, {2, 0.1234567, 0.9, 0.05, 0.05}};
  const auto back = parse_annotations(format_annotations(a), "x", 3);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(back[i].class_id, a[i].class_id);
    EXPECT_NEAR(back[i].cx, a[i].cx, 1e-6);
    EXPECT_NEAR(back[i].cy, a[i].cy, 1e-6);
    EXPECT_NEAR(back[i].w, a[i].w, 1e-6);
    EXPECT_NEAR(back[i].h, a[i].h, 1e-6);
  }
}

TEST(Annotations, BadLinesNameFileAndLine) {
  try {
    parse_annotations("0 0.5 0.5 0.1 0.1\n1 0.5 oops 0.1 0.1\n", "ann.txt", 3);
    FAIL();
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("ann.txt:2"), std::string::npos);
  }
  EXPECT_THROW(parse_annotations("7 0.5 0.5 0.1 0.1\n", "a", 3), IntegrityError);
  EXPECT_THROW(parse_annotations("0 0.5 0.5 0.1 0.1 9\n", "a", 3), IntegrityError);
  EXPECT_THROW(parse_annotations("0 1.5 0.5 0.1 0.1\n", "a", 3), IntegrityError);
  EXPECT_TRUE(parse_annotations("\n  \n", "a", 3).empty());
}

TEST(Dataset, GenerateIsBitwiseReproducible) {
  TempDir a("gen_a"), b("gen_b");
  const SceneSpec s = small_spec();
  generate_dataset(s, 6, 3, a.path / "d");
  generate_dataset(s, 6, 3, b.path / "d");
  for (const auto& e : fs::recursive_directory_iterator(a.path / "d")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.path / "d");
    EXPECT_EQ(file_bytes(e.path()), file_bytes(b.path / "d" / rel)) << rel;
  }
}

TEST(Dataset, LoadMatchesGenerated) {
  TempDir t("load");
  const SceneSpec s = small_spec();
  const auto meta = generate_dataset(s, 5, 2, t.path / "d");
  EXPECT_EQ(meta.anchors.size(), 9u);
  const auto train = load_dataset(t.path / "d", "train"), test = load_dataset(t.path / "d", "test");
  ASSERT_EQ(train.size(), 5u);
  ASSERT_EQ(test.size(), 2u);
  EXPECT_EQ(test[0].stem, "000005");
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto want = render_scene(s, sample_layout(s, i));
    quantize_annotations(want.annotations);
    EXPECT_EQ(train[i].visible, want.visible);
    EXPECT_EQ(train[i].thermal, want.thermal);
    EXPECT_EQ(train[i].annotations.union_set, want.annotations.union_set);
    EXPECT_EQ(train[i].night, want.night);
  }
  const auto back = read_meta(t.path / "d");
  EXPECT_EQ(back.n_train, 5);
  EXPECT_EQ(back.spec.seed, s.seed);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(back.anchors[i].w, meta.anchors[i].w, 1e-9);
}

TEST(Dataset, HandWrittenFixtureLoads) {
  TempDir t("fixture");
  const fs::path r = t.path;
  for (const char* d : {"images/visible", "images/thermal", "annotations/visible", "annotations/thermal",
                        "annotations/union"})
    fs::create_directories(r / d);
  for (const char* stem : {"a", "b", "c"}) {
    write_png(r / "images/visible" / (std::string(stem) + ".png"), Image(32, 24, 3, 100));
    write_png(r / "images/thermal" / (std::string(stem) + ".png"), Image(32, 24, 1, 30));
    for (const char* k : {"visible", "thermal", "union"})
      write_text_file(r / "annotations" / k / (std::string(stem) + ".txt"), "1 0.5 0.5 0.25 0.25\n");
  }
  write_text_file(r / "test.txt", "a\nb\n\nc\n");
  const auto pairs = load_dataset(r, "test");
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_EQ(pairs[2].stem, "c");
  EXPECT_FALSE(pairs[0].has_scene);
  EXPECT_EQ(pairs[1].visible.at(3, 4, 2), 100);
  EXPECT_EQ(pairs[1].thermal.width, 32);
  EXPECT_EQ(pairs[0].annotations.union_set[0].class_id, 1);

  fs::remove(r / "annotations/thermal/b.txt");
  try {
    load_dataset(r, "test");
    FAIL();
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("b.txt"), std::string::npos);
  }
  EXPECT_THROW(load_dataset(r, "train"), IntegrityError);
  write_text_file(r / "annotations/thermal/b.txt", "1 0.5 0.5 0.25\n");
  EXPECT_THROW(load_dataset(r, "test"), IntegrityError);
  write_text_file(r / "annotations/thermal/b.txt", "");
  write_text_file(r / "images/thermal/b.png", "not a png");
  EXPECT_THROW(load_dataset(r, "test"), IntegrityError);
}

TEST(Dataset, MissingParentIsIoError) {
  EXPECT_THROW(generate_dataset(small_spec(), 1, 1, "/nonexistent_rgbt_dir/x/y"), IoError);
}

TEST(Batch, FlipMirrorsImagesAndBoxes) {
  const SceneSpec s = small_spec();
  auto p = render_scene(s, sample_layout(s, 1));
  auto f = p;
  flip_horizontal(f);
  EXPECT_EQ(f.visible.at(7, 0, 1), p.visible.at(7, s.width - 1, 1));
  EXPECT_EQ(f.thermal.at(9, 3, 0), p.thermal.at(9, s.width - 4, 0));
  for (std::size_t i = 0; i < p.annotations.union_set.size(); ++i)
    EXPECT_NEAR(f.annotations.union_set[i].cx, 1 - p.annotations.union_set[i].cx, 1e-15);
  flip_horizontal(f);
  EXPECT_EQ(f.visible, p.visible);
}

TEST(Batch, TensorLayoutAndResize) {
  const SceneSpec s = small_spec();
  std::vector<ImagePair> pairs{render_scene(s, sample_layout(s, 0)), render_scene(s, sample_layout(s, 1))};
  const auto b = make_batch<float>(pairs, {1, 0}, 96, 96, {false, true});
  EXPECT_EQ(b.visible.shape(), (Shape{2, 3, 96, 96}));
  EXPECT_EQ(b.thermal.shape(), (Shape{2, 1, 96, 96}));
  EXPECT_FLOAT_EQ(b.visible.at(0, 2, 5, 7), pairs[1].visible.at(5, 7, 2) / 255.0f);
  EXPECT_FLOAT_EQ(b.thermal.at(1, 0, 5, 7), pairs[0].thermal.at(5, 95 - 7, 0) / 255.0f);
  const auto half = make_batch<float>(pairs, {0}, 48, 48);
  EXPECT_NEAR(half.visible.at(0, 0, 10, 10),
              (pairs[0].visible.at(20, 20, 0) + pairs[0].visible.at(20, 21, 0) + pairs[0].visible.at(21, 20, 0) +
               pairs[0].visible.at(21, 21, 0)) /
                  (4 * 255.0),
              1e-6);
}

TEST(Anchors, KMeansRecoversClusters) {
  std::vector<AnchorShape> boxes;
  for (int c = 0; c < 9; ++c)
    for (int i = 0; i < 10; ++i) boxes.push_back({10.0 + 12 * c + 0.1 * i, 10.0 + 12 * c + 0.1 * i});
  const auto a = kmeans_anchors(boxes);
  ASSERT_EQ(a.size(), 9u);
  for (int c = 0; c < 9; ++c) EXPECT_NEAR(a[c].w, 10.0 + 12 * c + 0.45, 1e-9);
}

}  // namespace
}  // namespace rgbt
