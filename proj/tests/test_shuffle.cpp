// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "gradcheck.hpp"
#include "rgbt/shuffle.hpp"

using namespace rgbt;

namespace {

Tensor<double> channel_coded(int batch, int channels, int h, int w, double base) {
  Tensor<double> t({batch, channels, h, w});
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) t.at(b, c, i, j) = base + 100 * b + c + 0.01 * (i * w + j);
  return t;
}

}  // namespace

TEST(ShuffleIndex, HandEvaluatedExamples) {
  EXPECT_EQ(shuffle_index(ShuffleSpec(4, 2), 2, Modality::kVisible), 4);
  EXPECT_EQ(shuffle_index(ShuffleSpec(4, 2), 0, Modality::kThermal), 2);
  EXPECT_EQ(shuffle_index(ShuffleSpec(8, 1), 5, Modality::kVisible), 5);
  EXPECT_EQ(shuffle_index(ShuffleSpec(8, 8), 3, Modality::kVisible), 6);
  EXPECT_EQ(shuffle_index(ShuffleSpec(8, 8), 3, Modality::kThermal), 7);
}

TEST(ShuffleIndex, RejectsInvalidSpecAndIndex) {
  EXPECT_THROW(ShuffleSpec(6, 4), ConfigError);
  EXPECT_THROW(ShuffleSpec(4, 8), ConfigError);
  EXPECT_THROW(ShuffleSpec(4, 0), ConfigError);
  EXPECT_THROW(shuffle_index(ShuffleSpec(4, 2), 4, Modality::kVisible), BoundsError);
  EXPECT_THROW(shuffle_index(ShuffleSpec(4, 2), -1, Modality::kThermal), BoundsError);
}

TEST(ShuffleIndex, BijectionForAllDivisors) {
  for (int c = 1; c <= 96; ++c)
    for (int k = 1; k <= c; ++k) {
      if (c % k) continue;
      ShuffleSpec spec(c, k);
      std::set<int> seen;
      for (int j = 0; j < c; ++j) {
        seen.insert(shuffle_index(spec, j, Modality::kVisible));
        seen.insert(shuffle_index(spec, j, Modality::kThermal));
      }
      ASSERT_EQ(seen.size(), static_cast<std::size_t>(2 * c)) << "C=" << c << " K=" << k;
      EXPECT_EQ(*seen.begin(), 0);
      EXPECT_EQ(*seen.rbegin(), 2 * c - 1);
    }
}

TEST(GroupShuffle, FourChannelsTwoGroupsOrder) {
  auto v = channel_coded(1, 4, 1, 1, 0);
  auto t = channel_coded(1, 4, 1, 1, 1000);
  auto s = group_shuffle(v, t, ShuffleSpec(4, 2));
  // v0 v1 t0 t1 v2 v3 t2 t3
  const double expected[] = {0, 1, 1000, 1001, 2, 3, 1002, 1003};
  for (int i = 0; i < 8; ++i) EXPECT_EQ(s.at(0, i, 0, 0), expected[i]);
}

TEST(GroupShuffle, LimitCasesAreConcatAndInterleave) {
  for (int c : {1, 3, 8, 12}) {
    auto v = channel_coded(2, c, 3, 2, 0);
    auto t = channel_coded(2, c, 3, 2, 1000);
    auto concat = group_shuffle(v, t, ShuffleSpec(c, 1));
    auto inter = group_shuffle(v, t, ShuffleSpec(c, c));
    for (int b = 0; b < 2; ++b)
      for (int ch = 0; ch < c; ++ch)
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 2; ++j) {
            EXPECT_EQ(concat.at(b, ch, i, j), v.at(b, ch, i, j));
            EXPECT_EQ(concat.at(b, c + ch, i, j), t.at(b, ch, i, j));
            EXPECT_EQ(inter.at(b, 2 * ch, i, j), v.at(b, ch, i, j));
            EXPECT_EQ(inter.at(b, 2 * ch + 1, i, j), t.at(b, ch, i, j));
          }
  }
}

TEST(GroupShuffle, PreservesValuesAndRoundTrips) {
  std::mt19937_64 rng(11);
  auto v = Tensor<double>::normal({2, 64, 5, 4}, 0, 1, rng);
  auto t = Tensor<double>::normal({2, 64, 5, 4}, 0, 1, rng);
  ShuffleSpec spec(64, 16);
  auto s = group_shuffle(v, t, spec);
  std::vector<double> in(v.vec());
  in.insert(in.end(), t.vec().begin(), t.vec().end());
  std::vector<double> out(s.vec());
  std::sort(in.begin(), in.end());
  std::sort(out.begin(), out.end());
  EXPECT_EQ(in, out);
  auto [v2, t2] = group_unshuffle(s, spec);
  EXPECT_TRUE(v2 == v);
  EXPECT_TRUE(t2 == t);
}

TEST(GroupUnshuffle, HandExampleAndConcatSplit) {
  auto v = channel_coded(1, 4, 2, 2, 0);
  auto t = channel_coded(1, 4, 2, 2, 1000);
  auto [v2, t2] = group_unshuffle(group_shuffle(v, t, ShuffleSpec(4, 2)), ShuffleSpec(4, 2));
  EXPECT_TRUE(v2 == v);
  EXPECT_TRUE(t2 == t);

  auto joined = channel_coded(1, 6, 1, 1, 0);
  auto [first, second] = group_unshuffle(joined, ShuffleSpec(3, 1));
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(first.at(0, c, 0, 0), c);
    EXPECT_EQ(second.at(0, c, 0, 0), 3 + c);
  }
}

TEST(GroupShuffle, ShapeErrors) {
  Tensor<double> a({1, 4, 2, 2}), b({1, 4, 2, 3}), odd({1, 7, 2, 2}), wrong_c({1, 6, 2, 2});
  EXPECT_THROW(group_shuffle(a, b, ShuffleSpec(4, 2)), ShapeError);
  EXPECT_THROW(group_shuffle(wrong_c, wrong_c, ShuffleSpec(4, 2)), ShapeError);
  EXPECT_THROW(group_unshuffle(odd, ShuffleSpec(4, 2)), ShapeError);
}

TEST(GroupShuffle, GradientIsInversePermutation) {
  std::mt19937_64 rng(5);
  ShuffleSpec spec(8, 4);
  auto v = leaf(Tensor<double>::normal({2, 8, 3, 3}, 0, 1, rng));
  auto t = leaf(Tensor<double>::normal({2, 8, 3, 3}, 0, 1, rng));
  auto upstream = Tensor<double>::normal({2, 16, 3, 3}, 0, 1, rng);
  auto r = rgbt::testing::grad_check({{"v", v}, {"t", t}},
                                     [&] { return ops::dot_const(group_shuffle(v, t, spec), upstream); });
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;

  // Analytic gradient equals the unshuffled upstream gradient exactly.
  v->grad = Tensor<double>();
  t->grad = Tensor<double>();
  backward(ops::dot_const(group_shuffle(v, t, spec), upstream));
  auto [gv, gt] = group_unshuffle(upstream, spec);
  EXPECT_TRUE(v->grad == gv);
  EXPECT_TRUE(t->grad == gt);
}
