// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Cross-modal group shuffle: the C visible and C thermal channels are each
// cut into K groups of N = C/K channels and the groups are interleaved as
// v-group 0, t-group 0, v-group 1, t-group 1, ...
//
// K = 1 gives plain concatenation [v | t]; K = C gives per-channel
// interleaving v0, t0, v1, t1, ...

#ifndef RGBT_SHUFFLE_HPP_
#define RGBT_SHUFFLE_HPP_

#include <string>
#include <utility>
#include <vector>

#include "rgbt/ops.hpp"

namespace rgbt {

enum class Modality { kVisible, kThermal };

class ShuffleSpec {
 public:
  ShuffleSpec(int channels_per_modality, int groups)
      : channels_(channels_per_modality), groups_(groups) {
    if (channels_ <= 0 || groups_ <= 0 || groups_ > channels_ || channels_ % groups_ != 0)
      throw ConfigError("group shuffle needs 1 <= K <= C and K | C, got C=" +
                        std::to_string(channels_) + " K=" + std::to_string(groups_));
  }

  int channels() const { return channels_; }
  int groups() const { return groups_; }
  int group_size() const { return channels_ / groups_; }

  static bool valid(int channels, int groups) {
    return channels > 0 && groups > 0 && groups <= channels && channels % groups == 0;
  }

 private:
  int channels_;
  int groups_;
};

/// Output position in [0, 2C) of input channel `j` of `modality`.
inline int shuffle_index(const ShuffleSpec& spec, int j, Modality modality) {
  if (j < 0 || j >= spec.channels())
    throw BoundsError("channel index " + std::to_string(j) + " outside [0, " +
                      std::to_string(spec.channels()) + ")");
  const int n = spec.group_size();
  const int pos = j % n + (j / n) * 2 * n;
  return modality == Modality::kVisible ? pos : pos + n;
}

/// For every output channel of the shuffled map, the index into the
/// concatenation [v | t] it is read from.
inline std::vector<int> shuffle_source_map(const ShuffleSpec& spec) {
  const int c = spec.channels();
  std::vector<int> source(2 * c);
  for (int j = 0; j < c; ++j) {
    source[shuffle_index(spec, j, Modality::kVisible)] = j;
    source[shuffle_index(spec, j, Modality::kThermal)] = c + j;
  }
  return source;
}

namespace detail {

inline void check_pair(const Shape& v, const Shape& t, const ShuffleSpec& spec) {
  if (v != t)
    throw ShapeError("group shuffle inputs differ: " + shape_str(v) + " vs " + shape_str(t));
  if (v.size() < 2 || v[1] != spec.channels())
    throw ShapeError("group shuffle input " + shape_str(v) + " does not have C=" +
                     std::to_string(spec.channels()) + " channels");
}

inline void check_shuffled(const Shape& s, const ShuffleSpec& spec) {
  if (s.size() < 2 || s[1] % 2 != 0)
    throw ShapeError("group unshuffle needs an even channel count, got " + shape_str(s));
  if (s[1] != 2 * spec.channels())
    throw ShapeError("group unshuffle input " + shape_str(s) + " does not have 2C=" +
                     std::to_string(2 * spec.channels()) + " channels");
}

}  // namespace detail

/// Differentiable group shuffle of two (B, C, ...) maps into (B, 2C, ...).
template <typename T>
Var<T> group_shuffle(const Var<T>& visible, const Var<T>& thermal, const ShuffleSpec& spec) {
  detail::check_pair(visible->shape(), thermal->shape(), spec);
  return ops::gather_channels(ops::concat<T>({visible, thermal}), shuffle_source_map(spec));
}

template <typename T>
Tensor<T> group_shuffle(const Tensor<T>& visible, const Tensor<T>& thermal, const ShuffleSpec& spec) {
  return group_shuffle(constant(visible), constant(thermal), spec)->value;
}

/// Inverse of group_shuffle: (B, 2C, ...) -> visible (B, C, ...), thermal (B, C, ...).
template <typename T>
std::pair<Var<T>, Var<T>> group_unshuffle(const Var<T>& shuffled, const ShuffleSpec& spec) {
  detail::check_shuffled(shuffled->shape(), spec);
  const int c = spec.channels();
  std::vector<int> vis(c), th(c);
  for (int j = 0; j < c; ++j) {
    vis[j] = shuffle_index(spec, j, Modality::kVisible);
    th[j] = shuffle_index(spec, j, Modality::kThermal);
  }
  return {ops::gather_channels(shuffled, std::move(vis)), ops::gather_channels(shuffled, std::move(th))};
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> group_unshuffle(const Tensor<T>& shuffled, const ShuffleSpec& spec) {
  auto [v, t] = group_unshuffle(constant(shuffled), spec);
  return {v->value, t->value};
}

}  // namespace rgbt

#endif  // RGBT_SHUFFLE_HPP_
