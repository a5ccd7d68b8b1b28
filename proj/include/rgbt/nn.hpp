// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter registry and the small set of layers the detector is built from.

#ifndef RGBT_NN_HPP_
#define RGBT_NN_HPP_

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rgbt/ops.hpp"

namespace rgbt::nn {

/// Owns every trainable tensor and normalization buffer of a model under a
/// unique dotted name. Initialization draws from one seeded stream in
/// registration order, so construction is deterministic.
template <typename T>
class ParamStore {
 public:
  struct Param {
    std::string name;
    Var<T> var;
    bool decay;
  };
  struct Buffer {
    std::string name;
    std::shared_ptr<ops::NormStats<T>> stats;
  };

  explicit ParamStore(std::uint64_t seed = 0) : rng_(seed) {}

  Var<T> create(const std::string& name, Tensor<T> init, bool decay) {
    auto v = leaf(std::move(init));
    params_.push_back({name, v, decay});
    return v;
  }

  std::shared_ptr<ops::NormStats<T>> create_stats(const std::string& name, int channels) {
    auto s = std::make_shared<ops::NormStats<T>>();
    s->mean = Tensor<T>({channels}, T(0));
    s->var = Tensor<T>({channels}, T(1));
    buffers_.push_back({name, s});
    return s;
  }

  std::mt19937_64& rng() { return rng_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  const std::vector<Buffer>& buffers() const { return buffers_; }

  Var<T> find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.var;
    return nullptr;
  }

  /// Every persistent tensor, parameters first, then normalization buffers.
  std::vector<std::pair<std::string, Tensor<T>*>> state() const {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (const auto& p : params_) out.emplace_back(p.name, &p.var->value);
    for (const auto& b : buffers_) {
      out.emplace_back(b.name + ".running_mean", &b.stats->mean);
      out.emplace_back(b.name + ".running_var", &b.stats->var);
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var->grad = Tensor<T>();
  }

 private:
  std::mt19937_64 rng_;
  std::vector<Param> params_;
  std::vector<Buffer> buffers_;
};

enum class Act { kNone, kSiLU, kReLU };

template <typename T>
Var<T> activate(const Var<T>& x, Act act) {
  switch (act) {
    case Act::kSiLU:
      return ops::silu(x);
    case Act::kReLU:
      return ops::relu(x);
    case Act::kNone:
      break;
  }
  return x;
}

// PyTorch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, int fan_in, std::mt19937_64& rng) {
  const T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
  return Tensor<T>::uniform(std::move(shape), -bound, bound, rng);
}

/// Convolution followed by batch normalization and an activation.
template <typename T>
class ConvNormAct {
 public:
  ConvNormAct() = default;
  ConvNormAct(ParamStore<T>& store, const std::string& name, int cin, int cout, int k, int stride,
              int groups = 1, Act act = Act::kSiLU, bool norm = true)
      : stride_(stride), pad_(k / 2), groups_(groups), act_(act), norm_(norm) {
    const int fan_in = cin / groups * k * k;
    weight_ = store.create(name + ".weight", fan_in_uniform<T>({cout, cin / groups, k, k}, fan_in, store.rng()),
                           true);
    if (norm_) {
      gamma_ = store.create(name + ".norm.weight", Tensor<T>({cout}, T(1)), false);
      beta_ = store.create(name + ".norm.bias", Tensor<T>({cout}, T(0)), false);
      stats_ = store.create_stats(name + ".norm", cout);
    }
  }

  Var<T> operator()(const Var<T>& x, bool training) const {
    auto y = ops::conv2d<T>(x, weight_, nullptr, stride_, pad_, groups_);
    if (norm_) y = ops::batch_norm(y, gamma_, beta_, *stats_, training, T(0.03), T(1e-3));
    return activate(y, act_);
  }

  const Var<T>& weight() const { return weight_; }

 private:
  int stride_ = 1, pad_ = 0, groups_ = 1;
  Act act_ = Act::kSiLU;
  bool norm_ = true;
  Var<T> weight_, gamma_, beta_;
  std::shared_ptr<ops::NormStats<T>> stats_;
};

/// Plain convolution with bias (prediction layers).
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, int cin, int cout, int k)
      : pad_(k / 2) {
    const int fan_in = cin * k * k;
    weight_ = store.create(name + ".weight", fan_in_uniform<T>({cout, cin, k, k}, fan_in, store.rng()), true);
    bias_ = store.create(name + ".bias", fan_in_uniform<T>({cout}, fan_in, store.rng()), false);
  }

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight_, bias_, 1, pad_, 1); }

  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }

 private:
  int pad_ = 0;
  Var<T> weight_, bias_;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, int in, int out) {
    weight_ = store.create(name + ".weight", fan_in_uniform<T>({out, in}, in, store.rng()), true);
    bias_ = store.create(name + ".bias", fan_in_uniform<T>({out}, in, store.rng()), false);
  }
  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight_, bias_); }

  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }

 private:
  Var<T> weight_, bias_;
};

/// x + conv3x3(conv1x1(x)) with a c/2 bottleneck.
template <typename T>
class Residual {
 public:
  Residual() = default;
  Residual(ParamStore<T>& store, const std::string& name, int channels)
      : reduce_(store, name + ".reduce", channels, std::max(1, channels / 2), 1, 1),
        expand_(store, name + ".expand", std::max(1, channels / 2), channels, 3, 1) {}

  Var<T> operator()(const Var<T>& x, bool training) const {
    return ops::add(x, expand_(reduce_(x, training), training));
  }

 private:
  ConvNormAct<T> reduce_, expand_;
};

}  // namespace rgbt::nn

#endif  // RGBT_NN_HPP_
