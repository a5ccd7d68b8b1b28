// Copyright (C) 2026 The rgbt-detect Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient checker for double-precision graphs.

#ifndef RGBT_TESTS_GRADCHECK_HPP_
#define RGBT_TESTS_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rgbt/autograd.hpp"

namespace rgbt::testing {

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst;
};

/// Compares d loss / d leaf from backward() against (f(x+h) - f(x-h)) / 2h for
/// every element of every leaf. The relative error denominator is
/// max(|analytic|, |numeric|, floor).
inline GradCheckResult grad_check(const std::vector<std::pair<std::string, Var<double>>>& leaves,
                                  const std::function<Var<double>()>& loss_fn, double step = 1e-5,
                                  double floor = 1e-8) {
  for (auto& [name, v] : leaves) v->grad = Tensor<double>();
  auto loss = loss_fn();
  backward(loss);
  GradCheckResult r;
  for (auto& [name, v] : leaves) {
    Tensor<double> analytic = v->grad.empty() ? Tensor<double>(v->value.shape()) : v->grad;
    for (std::size_t i = 0; i < v->value.size(); ++i) {
      const double orig = v->value[i];
      v->value[i] = orig + step;
      const double up = loss_fn()->value[0];
      v->value[i] = orig - step;
      const double down = loss_fn()->value[0];
      v->value[i] = orig;
      const double numeric = (up - down) / (2 * step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++r.checked;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic[i]) +
                  " numeric=" + std::to_string(numeric);
      }
    }
  }
  return r;
}

}  // namespace rgbt::testing

#endif  // RGBT_TESTS_GRADCHECK_HPP_
