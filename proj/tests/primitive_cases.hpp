// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

// Randomized gradient-check cases for every named primitive, shared by the
// unit tests and the acceptance run.

#pragma once

#include "gill/layers.hpp"
#include "gill/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace cases {

inline const std::vector<std::string>& primitive_kinds() {
  static const std::vector<std::string> kinds = {
      "matmul",  "add",  "sub",  "elementwise-mul", "scalar-mul",           "concat",       "reshape",
      "transpose", "embedding-lookup", "softmax", "log-softmax", "layer-norm", "gelu", "leaky-relu",
      "mean",    "sum",  "mse",  "nll-from-log-softmax", "l2-normalize", "cosine-similarity"};
  return kinds;
}

inline gill::Tensor randn(gill::Rng& rng, gill::Shape shape, bool grad = true) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd v(gill::shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return gill::Tensor::from(std::move(shape), std::move(v), grad);
}

struct CaseResult {
  std::string kind;
  double error = 0.0;
};

/// Draws random operand shapes for `kind`, reduces the output to a scalar through a fixed
/// random weighting and returns the check_gradients error over every leaf operand.
inline CaseResult run_primitive_case(const std::string& kind, gill::Rng& rng, int trial) {
  using gill::Tensor;
  auto uniform = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const int n = uniform(1, 4), m = uniform(1, 5), p = uniform(1, 4);
  std::vector<Tensor> inputs;
  gill::PrimitiveAttrs attrs;
  attrs.slope = 0.1;
  attrs.scalar = -1.7;
  if (kind == "matmul") {
    inputs = {randn(rng, {n, m}), randn(rng, {m, p})};
  } else if (kind == "add" || kind == "sub" || kind == "elementwise-mul" || kind == "mse" ||
             kind == "cosine-similarity") {
    inputs = {randn(rng, {n, m}), randn(rng, {n, m})};
    if (kind == "add" && trial % 2 == 1) inputs[1] = randn(rng, {m});
  } else if (kind == "concat") {
    attrs.axis = trial % 2;
    inputs = attrs.axis == 0 ? std::vector<Tensor>{randn(rng, {n, m}), randn(rng, {p, m})}
                             : std::vector<Tensor>{randn(rng, {n, m}), randn(rng, {n, p})};
  } else if (kind == "reshape") {
    inputs = {randn(rng, {n, m})};
    attrs.shape = {m, n};
  } else if (kind == "embedding-lookup") {
    inputs = {randn(rng, {n + 2, m})};
    for (int i = 0; i < p + 1; ++i) attrs.ids.push_back(uniform(0, n + 1));
  } else if (kind == "nll-from-log-softmax") {
    for (int i = 0; i < n; ++i) attrs.ids.push_back(uniform(0, m));
    Tensor raw = randn(rng, {n, m + 1});
    std::vector<Tensor> leaves{raw};
    auto f = [&] { return gill::apply_primitive(kind, std::vector<Tensor>{gill::log_softmax(raw, 1)}, attrs); };
    return {kind, gill::check_gradients(f, leaves)};
  } else {
    inputs = {randn(rng, {n, m + 1})};
    const bool has_axis = kind == "softmax" || kind == "log-softmax" || kind == "l2-normalize";
    attrs.axis = has_axis ? trial % 2 : -1;
  }
  Tensor weights = randn(rng, gill::apply_primitive(kind, inputs, attrs).shape(), false);
  auto f = [&] {
    Tensor out = gill::apply_primitive(kind, inputs, attrs);
    return out.size() == 1 ? out : gill::sum(gill::mul(out, weights));
  };
  return {kind, gill::check_gradients(f, inputs)};
}

}  // namespace cases
