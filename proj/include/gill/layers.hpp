// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gill/tensor.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace gill {

using Rng = std::mt19937_64;

/// Independent stream `stream` derived from a run seed.
Rng make_rng(std::uint64_t seed, std::uint64_t stream);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

/// Gaussian init rounded to fp32-representable values, so checkpoints round-trip exactly.
Tensor gaussian_param(Rng& rng, Shape shape, double stddev, bool trainable);
Tensor constant_param(Shape shape, double value, bool trainable);

/// Rows of sin/cos features at positions 0..n-1 (constant, no grad).
Tensor sinusoidal_positions(int n, int width);
/// Additive mask: 0 on and below the diagonal, -1e30 above.
Tensor causal_mask(int n);
/// Per-head causal masks with a linear distance penalty, slope 2^(-8(h+1)/heads) for head h.
std::vector<Tensor> causal_alibi_masks(int n, int heads);

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out], may be undefined

  static Linear init(Rng& rng, int in, int out, bool trainable, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct LayerNormParams {
  Tensor gamma, beta;  // undefined for a plain (non-affine) norm

  static LayerNormParams init(int width, bool affine, bool trainable);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Multi-head attention with separate per-head projections.
struct MultiHeadAttention {
  std::vector<Tensor> wq, wk, wv;  // each [width x width/heads]
  Tensor wo;                       // [width x width]

  static MultiHeadAttention init(Rng& rng, int width, int heads, bool trainable);
  /// Queries from `x`, keys/values from `memory`; `mask` is additive or undefined.
  Tensor operator()(const Tensor& x, const Tensor& memory, const Tensor& mask = {}) const;
  /// One additive mask per head.
  Tensor operator()(const Tensor& x, const Tensor& memory, std::span<const Tensor> head_masks) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct FeedForward {
  Linear up, down;

  static FeedForward init(Rng& rng, int width, int hidden, bool trainable);
  Tensor operator()(const Tensor& x) const { return down(gelu(up(x))); }
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Pre-norm self-attention block.
struct EncoderLayer {
  LayerNormParams ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ff;

  static EncoderLayer init(Rng& rng, int width, int heads, bool trainable);
  Tensor operator()(const Tensor& x, const Tensor& mask = {}) const;
  Tensor operator()(const Tensor& x, std::span<const Tensor> head_masks) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Pre-norm block with self-attention, cross-attention to `memory`, and MLP.
struct DecoderLayer {
  LayerNormParams ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ff;

  static DecoderLayer init(Rng& rng, int width, int heads, bool trainable);
  Tensor operator()(const Tensor& x, const Tensor& memory) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace gill
