// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/layers.hpp"

#include <cmath>

namespace gill {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

Tensor gaussian_param(Rng& rng, Shape shape, double stddev, bool trainable) {
  std::normal_distribution<double> dist(0.0, stddev);
  Eigen::VectorXd v(shape_numel(shape));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = static_cast<float>(dist(rng));
  return Tensor::from(std::move(shape), std::move(v), trainable);
}

Tensor constant_param(Shape shape, double value, bool trainable) {
  const auto n = shape_numel(shape);
  return Tensor::from(std::move(shape), Eigen::VectorXd::Constant(n, static_cast<float>(value)), trainable);
}

Tensor sinusoidal_positions(int n, int width) {
  RowMatrix pe(n, width);
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / width);
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
    }
  }
  return Tensor::matrix(pe);
}

Tensor causal_mask(int n) {
  RowMatrix m = RowMatrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m(i, j) = -1e30;
  return Tensor::matrix(m);
}

std::vector<Tensor> causal_alibi_masks(int n, int heads) {
  std::vector<Tensor> out;
  for (int h = 0; h < heads; ++h) {
    const double slope = std::exp2(-8.0 * (h + 1) / heads);
    RowMatrix m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = j > i ? -1e30 : -slope * (i - j);
    out.push_back(Tensor::matrix(m));
  }
  return out;
}

Linear Linear::init(Rng& rng, int in, int out, bool trainable, bool with_bias) {
  Linear l;
  l.weight = gaussian_param(rng, {in, out}, 1.0 / std::sqrt(static_cast<double>(in)), trainable);
  if (with_bias) l.bias = constant_param({out}, 0.0, trainable);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

LayerNormParams LayerNormParams::init(int width, bool affine, bool trainable) {
  LayerNormParams p;
  if (affine) {
    p.gamma = constant_param({width}, 1.0, trainable);
    p.beta = constant_param({width}, 0.0, trainable);
  }
  return p;
}

void LayerNormParams::collect(ParamList& out, const std::string& prefix) const {
  if (gamma.defined()) out.push_back({prefix + ".gamma", gamma});
  if (beta.defined()) out.push_back({prefix + ".beta", beta});
}

MultiHeadAttention MultiHeadAttention::init(Rng& rng, int width, int heads, bool trainable) {
  if (heads <= 0 || width % heads != 0) {
    throw std::invalid_argument("attention: width " + std::to_string(width) +
                                " not divisible by heads " + std::to_string(heads));
  }
  const int dh = width / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(width));
  MultiHeadAttention a;
  for (int h = 0; h < heads; ++h) {
    a.wq.push_back(gaussian_param(rng, {width, dh}, s, trainable));
    a.wk.push_back(gaussian_param(rng, {width, dh}, s, trainable));
    a.wv.push_back(gaussian_param(rng, {width, dh}, s, trainable));
  }
  a.wo = gaussian_param(rng, {width, width}, s, trainable);
  return a;
}

Tensor MultiHeadAttention::operator()(const Tensor& x, const Tensor& memory, const Tensor& mask) const {
  if (!mask.defined()) return (*this)(x, memory, std::span<const Tensor>{});
  const std::vector<Tensor> shared(wq.size(), mask);
  return (*this)(x, memory, shared);
}

Tensor MultiHeadAttention::operator()(const Tensor& x, const Tensor& memory, std::span<const Tensor> head_masks) const {
  if (!head_masks.empty() && head_masks.size() != wq.size()) {
    throw std::invalid_argument("attention: " + std::to_string(head_masks.size()) + " masks for " +
                                std::to_string(wq.size()) + " heads");
  }
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(wq.front().dim(1)));
  std::vector<Tensor> heads;
  heads.reserve(wq.size());
  for (std::size_t h = 0; h < wq.size(); ++h) {
    Tensor q = matmul(x, wq[h]);
    Tensor k = matmul(memory, wk[h]);
    Tensor v = matmul(memory, wv[h]);
    Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dh);
    if (!head_masks.empty()) scores = add(scores, head_masks[h]);
    heads.push_back(matmul(softmax(scores, 1), v));
  }
  Tensor merged = heads.size() == 1 ? heads.front() : concat(heads, 1);
  return matmul(merged, wo);
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t h = 0; h < wq.size(); ++h) {
    const std::string p = prefix + ".head" + std::to_string(h);
    out.push_back({p + ".wq", wq[h]});
    out.push_back({p + ".wk", wk[h]});
    out.push_back({p + ".wv", wv[h]});
  }
  out.push_back({prefix + ".wo", wo});
}

FeedForward FeedForward::init(Rng& rng, int width, int hidden, bool trainable) {
  return {Linear::init(rng, width, hidden, trainable), Linear::init(rng, hidden, width, trainable)};
}

void FeedForward::collect(ParamList& out, const std::string& prefix) const {
  up.collect(out, prefix + ".up");
  down.collect(out, prefix + ".down");
}

EncoderLayer EncoderLayer::init(Rng& rng, int width, int heads, bool trainable) {
  EncoderLayer l;
  l.ln1 = LayerNormParams::init(width, trainable, trainable);
  l.ln2 = LayerNormParams::init(width, trainable, trainable);
  l.attn = MultiHeadAttention::init(rng, width, heads, trainable);
  l.ff = FeedForward::init(rng, width, 4 * width, trainable);
  return l;
}

Tensor EncoderLayer::operator()(const Tensor& x, const Tensor& mask) const {
  Tensor n1 = ln1(x);
  Tensor h = add(x, attn(n1, n1, mask));
  return add(h, ff(ln2(h)));
}

Tensor EncoderLayer::operator()(const Tensor& x, std::span<const Tensor> head_masks) const {
  Tensor n1 = ln1(x);
  Tensor h = add(x, attn(n1, n1, head_masks));
  return add(h, ff(ln2(h)));
}

void EncoderLayer::collect(ParamList& out, const std::string& prefix) const {
  ln1.collect(out, prefix + ".ln1");
  ln2.collect(out, prefix + ".ln2");
  attn.collect(out, prefix + ".attn");
  ff.collect(out, prefix + ".ff");
}

DecoderLayer DecoderLayer::init(Rng& rng, int width, int heads, bool trainable) {
  DecoderLayer l;
  l.ln1 = LayerNormParams::init(width, trainable, trainable);
  l.ln2 = LayerNormParams::init(width, trainable, trainable);
  l.ln3 = LayerNormParams::init(width, trainable, trainable);
  l.self_attn = MultiHeadAttention::init(rng, width, heads, trainable);
  l.cross_attn = MultiHeadAttention::init(rng, width, heads, trainable);
  l.ff = FeedForward::init(rng, width, 4 * width, trainable);
  return l;
}

Tensor DecoderLayer::operator()(const Tensor& x, const Tensor& memory) const {
  Tensor n1 = ln1(x);
  Tensor h = add(x, self_attn(n1, n1));
  h = add(h, cross_attn(ln2(h), memory));
  return add(h, ff(ln3(h)));
}

void DecoderLayer::collect(ParamList& out, const std::string& prefix) const {
  ln1.collect(out, prefix + ".ln1");
  ln2.collect(out, prefix + ".ln2");
  ln3.collect(out, prefix + ".ln3");
  self_attn.collect(out, prefix + ".self_attn");
  cross_attn.collect(out, prefix + ".cross_attn");
  ff.collect(out, prefix + ".ff");
}

}  // namespace gill
