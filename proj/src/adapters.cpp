// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/adapters.hpp"

#include <algorithm>
#include <cmath>

namespace gill {

std::string_view to_string(MapperVariant v) {
  switch (v) {
    case MapperVariant::Linear: return "linear";
    case MapperVariant::Mlp3: return "mlp3";
    case MapperVariant::TransformerEncoder: return "transformer_encoder";
    case MapperVariant::GillMapper: return "gill_mapper";
  }
  return "unknown";
}

MapperVariant parse_mapper_variant(std::string_view name) {
  for (auto v : {MapperVariant::Linear, MapperVariant::Mlp3, MapperVariant::TransformerEncoder,
                 MapperVariant::GillMapper}) {
    if (to_string(v) == name) return v;
  }
  throw std::invalid_argument("unknown mapper variant '" + std::string(name) + "'");
}

void AdapterConfig::validate() const {
  if (k <= 0 || p <= 0 || m <= 0 || mapper_heads <= 0 || mlp_hidden < 0) {
    throw std::invalid_argument("adapter config: sizes must be positive");
  }
  if (m % mapper_heads != 0) throw std::invalid_argument("adapter config: m must be divisible by mapper_heads");
  if (!(img_embed_std > 0)) throw std::invalid_argument("adapter config: img_embed_std must be positive");
  if (!(tau > 0)) throw std::invalid_argument("adapter config: tau must be positive");
}

namespace {

void check_img_hidden(const Tensor& h, int r, int e) {
  if (h.rank() != 2 || h.dim(0) != r || h.dim(1) != e) {
    throw ShapeError("mapper_forward: expected img hidden " + shape_str({r, e}) + ", got " + shape_str(h.shape()));
  }
}

}  // namespace

Tensor LinearMapper::forward(const Tensor& img_hidden, int L, int c) const {
  Tensor flat = reshape(img_hidden, {1, static_cast<int>(img_hidden.size())});
  return reshape(proj(flat), {L, c});
}

Tensor Mlp3Mapper::forward(const Tensor& img_hidden, int L, int c) const {
  Tensor x = reshape(img_hidden, {1, static_cast<int>(img_hidden.size())});
  x = leaky_relu(l1(x), slope);
  x = leaky_relu(l2(x), slope);
  return reshape(l3(x), {L, c});
}

void Mlp3Mapper::collect(ParamList& out, const std::string& prefix) const {
  l1.collect(out, prefix + ".l1");
  l2.collect(out, prefix + ".l2");
  l3.collect(out, prefix + ".l3");
}

Tensor EncoderOnlyMapper::forward(const Tensor& img_hidden) const {
  const int r = img_hidden.dim(0);
  const int L = queries.dim(0);
  Tensor x = concat({in_proj(img_hidden), queries}, 0);
  x = add(x, sinusoidal_positions(r + L, queries.dim(1)));
  for (const auto& layer : layers) x = layer(x);
  std::vector<int> rows(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) rows[i] = r + i;
  return out_proj(final_norm(embedding_lookup(x, rows)));
}

void EncoderOnlyMapper::collect(ParamList& out, const std::string& prefix) const {
  in_proj.collect(out, prefix + ".in_proj");
  out.push_back({prefix + ".queries", queries});
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + ".layer" + std::to_string(i));
  final_norm.collect(out, prefix + ".final_norm");
  out_proj.collect(out, prefix + ".out_proj");
}

Tensor GillMapperNet::forward(const Tensor& img_hidden) const {
  const int r = img_hidden.dim(0);
  const int m = queries.dim(1);
  Tensor mem = add(in_proj(img_hidden), sinusoidal_positions(r, m));
  for (const auto& layer : encoder) mem = layer(mem);
  mem = memory_norm(mem);
  Tensor q = add(queries, sinusoidal_positions(queries.dim(0), m));
  for (const auto& layer : decoder) q = layer(q, mem);
  return out_proj(final_norm(q));
}

void GillMapperNet::collect(ParamList& out, const std::string& prefix) const {
  in_proj.collect(out, prefix + ".in_proj");
  for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].collect(out, prefix + ".encoder" + std::to_string(i));
  memory_norm.collect(out, prefix + ".memory_norm");
  out.push_back({prefix + ".queries", queries});
  for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].collect(out, prefix + ".decoder" + std::to_string(i));
  final_norm.collect(out, prefix + ".final_norm");
  out_proj.collect(out, prefix + ".out_proj");
}

AdapterSet AdapterSet::init(const BackboneConfig& b, const AdapterConfig& cfg) {
  b.validate();
  cfg.validate();
  AdapterSet a;
  a.config = cfg;
  a.backbone = b;
  Rng rng = make_rng(cfg.seed, 100);
  a.cap = gaussian_param(rng, {b.d, cfg.k * b.e}, 1.0 / std::sqrt(static_cast<double>(b.d)), true);
  a.img_embeds = gaussian_param(rng, {b.r, b.e}, cfg.img_embed_std, true);
  a.retrieval.t2i = gaussian_param(rng, {b.e, cfg.p}, 1.0 / std::sqrt(static_cast<double>(b.e)), true);
  a.retrieval.i2t = gaussian_param(rng, {b.d, cfg.p}, 1.0 / std::sqrt(static_cast<double>(b.d)), true);
  a.retrieval.tau = std::clamp(cfg.tau, kTauMin, kTauMax);

  const int in_flat = b.r * b.e;
  const int out_flat = b.L * b.c;
  switch (cfg.mapper) {
    case MapperVariant::Linear:
      a.mapper = LinearMapper{Linear::init(rng, in_flat, out_flat, true)};
      break;
    case MapperVariant::Mlp3: {
      const int hidden = cfg.mlp_hidden > 0 ? cfg.mlp_hidden : 4 * out_flat;
      a.mapper = Mlp3Mapper{Linear::init(rng, in_flat, hidden, true), Linear::init(rng, hidden, out_flat, true),
                            Linear::init(rng, out_flat, out_flat, true), cfg.mlp_slope};
      break;
    }
    case MapperVariant::TransformerEncoder: {
      EncoderOnlyMapper enc;
      enc.in_proj = Linear::init(rng, b.e, cfg.m, true);
      enc.queries = gaussian_param(rng, {b.L, cfg.m}, 1.0, true);
      for (int i = 0; i < 4; ++i) enc.layers.push_back(EncoderLayer::init(rng, cfg.m, cfg.mapper_heads, true));
      enc.final_norm = LayerNormParams::init(cfg.m, true, true);
      enc.out_proj = Linear::init(rng, cfg.m, b.c, true);
      a.mapper = std::move(enc);
      break;
    }
    case MapperVariant::GillMapper: {
      GillMapperNet g;
      g.in_proj = Linear::init(rng, b.e, cfg.m, true);
      for (int i = 0; i < 2; ++i) g.encoder.push_back(EncoderLayer::init(rng, cfg.m, cfg.mapper_heads, true));
      g.memory_norm = LayerNormParams::init(cfg.m, true, true);
      g.queries = gaussian_param(rng, {b.L, cfg.m}, 1.0, true);
      for (int i = 0; i < 2; ++i) g.decoder.push_back(DecoderLayer::init(rng, cfg.m, cfg.mapper_heads, true));
      g.final_norm = LayerNormParams::init(cfg.m, true, true);
      g.out_proj = Linear::init(rng, cfg.m, b.c, true);
      a.mapper = std::move(g);
      break;
    }
  }
  return a;
}

ParamList AdapterSet::parameters() const {
  ParamList out;
  out.push_back({"cap", cap});
  out.push_back({"img_embeds", img_embeds});
  out.push_back({"retrieval.t2i", retrieval.t2i});
  out.push_back({"retrieval.i2t", retrieval.i2t});
  std::visit([&](const auto& m) { m.collect(out, "mapper"); }, mapper);
  return out;
}

MapperVariant AdapterSet::variant() const {
  return static_cast<MapperVariant>(mapper.index());
}

void AdapterSet::clamp_tau() { retrieval.tau = std::clamp(retrieval.tau, kTauMin, kTauMax); }

Tensor map_image_to_prefix(const Eigen::VectorXd& v, const Tensor& cap, int k) {
  if (cap.rank() != 2 || v.size() != cap.dim(0) || cap.dim(1) % k != 0) {
    throw ShapeError("map_image_to_prefix: v of width " + std::to_string(v.size()) + " vs cap " +
                     shape_str(cap.shape()) + " with k=" + std::to_string(k));
  }
  Tensor row = Tensor::matrix(v.transpose());
  return reshape(matmul(row, cap), {k, cap.dim(1) / k});
}

Tensor mapper_forward(const AdapterSet& adapters, const Tensor& img_hidden) {
  const auto& b = adapters.backbone;
  check_img_hidden(img_hidden, b.r, b.e);
  return std::visit(
      [&](const auto& m) -> Tensor {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, LinearMapper> || std::is_same_v<M, Mlp3Mapper>) {
          return m.forward(img_hidden, b.L, b.c);
        } else {
          return m.forward(img_hidden);
        }
      },
      adapters.mapper);
}

Tensor retrieval_text_embed(const Tensor& h, const RetrievalHead& head) {
  if (h.rank() != 2 || h.dim(1) != head.t2i.dim(0)) {
    throw ShapeError("retrieval_text_embed: " + shape_str(h.shape()) + " vs t2i " + shape_str(head.t2i.shape()));
  }
  return matmul(h, head.t2i);
}

Tensor retrieval_image_embed(const Tensor& v, const RetrievalHead& head) {
  if (v.rank() != 2 || v.dim(1) != head.i2t.dim(0)) {
    throw ShapeError("retrieval_image_embed: " + shape_str(v.shape()) + " vs i2t " + shape_str(head.i2t.shape()));
  }
  return matmul(v, head.i2t);
}

}  // namespace gill
