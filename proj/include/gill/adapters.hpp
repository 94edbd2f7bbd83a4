// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gill/backbones.hpp"
#include "gill/layers.hpp"

#include <string>
#include <string_view>
#include <variant>

namespace gill {

enum class MapperVariant { Linear, Mlp3, TransformerEncoder, GillMapper };

std::string_view to_string(MapperVariant v);
MapperVariant parse_mapper_variant(std::string_view name);

struct AdapterConfig {
  int k = 4;             // visual prefix length
  int p = 128;           // retrieval embedding width
  int m = 16;            // mapper width
  int mapper_heads = 2;
  MapperVariant mapper = MapperVariant::GillMapper;
  int mlp_hidden = 0;    // 0 selects 4*L*c
  double mlp_slope = 0.01;
  double tau = 0.07;
  double img_embed_std = 0.1;  // init scale of the [IMG] embedding rows
  std::uint64_t seed = 1;

  void validate() const;
};

inline constexpr double kTauMin = 1e-3;
inline constexpr double kTauMax = 10.0;

/// Flat [r*e] -> [L*c] affine map.
struct LinearMapper {
  Linear proj;
  Tensor forward(const Tensor& img_hidden, int L, int c) const;
  void collect(ParamList& out, const std::string& prefix) const { proj.collect(out, prefix + ".proj"); }
};

/// Three affine layers with leaky-relu between them.
struct Mlp3Mapper {
  Linear l1, l2, l3;
  double slope = 0.01;
  Tensor forward(const Tensor& img_hidden, int L, int c) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

/// One bidirectional stack over [projected img hidden ; queries]; reads out the query rows.
struct EncoderOnlyMapper {
  Linear in_proj, out_proj;
  Tensor queries;  // [L x m]
  std::vector<EncoderLayer> layers;
  LayerNormParams final_norm;
  Tensor forward(const Tensor& img_hidden) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Encoder over the r [IMG] states, decoder over L learned queries with
/// cross-attention into the encoder output.
struct GillMapperNet {
  Linear in_proj, out_proj;
  Tensor queries;  // [L x m]
  std::vector<EncoderLayer> encoder;
  std::vector<DecoderLayer> decoder;
  LayerNormParams memory_norm, final_norm;
  Tensor forward(const Tensor& img_hidden) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

using MapperNet = std::variant<LinearMapper, Mlp3Mapper, EncoderOnlyMapper, GillMapperNet>;

struct RetrievalHead {
  Tensor t2i;  // [e x p]
  Tensor i2t;  // [d x p]
  double tau = 0.07;
};

/// Every trainable parameter.
struct AdapterSet {
  AdapterConfig config;
  BackboneConfig backbone;
  Tensor cap;         // visual prefix projection [d x k*e]
  Tensor img_embeds;  // [IMG] embedding rows [r x e]
  RetrievalHead retrieval;
  MapperNet mapper;

  static AdapterSet init(const BackboneConfig& backbone, const AdapterConfig& config);
  ParamList parameters() const;
  MapperVariant variant() const;
  void clamp_tau();
};

/// v^T cap reshaped to [k x e].
Tensor map_image_to_prefix(const Eigen::VectorXd& v, const Tensor& cap, int k);
Tensor mapper_forward(const AdapterSet& adapters, const Tensor& img_hidden);
/// Rows of `h` ([n x e]) projected by head.t2i.
Tensor retrieval_text_embed(const Tensor& h, const RetrievalHead& head);
/// Rows of `v` ([n x d]) projected by head.i2t.
Tensor retrieval_image_embed(const Tensor& v, const RetrievalHead& head);

}  // namespace gill
