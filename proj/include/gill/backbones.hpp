// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "gill/layers.hpp"
#include "gill/tensor.hpp"

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gill {

/// Structural sizes of the frozen networks. Desk-scale defaults.
struct BackboneConfig {
  int V = 64;        // base vocabulary (text + specials)
  int r = 8;         // number of [IMG] tokens appended to the vocabulary
  int e = 32;        // LM width
  int d = 24;        // visual embedding width
  int L = 8;         // conditioning rows of the generation backbone
  int c = 16;        // conditioning width
  int n_layer = 2;
  int n_head = 4;
  int H = 8, W = 8, C = 3;
  int max_positions = 128;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;
};

/// H x W x C raster stored row-major (channel fastest).
struct Raster {
  int height = 0, width = 0, channels = 0;
  Eigen::VectorXd pixels;

  static Raster zeros(int h, int w, int c) {
    return {h, w, c, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(h) * w * c)};
  }
  double& at(int y, int x, int ch) { return pixels[(static_cast<Eigen::Index>(y) * width + x) * channels + ch]; }
  double at(int y, int x, int ch) const { return pixels[(static_cast<Eigen::Index>(y) * width + x) * channels + ch]; }
};

/// Word-level vocabulary: ids [0, V) are text and specials, [V, V+r) are [IMG1]..[IMG{r}].
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;

  Vocabulary(int base_size, int img_tokens);

  int base_size() const { return base_size_; }
  int img_tokens() const { return img_tokens_; }
  int size() const { return base_size_ + img_tokens_; }
  /// Id of [IMG{i}], 1-based.
  int img_id(int i) const;
  bool is_img(int id) const { return id >= base_size_ && id < size(); }

  /// Whitespace tokenization; unknown words map to <unk>.
  std::vector<int> encode(std::string_view text) const;
  /// Like encode() but throws on unknown words.
  std::vector<int> encode_strict(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;
  const std::string& token(int id) const;
  std::optional<int> lookup(std::string_view word) const;

 private:
  int base_size_;
  int img_tokens_;
  std::vector<std::string> tokens_;
  std::map<std::string, int, std::less<>> index_;
};

/// Embedding rows spliced into the LM input starting at `position`.
struct PrefixSlot {
  int position = 0;
  Tensor rows;  // [k x e]
};

struct LmOutput {
  Tensor hidden;  // [T x e], final layer before the output head
  Tensor logits;  // [T x (V+r)]
  /// Sequence position of each input token, in input order.
  std::vector<int> token_positions;
};

/// Decoder-only transformer with frozen weights. The [IMG] rows of the
/// embedding table are supplied by the caller (they are trainable adapters).
class CausalLM {
 public:
  CausalLM() = default;
  static CausalLM build(const BackboneConfig& cfg, Rng& rng);

  LmOutput forward(std::span<const int> tokens, std::span<const PrefixSlot> slots,
                   const Tensor& img_embeds) const;
  /// [V+r x e] embedding table with the [IMG] rows appended.
  Tensor embedding_table(const Tensor& img_embeds) const;
  void collect(ParamList& out, const std::string& prefix) const;

  const Tensor& token_embeddings() const { return tok_emb_; }
  Tensor& mutable_token_embeddings() { return tok_emb_; }

 private:
  BackboneConfig cfg_;
  Tensor tok_emb_;  // [V x e]
  std::vector<EncoderLayer> blocks_;
};

/// Linear map from a flattened raster to R^d.
class VisualEncoder {
 public:
  static VisualEncoder build(const BackboneConfig& cfg, Rng& rng);
  Eigen::VectorXd encode(const Raster& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  BackboneConfig cfg_;
  Tensor weight_;  // [H*W*C x d]
};

/// One bidirectional transformer layer over token embeddings; output is
/// padded/truncated to exactly L rows.
class TargetTextEncoder {
 public:
  static TargetTextEncoder build(const BackboneConfig& cfg, Rng& rng);
  RowMatrix encode(std::span<const int> tokens) const;
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  BackboneConfig cfg_;
  Tensor tok_emb_;  // [V x c]
  EncoderLayer layer_;
};

/// Mean-pools the conditioning rows, applies a frozen linear map and a sigmoid.
class ImageDecoder {
 public:
  static ImageDecoder build(const BackboneConfig& cfg, Rng& rng);
  Raster decode(const RowMatrix& cond) const;
  void collect(ParamList& out, const std::string& prefix) const;

 private:
  BackboneConfig cfg_;
  Tensor weight_;  // [c x H*W*C]
  Tensor bias_;
};

struct FrozenBackbones {
  BackboneConfig config;
  Vocabulary vocab{64, 8};
  CausalLM lm;
  VisualEncoder visual;
  TargetTextEncoder text_encoder;
  ImageDecoder image_decoder;

  ParamList parameters() const;
  /// SHA-256 over every frozen parameter's bytes, hex encoded.
  std::string checksum() const;

  Eigen::VectorXd encode_image(const Raster& x) const;
  RowMatrix target_encode(std::span<const int> tokens) const;
  Raster decode_image(const RowMatrix& cond) const;
};

FrozenBackbones build_frozen(const BackboneConfig& cfg);

/// Rows of `hidden` at the given strictly increasing positions.
Tensor extract_img_hidden(const Tensor& hidden, std::span<const int> positions);

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string checksum_params(const ParamList& params);

}  // namespace gill
