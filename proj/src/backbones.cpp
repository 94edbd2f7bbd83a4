// Copyright (C) 2026 The gill-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "gill/backbones.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>

namespace gill {

namespace {

// Words known to the desk-scale tokenizer, after the four specials.
const char* const kWords[] = {
    "a",      "an",     "the",    "small",  "large",    "red",    "green",  "blue",
    "yellow", "square", "circle", "triangle", "at",     "top",    "middle", "bottom",
    "left",   "center", "right",  "and",    "above",    "below",  "next",   "to",
    "of",     "on",     "is",     "there",  "picture",  "image",  "shows",  "with",
    "here",   "see",    "i",      "draw",   "me",       "show",   "this",   "it",
};

}  // namespace

void BackboneConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw std::invalid_argument(std::string("backbone config: ") + name + " must be positive");
  };
  positive(V, "V");
  positive(r, "r");
  positive(e, "e");
  positive(d, "d");
  positive(L, "L");
  positive(c, "c");
  positive(n_layer, "n_layer");
  positive(n_head, "n_head");
  positive(H, "H");
  positive(W, "W");
  positive(C, "C");
  positive(max_positions, "max_positions");
  if (e % n_head != 0) throw std::invalid_argument("backbone config: e must be divisible by n_head");
  if (c % n_head != 0) throw std::invalid_argument("backbone config: c must be divisible by n_head");
  if (V < 5) throw std::invalid_argument("backbone config: V too small for the special tokens");
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(int base_size, int img_tokens) : base_size_(base_size), img_tokens_(img_tokens) {
  if (base_size < 5 || img_tokens < 1) throw std::invalid_argument("vocabulary: bad sizes");
  tokens_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (const char* w : kWords) {
    if (static_cast<int>(tokens_.size()) >= base_size) break;
    tokens_.emplace_back(w);
  }
  while (static_cast<int>(tokens_.size()) < base_size) tokens_.push_back("<w" + std::to_string(tokens_.size()) + ">");
  for (int i = 1; i <= img_tokens; ++i) tokens_.push_back("[IMG" + std::to_string(i) + "]");
  for (int id = 0; id < static_cast<int>(tokens_.size()); ++id) index_.emplace(tokens_[id], id);
}

int Vocabulary::img_id(int i) const {
  if (i < 1 || i > img_tokens_) throw std::out_of_range("vocabulary: [IMG" + std::to_string(i) + "] does not exist");
  return base_size_ + i - 1;
}

std::optional<int> Vocabulary::lookup(std::string_view word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  std::istringstream is{std::string(text)};
  std::string w;
  while (is >> w) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) {
      return ch == '[' || ch == ']' || ch == '<' || ch == '>' ? ch : static_cast<char>(std::tolower(ch));
    });
    auto id = lookup(w);
    if (!id) {
      // [IMG] tokens keep their case.
      std::string upper = w;
      std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char ch) { return std::toupper(ch); });
      id = lookup(upper);
    }
    ids.push_back(id.value_or(kUnk));
  }
  return ids;
}

std::vector<int> Vocabulary::encode_strict(std::string_view text) const {
  std::istringstream is{std::string(text)};
  std::string w;
  std::vector<int> ids = encode(text);
  for (std::size_t i = 0; is >> w; ++i) {
    if (ids[i] == kUnk && w != "<unk>") throw std::invalid_argument("vocabulary: unknown word '" + w + "'");
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

// ---------------------------------------------------------------------------
// CausalLM

CausalLM CausalLM::build(const BackboneConfig& cfg, Rng& rng) {
  CausalLM lm;
  lm.cfg_ = cfg;
  lm.tok_emb_ = gaussian_param(rng, {cfg.V, cfg.e}, 1.0 / std::sqrt(static_cast<double>(cfg.e)), false);
  for (int i = 0; i < cfg.n_layer; ++i) lm.blocks_.push_back(EncoderLayer::init(rng, cfg.e, cfg.n_head, false));
  return lm;
}

Tensor CausalLM::embedding_table(const Tensor& img_embeds) const {
  if (img_embeds.rank() != 2 || img_embeds.dim(0) != cfg_.r || img_embeds.dim(1) != cfg_.e) {
    throw ShapeError("lm: [IMG] embeddings must be " + shape_str({cfg_.r, cfg_.e}) + ", got " +
                     shape_str(img_embeds.shape()));
  }
  return concat({tok_emb_, img_embeds}, 0);
}

LmOutput CausalLM::forward(std::span<const int> tokens, std::span<const PrefixSlot> slots,
                           const Tensor& img_embeds) const {
  const int vocab = cfg_.V + cfg_.r;
  for (int id : tokens) {
    if (id < 0 || id >= vocab) throw std::out_of_range("lm: token id " + std::to_string(id) + " >= " + std::to_string(vocab));
  }
  std::vector<const PrefixSlot*> ordered;
  for (const auto& s : slots) {
    if (!s.rows.defined() || s.rows.rank() != 2 || s.rows.dim(1) != cfg_.e) {
      throw ShapeError("lm: prefix slot rows must have width " + std::to_string(cfg_.e));
    }
    ordered.push_back(&s);
  }
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->position < b->position; });

  const Tensor table = embedding_table(img_embeds);
  std::vector<Tensor> pieces;
  LmOutput out;
  std::size_t next_token = 0;
  int pos = 0;
  auto take_tokens = [&](std::size_t count) {
    if (count == 0) return;
    std::vector<int> ids(tokens.begin() + static_cast<std::ptrdiff_t>(next_token),
                         tokens.begin() + static_cast<std::ptrdiff_t>(next_token + count));
    pieces.push_back(embedding_lookup(table, ids));
    for (std::size_t i = 0; i < count; ++i) out.token_positions.push_back(pos++);
    next_token += count;
  };
  for (const PrefixSlot* s : ordered) {
    if (s->position < pos) throw std::invalid_argument("lm: overlapping prefix slots at position " + std::to_string(s->position));
    const auto gap = static_cast<std::size_t>(s->position - pos);
    if (next_token + gap > tokens.size()) {
      throw std::invalid_argument("lm: prefix slot position " + std::to_string(s->position) + " beyond the token sequence");
    }
    take_tokens(gap);
    pieces.push_back(s->rows);
    pos += s->rows.dim(0);
  }
  take_tokens(tokens.size() - next_token);
  if (pos == 0) throw std::invalid_argument("lm: empty input");
  if (pos > cfg_.max_positions) {
    throw std::invalid_argument("lm: sequence length " + std::to_string(pos) + " exceeds context limit " +
                                std::to_string(cfg_.max_positions));
  }

  Tensor x = pieces.size() == 1 ? pieces.front() : concat(pieces, 0);
  // Position information enters only through the per-head distance penalties.
  const auto masks = causal_alibi_masks(pos, cfg_.n_head);
  for (const auto& block : blocks_) x = block(x, masks);
  out.hidden = layer_norm(x);
  out.logits = matmul(out.hidden, transpose(table));
  return out;
}

void CausalLM::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".tok_emb", tok_emb_});
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
}

// ---------------------------------------------------------------------------
// Visual encoder, target text encoder, image decoder

VisualEncoder VisualEncoder::build(const BackboneConfig& cfg, Rng& rng) {
  VisualEncoder v;
  v.cfg_ = cfg;
  const int in = cfg.H * cfg.W * cfg.C;
  v.weight_ = gaussian_param(rng, {in, cfg.d}, 1.0 / std::sqrt(static_cast<double>(in)), false);
  return v;
}

Eigen::VectorXd VisualEncoder::encode(const Raster& x) const {
  if (x.height != cfg_.H || x.width != cfg_.W || x.channels != cfg_.C) {
    throw ShapeError("encode_image: expected raster " + shape_str({cfg_.H, cfg_.W, cfg_.C}) + ", got " +
                     shape_str({x.height, x.width, x.channels}));
  }
  return weight_.mat().transpose() * x.pixels;
}

void VisualEncoder::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_});
}

TargetTextEncoder TargetTextEncoder::build(const BackboneConfig& cfg, Rng& rng) {
  TargetTextEncoder t;
  t.cfg_ = cfg;
  t.tok_emb_ = gaussian_param(rng, {cfg.V, cfg.c}, 1.0, false);
  t.layer_ = EncoderLayer::init(rng, cfg.c, cfg.n_head, false);
  return t;
}

RowMatrix TargetTextEncoder::encode(std::span<const int> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("target_encode: empty caption");
  std::vector<int> ids(static_cast<std::size_t>(cfg_.L), Vocabulary::kPad);
  for (std::size_t i = 0; i < ids.size() && i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= cfg_.V) {
      throw std::out_of_range("target_encode: token id " + std::to_string(tokens[i]) + " is not a text token");
    }
    ids[i] = tokens[i];
  }
  NoGradGuard no_grad;
  Tensor x = add(embedding_lookup(tok_emb_, ids), sinusoidal_positions(cfg_.L, cfg_.c));
  return layer_norm(layer_(x)).mat();
}

void TargetTextEncoder::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".tok_emb", tok_emb_});
  layer_.collect(out, prefix + ".layer");
}

ImageDecoder ImageDecoder::build(const BackboneConfig& cfg, Rng& rng) {
  ImageDecoder g;
  g.cfg_ = cfg;
  const int outw = cfg.H * cfg.W * cfg.C;
  g.weight_ = gaussian_param(rng, {cfg.c, outw}, 1.0 / std::sqrt(static_cast<double>(cfg.c)), false);
  g.bias_ = gaussian_param(rng, {outw}, 0.1, false);
  return g;
}

Raster ImageDecoder::decode(const RowMatrix& cond) const {
  if (cond.rows() != cfg_.L || cond.cols() != cfg_.c) {
    throw ShapeError("decode_image: expected conditioning " + shape_str({cfg_.L, cfg_.c}) + ", got " +
                     shape_str({static_cast<int>(cond.rows()), static_cast<int>(cond.cols())}));
  }
  const Eigen::RowVectorXd pooled = cond.colwise().mean();
  const Eigen::RowVectorXd pre = pooled * weight_.mat() + bias_.mat();
  Raster r = Raster::zeros(cfg_.H, cfg_.W, cfg_.C);
  for (Eigen::Index i = 0; i < pre.size(); ++i) {
    r.pixels[i] = std::clamp(1.0 / (1.0 + std::exp(-pre[i])), 0.0, 1.0);
  }
  return r;
}

void ImageDecoder::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight_});
  out.push_back({prefix + ".bias", bias_});
}

// ---------------------------------------------------------------------------
// FrozenBackbones

FrozenBackbones build_frozen(const BackboneConfig& cfg) {
  cfg.validate();
  FrozenBackbones b;
  b.config = cfg;
  b.vocab = Vocabulary(cfg.V, cfg.r);
  // One stream per network so changing one network's size leaves the others intact.
  Rng lm_rng = make_rng(cfg.seed, 1), vis_rng = make_rng(cfg.seed, 2);
  Rng text_rng = make_rng(cfg.seed, 3), dec_rng = make_rng(cfg.seed, 4);
  b.lm = CausalLM::build(cfg, lm_rng);
  b.visual = VisualEncoder::build(cfg, vis_rng);
  b.text_encoder = TargetTextEncoder::build(cfg, text_rng);
  b.image_decoder = ImageDecoder::build(cfg, dec_rng);
  return b;
}

ParamList FrozenBackbones::parameters() const {
  ParamList out;
  lm.collect(out, "lm");
  visual.collect(out, "visual");
  text_encoder.collect(out, "text_encoder");
  image_decoder.collect(out, "image_decoder");
  return out;
}

std::string FrozenBackbones::checksum() const { return checksum_params(parameters()); }

Eigen::VectorXd FrozenBackbones::encode_image(const Raster& x) const { return visual.encode(x); }
RowMatrix FrozenBackbones::target_encode(std::span<const int> tokens) const { return text_encoder.encode(tokens); }
Raster FrozenBackbones::decode_image(const RowMatrix& cond) const { return image_decoder.decode(cond); }

Tensor extract_img_hidden(const Tensor& hidden, std::span<const int> positions) {
  if (hidden.rank() != 2) throw ShapeError("extract_img_hidden: hidden must be rank 2");
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] < 0 || positions[i] >= hidden.dim(0)) {
      throw std::out_of_range("extract_img_hidden: position " + std::to_string(positions[i]) +
                              " outside " + std::to_string(hidden.dim(0)) + " rows");
    }
    if (i > 0 && positions[i] <= positions[i - 1]) {
      throw std::invalid_argument("extract_img_hidden: positions must be strictly increasing");
    }
  }
  return embedding_lookup(hidden, positions);
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

std::string checksum_params(const ParamList& params) {
  std::vector<unsigned char> bytes;
  for (const auto& p : params) {
    bytes.insert(bytes.end(), p.name.begin(), p.name.end());
    const auto* raw = reinterpret_cast<const unsigned char*>(p.tensor.data().data());
    bytes.insert(bytes.end(), raw, raw + p.tensor.size() * static_cast<Eigen::Index>(sizeof(double)));
  }
  return sha256_hex(bytes);
}

}  // namespace gill
